"""Two-layer wire protocol: message codec and the goal lifecycle machine."""
from labscan.protocol.lifecycle import (
    GoalEvent,
    GoalState,
    GoalStatus,
    TERMINAL_STATES,
    TransitionError,
    goal_transition,
    is_terminal,
)
from labscan.protocol.messages import (
    ActionSpec,
    ActionGoal,
    DecodeError,
    EncodeError,
    Layer,
    MessageKind,
    ParamSpec,
    ProtocolError,
    SchemaError,
    WireMessage,
    decode_message,
    encode_message,
    validate_params,
)

__all__ = [
    "ActionGoal",
    "ActionSpec",
    "DecodeError",
    "EncodeError",
    "GoalEvent",
    "GoalState",
    "GoalStatus",
    "Layer",
    "MessageKind",
    "ParamSpec",
    "ProtocolError",
    "SchemaError",
    "TERMINAL_STATES",
    "TransitionError",
    "WireMessage",
    "decode_message",
    "encode_message",
    "goal_transition",
    "is_terminal",
    "validate_params",
]
