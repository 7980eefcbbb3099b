"""Wire message schemas and the text-frame codec.

One message per UTF-8 text frame.  Frames are canonical JSON objects with
top-level keys ``layer``, ``kind``, ``seq``, ``payload`` (sorted keys, no
extra whitespace), so identical messages always encode to identical bytes.
The codec is transport-agnostic: anything that can carry text frames in
order (WebSocket, a pipe, a file of lines) can carry the protocol.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class ProtocolError(Exception):
    """Base for all protocol-level failures."""


class EncodeError(ProtocolError):
    pass


class DecodeError(ProtocolError):
    """Malformed frame; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(ProtocolError):
    """Structurally valid frame violating a message schema; names the field."""

    def __init__(self, field_name: str, problem: str):
        super().__init__(f"field {field_name!r}: {problem}")
        self.field_name = field_name


class Layer(str, Enum):
    STREAM = "STREAM"
    ACTION = "ACTION"


class MessageKind(str, Enum):
    SUBMIT = "SUBMIT"
    CANCEL = "CANCEL"
    STATUS_QUERY = "STATUS_QUERY"
    STATUS_EVENT = "STATUS_EVENT"
    FEEDBACK_EVENT = "FEEDBACK_EVENT"
    RESULT_EVENT = "RESULT_EVENT"
    ERROR = "ERROR"


@dataclass(frozen=True)
class WireMessage:
    layer: Layer
    kind: MessageKind
    seq: int
    payload: dict

    def __post_init__(self) -> None:
        if not isinstance(self.seq, int) or isinstance(self.seq, bool):
            raise SchemaError("seq", "must be an integer")
        if self.seq < 1:
            raise SchemaError("seq", "must be >= 1")


# Per-kind payload schemas: field -> (allowed types, required).  dict/list
# values are checked recursively for JSON-compatibility at encode time.
_STR = (str,)
_DICT = (dict,)
_OPT_STR = (str, type(None))
_OPT_DICT = (dict, type(None))

_PAYLOAD_SCHEMAS: dict[MessageKind, dict[str, tuple[tuple, bool]]] = {
    MessageKind.SUBMIT: {
        "device_id": (_STR, True),
        "action": (_STR, True),
        "params": (_DICT, True),
        "goal_id": (_OPT_STR, False),
    },
    MessageKind.CANCEL: {
        "goal_id": (_STR, True),
    },
    MessageKind.STATUS_QUERY: {
        "scope": (_STR, True),
        "goal_id": (_OPT_STR, False),
    },
    MessageKind.STATUS_EVENT: {
        "scope": (_STR, True),
        "goal_id": (_OPT_STR, False),
        "state": (_OPT_STR, False),
        "feedback": (_OPT_DICT, False),
        "result": (_OPT_DICT, False),
        "device_id": (_OPT_STR, False),
        "snapshot": (_OPT_DICT, False),
    },
    MessageKind.FEEDBACK_EVENT: {
        "goal_id": (_STR, True),
        "feedback": (_DICT, True),
    },
    MessageKind.RESULT_EVENT: {
        "goal_id": (_STR, True),
        "state": (_STR, True),
        "result": (_DICT, True),
    },
    MessageKind.ERROR: {
        "code": (_STR, True),
        "message": (_STR, True),
        "ref_seq": ((int, type(None)), False),
        "goal_id": (_OPT_STR, False),
    },
}

_QUERY_SCOPES = ("goal", "device")


def _check_json_value(path: str, value: Any) -> None:
    if value is None or isinstance(value, (str, bool)):
        return
    if isinstance(value, (int, float)):
        return
    if isinstance(value, list):
        for i, item in enumerate(value):
            _check_json_value(f"{path}[{i}]", item)
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise SchemaError(path, f"non-string key {key!r}")
            _check_json_value(f"{path}.{key}", item)
        return
    raise SchemaError(path, f"value of type {type(value).__name__} is not JSON-representable")


def validate_payload(kind: MessageKind, payload: dict) -> None:
    """Raise SchemaError naming the offending field if payload is invalid."""
    if not isinstance(payload, dict):
        raise SchemaError("payload", "must be an object")
    schema = _PAYLOAD_SCHEMAS[kind]
    for name, (types, required) in schema.items():
        if name not in payload:
            if required:
                raise SchemaError(f"payload.{name}", "missing required field")
            continue
        value = payload[name]
        if not isinstance(value, types) or (isinstance(value, bool) and bool not in types):
            raise SchemaError(
                f"payload.{name}",
                f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}",
            )
    for name in payload:
        if name not in schema:
            raise SchemaError(f"payload.{name}", "unknown field")
        _check_json_value(f"payload.{name}", payload[name])
    if kind is MessageKind.STATUS_QUERY:
        scope = payload["scope"]
        if scope not in _QUERY_SCOPES:
            raise SchemaError("payload.scope", f"must be one of {_QUERY_SCOPES}")
        if scope == "goal" and not payload.get("goal_id"):
            raise SchemaError("payload.goal_id", "required when scope is 'goal'")
    if kind is MessageKind.STATUS_EVENT and payload["scope"] not in _QUERY_SCOPES:
        raise SchemaError("payload.scope", f"must be one of {_QUERY_SCOPES}")


def encode_message(msg: WireMessage) -> str:
    """Serialize to one canonical text frame; inverse of decode_message."""
    if not isinstance(msg.layer, Layer):
        raise EncodeError(f"field 'layer': unknown layer {msg.layer!r}")
    if not isinstance(msg.kind, MessageKind):
        raise EncodeError(f"field 'kind': unknown kind {msg.kind!r}")
    try:
        validate_payload(msg.kind, msg.payload)
    except SchemaError as exc:
        raise EncodeError(str(exc)) from exc
    body = {
        "layer": msg.layer.value,
        "kind": msg.kind.value,
        "seq": msg.seq,
        "payload": msg.payload,
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def decode_message(frame: str) -> WireMessage:
    """Parse and validate one text frame.  Never raises anything but
    DecodeError/SchemaError, no matter the bytes."""
    if isinstance(frame, bytes):
        try:
            frame = frame.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("frame is not valid UTF-8", exc.start) from exc
    if not isinstance(frame, str):
        raise DecodeError(f"frame must be text, got {type(frame).__name__}")
    if not frame.strip():
        raise DecodeError("empty frame")
    try:
        body = json.loads(frame)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON: {exc.msg}", exc.pos) from exc
    if not isinstance(body, dict):
        raise SchemaError("<root>", "frame must be a JSON object")
    for key in ("layer", "kind", "seq", "payload"):
        if key not in body:
            raise SchemaError(key, "missing required field")
    for key in body:
        if key not in ("layer", "kind", "seq", "payload"):
            raise SchemaError(key, "unknown top-level field")
    try:
        layer = Layer(body["layer"])
    except ValueError:
        raise SchemaError("layer", f"unknown layer {body['layer']!r}") from None
    try:
        kind = MessageKind(body["kind"])
    except ValueError:
        raise SchemaError("kind", f"unknown kind {body['kind']!r}") from None
    seq = body["seq"]
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
        raise SchemaError("seq", "must be an integer >= 1")
    validate_payload(kind, body["payload"])
    return WireMessage(layer=layer, kind=kind, seq=seq, payload=body["payload"])


# Action parameter declarations -------------------------------------------

_PARAM_TYPES = {
    "float": (int, float),
    "int": (int,),
    "str": (str,),
    "bool": (bool,),
    "vec3": (list,),
}


@dataclass(frozen=True)
class ParamSpec:
    """One named action parameter with a semantic type."""

    name: str
    type: str = "float"
    required: bool = True
    default: Any = None

    def __post_init__(self) -> None:
        if self.type not in _PARAM_TYPES:
            raise ValueError(f"unknown param type {self.type!r} for {self.name!r}")


@dataclass(frozen=True)
class ActionSpec:
    """A device action and its parameter schema."""

    device_id: str
    action_name: str
    params: tuple[ParamSpec, ...] = ()
    description: str = ""

    def to_public(self) -> dict:
        return {
            "action": self.action_name,
            "description": self.description,
            "params": [
                {"name": p.name, "type": p.type, "required": p.required, "default": p.default}
                for p in self.params
            ],
        }


def validate_params(spec: ActionSpec, params: dict) -> dict:
    """Check params against spec; returns params with defaults filled in.

    Raises SchemaError naming the offending parameter.
    """
    if not isinstance(params, dict):
        raise SchemaError("params", "must be an object")
    known = {p.name: p for p in spec.params}
    for name in params:
        if name not in known:
            raise SchemaError(f"params.{name}", f"unknown parameter for {spec.action_name!r}")
    out = dict(params)
    for p in spec.params:
        if p.name not in out:
            if p.required:
                raise SchemaError(f"params.{p.name}", "missing required parameter")
            out[p.name] = p.default
            continue
        value = out[p.name]
        allowed = _PARAM_TYPES[p.type]
        if isinstance(value, bool) and p.type != "bool":
            raise SchemaError(f"params.{p.name}", f"expected {p.type}, got bool")
        if not isinstance(value, allowed):
            raise SchemaError(
                f"params.{p.name}", f"expected {p.type}, got {type(value).__name__}"
            )
        if p.type == "vec3":
            if len(value) != 3 or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
            ):
                raise SchemaError(f"params.{p.name}", "expected a list of 3 numbers")
    return out


@dataclass
class ActionGoal:
    """One goal flowing through the runtime; ids are unique per session."""

    goal_id: str
    device_id: str
    action_name: str
    params: dict = field(default_factory=dict)
    submitted_at: float = 0.0
