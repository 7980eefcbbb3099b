"""Behavior-tree execution: nodes, the scan protocol tree, tree files."""
from labscan.bt.nodes import (
    Action,
    BehaviorNode,
    Blackboard,
    Condition,
    Fallback,
    NodeKind,
    Parallel,
    Retry,
    Sequence,
    TickStatus,
    TreeError,
    goal_action,
    tick,
    validate_tree,
)
from labscan.bt.scan_tree import (
    PENDING_KEY,
    RETRY_KEY,
    RuntimeClient,
    ScanBindings,
    build_scan_tree,
)
from labscan.bt.treefile import load_tree

__all__ = [
    "Action",
    "BehaviorNode",
    "Blackboard",
    "Condition",
    "Fallback",
    "NodeKind",
    "Parallel",
    "Retry",
    "Sequence",
    "TickStatus",
    "TreeError",
    "goal_action",
    "tick",
    "validate_tree",
    "PENDING_KEY",
    "RETRY_KEY",
    "RuntimeClient",
    "ScanBindings",
    "build_scan_tree",
    "load_tree",
]
