"""Declarative tree files: protocols as data.

One node per line, indented two spaces per level:

    fallback root
      condition done no_points_left
      sequence warmup
        retry fire_until_ok
          action fire spectrometer.fire
        action note @log_done

Leaf bindings: ``device.action [key=value ...]`` dispatches a goal
(values parse as numbers, true/false, ``$key`` blackboard lookups, or
bare strings); ``@name`` runs a registered local step; conditions name a
registered predicate.  Unknown names and structural mistakes raise
TreeError with the line number.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

from labscan.bt.nodes import (
    Action,
    BehaviorNode,
    Condition,
    Fallback,
    Parallel,
    Retry,
    Sequence,
    TreeError,
    goal_action,
    validate_tree,
)

INDENT = 2

_COMPOSITES = {"sequence": Sequence, "fallback": Fallback,
               "parallel": Parallel}


@dataclass(frozen=True)
class _BbRef:
    key: str


def _parse_value(token: str):
    if token.startswith("$"):
        return _BbRef(token[1:])
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _params_fn(literal: dict):
    refs = {k: v for k, v in literal.items() if isinstance(v, _BbRef)}
    if not refs:
        return dict(literal)

    def resolve(bb):
        out = dict(literal)
        for key, ref in refs.items():
            out[key] = bb[ref.key]
        return out
    return resolve


def _parse_lines(text: str) -> list[tuple[int, int, list[str]]]:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip(" ")
        if stripped[0] == "\t" or "\t" in line[:len(line) - len(stripped)]:
            raise TreeError(f"line {lineno}: indent with spaces, not tabs")
        indent = len(line) - len(stripped)
        if indent % INDENT:
            raise TreeError(f"line {lineno}: indent must be a multiple "
                            f"of {INDENT} spaces")
        entries.append((lineno, indent // INDENT, stripped.split()))
    return entries


def load_tree(text: str, client=None, predicates=None,
              actions=None, now=None) -> BehaviorNode:
    """Parse a tree file into nodes and validate the result."""
    predicates = predicates or {}
    actions = actions or {}
    now = now or time.monotonic
    entries = _parse_lines(text)
    if not entries:
        raise TreeError("empty tree file")
    if entries[0][1] != 0:
        raise TreeError(f"line {entries[0][0]}: first node must not "
                        "be indented")

    pos = 0

    def build(depth: int) -> BehaviorNode:
        nonlocal pos
        lineno, _, tokens = entries[pos]
        pos += 1
        children = []
        while pos < len(entries) and entries[pos][1] > depth:
            if entries[pos][1] != depth + 1:
                raise TreeError(f"line {entries[pos][0]}: indent jumps "
                                "more than one level")
            children.append(build(depth + 1))
        return _make_node(tokens, lineno, children, client, predicates,
                          actions, now)

    root = build(0)
    if pos != len(entries):
        raise TreeError(f"line {entries[pos][0]}: only one root allowed")
    validate_tree(root)
    return root


def _make_node(tokens, lineno, children, client, predicates, actions, now):
    kind, rest = tokens[0], tokens[1:]
    if kind in _COMPOSITES:
        if len(rest) != 1:
            raise TreeError(f"line {lineno}: {kind} takes just a name")
        try:
            return _COMPOSITES[kind](rest[0], children)
        except TreeError as exc:
            raise TreeError(f"line {lineno}: {exc}") from None
    if kind == "retry":
        if len(rest) != 1:
            raise TreeError(f"line {lineno}: retry takes just a name")
        if len(children) != 1:
            raise TreeError(f"line {lineno}: retry {rest[0]!r} needs "
                            "exactly one child")
        return Retry(rest[0], children[0], now=now)
    if children:
        raise TreeError(f"line {lineno}: {kind} {rest[:1]} is a leaf "
                        "and takes no children")
    if kind == "condition":
        if len(rest) != 2:
            raise TreeError(f"line {lineno}: condition takes a name and "
                            "a predicate")
        name, pred = rest
        if pred not in predicates:
            raise TreeError(f"line {lineno}: unknown predicate {pred!r}")
        return Condition(name, predicates[pred])
    if kind == "action":
        if len(rest) < 2:
            raise TreeError(f"line {lineno}: action takes a name and "
                            "a binding")
        name, binding, *params = rest
        if binding.startswith("@"):
            if params:
                raise TreeError(f"line {lineno}: local actions take "
                                "no parameters")
            fn = actions.get(binding[1:])
            if fn is None:
                raise TreeError(f"line {lineno}: unknown local action "
                                f"{binding!r}")
            return Action(name, fn)
        if "." not in binding:
            raise TreeError(f"line {lineno}: action binding must be "
                            "device.action or @name")
        if client is None:
            raise TreeError(f"line {lineno}: device action {binding!r} "
                            "needs a goal client")
        device_id, action = binding.split(".", 1)
        literal = {}
        for param in params:
            if "=" not in param:
                raise TreeError(f"line {lineno}: parameter {param!r} "
                                "must be key=value")
            key, value = param.split("=", 1)
            literal[key] = _parse_value(value)
        return goal_action(name, client, device_id, action,
                           _params_fn(literal))
    raise TreeError(f"line {lineno}: unknown node kind {kind!r}")
