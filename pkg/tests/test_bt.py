"""Behavior-tree engine: tick semantics, retry backoff, the scan tree.

Composite semantics are checked exhaustively against an independent
table oracle over every child-status combination.  The scan tree runs
against a scripted goal client (no clock, no devices) for the ordering
and failure-injection properties, and once against the real simulators
on the virtual clock.
"""
import itertools
import random
from collections import namedtuple
from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labscan.bt import (
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
    build_scan_tree,
    goal_action,
    load_tree,
    tick,
    validate_tree,
)
from labscan.bt import PENDING_KEY, RETRY_KEY, RuntimeClient, ScanBindings

S, F, R = TickStatus.SUCCESS, TickStatus.FAILURE, TickStatus.RUNNING


class Stub(BehaviorNode):
    """Leaf that always reports a fixed status and counts its ticks."""

    kind = NodeKind.ACTION

    def __init__(self, status, name="stub"):
        super().__init__(name)
        self.status = status
        self.ticks = 0
        self.resets = 0

    def tick(self, bb):
        self.ticks += 1
        return self.status

    def reset(self):
        self.resets += 1


def table_oracle(kind, statuses):
    if kind is NodeKind.SEQUENCE:
        return next((s for s in statuses if s is not S), S)
    if kind is NodeKind.FALLBACK:
        return next((s for s in statuses if s is not F), F)
    if kind is NodeKind.PARALLEL:
        if any(s is F for s in statuses):
            return F
        return S if all(s is S for s in statuses) else R
    raise AssertionError(kind)


_CASES = [(cls, combo)
          for cls in (Sequence, Fallback, Parallel)
          for n in (2, 3)
          for combo in itertools.product((S, F, R), repeat=n)]


@pytest.mark.parametrize("cls,combo", _CASES)
def test_composite_matches_table_oracle(cls, combo):
    children = [Stub(s, name=f"c{i}") for i, s in enumerate(combo)]
    node = cls("node", children)
    assert tick(node, Blackboard()) is table_oracle(node.kind, combo)


@pytest.mark.parametrize("cls,combo", _CASES)
def test_composite_short_circuit_and_full_tick(cls, combo):
    children = [Stub(s, name=f"c{i}") for i, s in enumerate(combo)]
    node = cls("node", children)
    tick(node, Blackboard())
    if cls is Parallel:
        assert all(c.ticks == 1 for c in children)
        return
    stop = S if cls is Sequence else F
    cut = next((i for i, s in enumerate(combo) if s is not stop), len(combo))
    for i, child in enumerate(children):
        assert child.ticks == (1 if i <= cut else 0)


@pytest.mark.parametrize("cls", [Sequence, Fallback, Parallel])
def test_composite_resets_children_after_terminal(cls):
    children = [Stub(S, name="a"), Stub(S, name="b")]
    node = cls("node", children)
    assert tick(node, Blackboard()) is S
    assert all(c.resets == 1 for c in children)
    running = cls("node2", [Stub(R, name="r"), Stub(S, name="s")])
    tick(running, Blackboard())
    assert running.children[0].resets == 0


# ----------------------------------------------------------- action leaves


class FakeClient:
    """Scripted goal client: plan(device, action) -> list of poll states."""

    TERMINALS = {"SUCCEEDED", "FAILED", "REJECTED", "CANCELED"}

    def __init__(self, plan=None):
        self.plan = plan or (lambda device, action: ["SUCCEEDED"])
        self.goals = {}
        self.log = []

    def submit(self, device, action, params):
        gid = f"fg{len(self.goals):04d}"
        self.goals[gid] = {"device": device, "action": action,
                           "params": dict(params), "state": "PENDING",
                           "script": list(self.plan(device, action))}
        self.log.append(("submit", gid, device, action))
        return gid

    def poll(self, gid):
        goal = self.goals[gid]
        if goal["script"]:
            goal["state"] = goal["script"].pop(0)
            if goal["state"] in self.TERMINALS:
                self.log.append(("terminal", gid))
        return goal["state"]

    def result(self, gid):
        return {"goal_id": gid}

    def has_action(self, device, action):
        return (device, action) in {("gantry", "move"),
                                    ("spectrometer", "fire")}

    def submits(self, action=None):
        return [e for e in self.log
                if e[0] == "submit" and (action is None or e[3] == action)]


def test_action_dispatches_once_and_latches():
    client = FakeClient(lambda d, a: ["RUNNING", "RUNNING", "SUCCEEDED"])
    leaf = goal_action("fire", client, "spectrometer", "fire", {},
                       result_key="out")
    bb = Blackboard()
    assert [leaf.tick(bb) for _ in range(3)] == [R, R, S]
    assert len(client.submits()) == 1
    assert bb["out"] == {"goal_id": "fg0000"}
    # latched: no further polls once terminal
    before = len(client.goals["fg0000"]["script"])
    assert leaf.tick(bb) is S
    assert len(client.goals["fg0000"]["script"]) == before
    leaf.reset()
    assert leaf.tick(bb) is R
    assert len(client.submits()) == 2


@pytest.mark.parametrize("state,expected", [
    ("SUCCEEDED", S), ("FAILED", F), ("REJECTED", F), ("CANCELED", F)])
def test_goal_terminal_states_map_to_tick_status(state, expected):
    client = FakeClient(lambda d, a: [state])
    leaf = goal_action("x", client, "gantry", "move", {"x": 1.0})
    assert leaf.tick(Blackboard()) is expected


def test_local_action_and_exception_to_failure():
    done = []
    ok = Action("note", lambda bb: done.append(bb["tag"]))
    bb = Blackboard(tag="hello")
    assert ok.tick(bb) is S
    assert done == ["hello"]

    def boom(bb):
        raise RuntimeError("disk full")

    bad = Action("boom", boom)
    assert bad.tick(bb) is F
    assert bad.tick(bb) is F   # latched, not re-run


def test_condition_is_stateless_and_instant():
    calls = []
    node = Condition("ready", lambda bb: calls.append(1) or bb["flag"])
    bb = Blackboard(flag=False)
    assert node.tick(bb) is F
    bb["flag"] = True
    assert node.tick(bb) is S
    assert len(calls) == 2


# ------------------------------------------------------------------ retry


def test_retry_backs_off_exponentially_with_cap():
    clock = [0.0]
    node = Retry("r", Stub(F, name="fails"), now=lambda: clock[0],
                 counter_key="n_retries")
    bb = Blackboard()
    delays = []
    for _ in range(8):
        assert node.tick(bb) is R
        delays.append(node._resume_at - clock[0])
        clock[0] = node._resume_at
    assert delays == [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 30.0, 30.0]
    assert bb["n_retries"] == 8


def test_retry_gates_child_until_backoff_expires():
    clock = [0.0]
    calls = []

    def step(bb):
        calls.append(1)
        if len(calls) <= 2:
            raise RuntimeError("flaky")

    node = Retry("r", Action("flaky", step), now=lambda: clock[0])
    bb = Blackboard()
    assert node.tick(bb) is R and len(calls) == 1
    assert node.tick(bb) is R and len(calls) == 1   # gated, child not run
    clock[0] = 0.5
    assert node.tick(bb) is R and len(calls) == 2   # second failure
    clock[0] = 1.4
    assert node.tick(bb) is R and len(calls) == 2   # doubled delay holds
    clock[0] = 1.5
    assert node.tick(bb) is S and len(calls) == 3


def test_retry_success_resets_failure_streak():
    clock = [0.0]
    script = [F, S, F]
    child = Stub(F, name="scripted")
    node = Retry("r", child, now=lambda: clock[0])
    bb = Blackboard()

    child.status = script[0]
    assert node.tick(bb) is R
    first_delay = node._resume_at - clock[0]
    clock[0] = node._resume_at
    child.status = script[1]
    assert node.tick(bb) is S
    child.status = script[2]
    assert node.tick(bb) is R
    assert node._resume_at - clock[0] == first_delay


# ------------------------------------------------------------- validation


def test_composites_require_children():
    with pytest.raises(TreeError):
        Sequence("empty", [])
    with pytest.raises(TreeError):
        Fallback("empty", [])


def test_validate_rejects_mutated_and_aliased_trees():
    node = Sequence("s", [Stub(S)])
    node.children.clear()
    with pytest.raises(TreeError):
        tick(node, Blackboard())

    shared = Stub(S, name="shared")
    with pytest.raises(TreeError, match="twice"):
        validate_tree(Sequence("s", [shared, shared]))

    leaf = Stub(S, name="leaf")
    leaf.children.append(Stub(S))
    with pytest.raises(TreeError, match="leaf"):
        validate_tree(leaf)


# --------------------------------------------------------------- treefile


DEMO_TREE = """\
# warm-up before a scan
fallback root
  condition ready is_ready
  sequence warmup
    retry park
      action park gantry.move x=0.0 y=0.0 z=$travel_z
    action fire spectrometer.fire
    action note @record_done
"""


def test_treefile_parses_and_runs():
    client = FakeClient()
    done = []
    root = load_tree(DEMO_TREE, client=client,
                     predicates={"is_ready": lambda bb: bb["ready"]},
                     actions={"record_done": lambda bb: done.append(1)})
    assert root.kind is NodeKind.FALLBACK
    assert [c.kind for c in root.children] == [NodeKind.CONDITION,
                                               NodeKind.SEQUENCE]
    bb = Blackboard(ready=False, travel_z=7.5)
    assert tick(root, bb) is S
    gid, device, action = client.submits("move")[0][1:]
    assert (device, action) == ("gantry", "move")
    assert client.goals[gid]["params"] == {"x": 0.0, "y": 0.0, "z": 7.5}
    assert done == [1]
    bb["ready"] = True
    tick(root, bb)
    assert len(client.submits("move")) == 1   # condition short-circuits


def test_treefile_fixture_loads():
    from pathlib import Path
    text = (Path(__file__).resolve().parent.parent / "fixtures" / "trees"
            / "warmup.tree").read_text()
    root = load_tree(text, client=FakeClient(),
                     actions={"record_done": lambda bb: None})
    validate_tree(root)
    assert root.kind is NodeKind.SEQUENCE


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("  sequence s\n", "line 1"),
    ("sequence a\n  action x @f\nsequence b\n", "line 3: only one root"),
    ("sequence a\n   action x @f\n", "line 2"),
    ("sequence a\n\taction x @f\n", "line 2"),
    ("sequence a\n    action x @f\n", "line 2: indent jumps"),
    ("widget a\n", "unknown node kind"),
    ("sequence a\n  condition c no_such\n", "unknown predicate"),
    ("sequence a\n  action x @no_such\n", "unknown local action"),
    ("sequence a\n  action x gantry.move\n    action y @f\n", "leaf"),
    ("sequence a\n  retry r\n", "exactly one child"),
    ("sequence a\n  action x gantry.move kv\n", "key=value"),
    ("sequence a\n  action x gantrymove\n", "device.action"),
    ("sequence a\n", "line 1"),
])
def test_treefile_rejects_malformed_input(text, match):
    with pytest.raises(TreeError, match=match):
        load_tree(text, client=FakeClient(),
                  actions={"f": lambda bb: None},
                  predicates={})


def test_treefile_device_action_needs_client():
    with pytest.raises(TreeError, match="goal client"):
        load_tree("action x gantry.move\n")


# -------------------------------------------------------------- scan tree


Pt = namedtuple("Pt", "index x y")


def small_grid(nx=2, ny=2, pitch=1.0):
    points = [Pt(iy * nx + ix, ix * pitch, iy * pitch)
              for iy in range(ny) for ix in range(nx)]
    return SimpleNamespace(points=points, z=0.0, safe_z=5.0)


def make_bindings(client, clock):
    exports, summaries, finished = [], [], []

    def export(bb):
        exports.append(bb[PENDING_KEY][0].index)

    def analyze(bb):
        summaries.append(bb[PENDING_KEY][0].index)

    def finish(bb):
        finished.append(bb[PENDING_KEY][0].index)

    bindings = ScanBindings(client=client, export=export, analyze=analyze,
                            finish_point=finish, now=lambda: clock[0])
    return bindings, exports, summaries, finished


def drive(root, bb, clock, max_ticks=100_000):
    for _ in range(max_ticks):
        status = tick(root, bb)
        if status is S and not bb[PENDING_KEY]:
            return status
        clock[0] += 0.1
    raise AssertionError("scan tree did not finish")


def test_scan_tree_visits_points_in_order():
    grid = small_grid()
    client = FakeClient()
    clock = [0.0]
    bindings, exports, summaries, finished = make_bindings(client, clock)
    root = build_scan_tree(grid, bindings)
    bb = Blackboard({PENDING_KEY: list(grid.points)})
    assert drive(root, bb, clock) is S
    assert finished == [0, 1, 2, 3]
    assert exports == summaries == finished
    moves = [e for e in client.submits("move")]
    assert len(moves) == 12 and len(client.submits("fire")) == 4
    # per point: up at previous xy, travel at safe height, descend, fire
    first = [client.goals[e[1]]["params"] for e in moves[:3]]
    assert first[0] == {"x": 0.0, "y": 0.0, "z": 5.0}
    assert first[1] == {"x": 0.0, "y": 0.0, "z": 5.0}
    assert first[2] == {"x": 0.0, "y": 0.0, "z": 0.0}
    second = [client.goals[e[1]]["params"] for e in moves[3:6]]
    assert second[0] == {"x": 0.0, "y": 0.0, "z": 5.0}
    assert second[1] == {"x": 1.0, "y": 0.0, "z": 5.0}
    assert second[2] == {"x": 1.0, "y": 0.0, "z": 0.0}
    assert bb.get(RETRY_KEY, 0) == 0


def test_scan_tree_empty_grid_succeeds_without_goals():
    grid = SimpleNamespace(points=[], z=0.0, safe_z=5.0)
    client = FakeClient()
    bindings, *_ = make_bindings(client, [0.0])
    root = build_scan_tree(grid, bindings)
    bb = Blackboard({PENDING_KEY: []})
    assert tick(root, bb) is S
    assert client.log == []


def test_scan_tree_missing_bindings_rejected():
    grid = small_grid()
    client = FakeClient()
    bindings, *_ = make_bindings(client, [0.0])
    bindings.spectrometer_id = "laser"
    with pytest.raises(TreeError, match="laser.fire"):
        build_scan_tree(grid, bindings)
    with pytest.raises(TreeError, match="export"):
        build_scan_tree(small_grid(), ScanBindings(client=client))
    with pytest.raises(TreeError, match="safe height"):
        build_scan_tree(small_grid(), make_bindings(client, [0.0])[0],
                        safe_z=-1.0)


def test_fire_never_dispatched_while_a_move_is_unresolved():
    # moves stay RUNNING for two polls so a premature fire would overlap
    client = FakeClient(lambda d, a: ["RUNNING", "RUNNING", "SUCCEEDED"])
    clock = [0.0]
    bindings, *_ = make_bindings(client, clock)
    root = build_scan_tree(small_grid(), bindings)
    bb = Blackboard({PENDING_KEY: list(small_grid().points)})
    drive(root, bb, clock)
    live_moves = set()
    for entry in client.log:
        if entry[0] == "submit":
            _, gid, _, action = entry
            if action == "fire":
                assert not live_moves, "fire overlapped a move"
            if action == "move":
                live_moves.add(gid)
        else:
            live_moves.discard(entry[1])


def test_single_fire_failure_is_retried_in_place():
    fired = []

    def plan(device, action):
        if action == "fire":
            fired.append(1)
            if len(fired) == 2:   # second point's first fire attempt
                return ["FAILED"]
        return ["SUCCEEDED"]

    client = FakeClient(plan)
    clock = [0.0]
    bindings, exports, _, finished = make_bindings(client, clock)
    root = build_scan_tree(small_grid(), bindings)
    bb = Blackboard({PENDING_KEY: list(small_grid().points)})
    drive(root, bb, clock)
    assert finished == [0, 1, 2, 3]          # order preserved
    assert len(client.submits("fire")) == 5  # one extra dispatch
    assert bb[RETRY_KEY] == 1
    # the failure did not force the moves to re-run
    assert len(client.submits("move")) == 12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_injected_failures_still_yield_one_record_per_point(seed):
    rng = random.Random(seed)

    def plan(device, action):
        return ["FAILED"] if rng.random() < 0.2 else ["SUCCEEDED"]

    client = FakeClient(plan)
    clock = [0.0]
    exports, finished = [], []

    def export(bb):
        if rng.random() < 0.2:
            raise IOError("transient")
        exports.append(bb[PENDING_KEY][0].index)

    bindings = ScanBindings(
        client=client, export=export,
        analyze=lambda bb: None,
        finish_point=lambda bb: finished.append(bb[PENDING_KEY][0].index),
        now=lambda: clock[0])
    grid = small_grid(3, 3)
    root = build_scan_tree(grid, bindings)
    bb = Blackboard({PENDING_KEY: list(grid.points)})
    drive(root, bb, clock)

    assert finished == [p.index for p in grid.points]
    succeeded_fires = [g for g in client.goals.values()
                       if g["action"] == "fire" and g["state"] == "SUCCEEDED"]
    assert len(succeeded_fires) == len(grid.points)
    assert exports.count(exports[0]) >= 1
    assert sorted(set(exports)) == [p.index for p in grid.points]


def test_scan_tree_on_simulated_devices():
    from labscan.clock import SimClock
    from labscan.devices import Phantom, Spectrum
    from labscan.runtime import DeviceRuntime, attach_standard_devices
    from pathlib import Path

    phantom = Phantom.load(Path(__file__).resolve().parent.parent
                           / "fixtures" / "phantom_demo.txt")
    clock = SimClock()
    rt = DeviceRuntime(clock)
    attach_standard_devices(rt, phantom, seed=3)
    client = RuntimeClient(rt)
    spectra = []
    finished = []
    bindings = ScanBindings(
        client=client,
        export=lambda bb: spectra.append(bb["fire"]["spectrum"]),
        analyze=lambda bb: None,
        finish_point=lambda bb: finished.append(bb[PENDING_KEY][0]),
        now=clock.now)
    grid = small_grid(2, 2, pitch=0.5)
    root = build_scan_tree(grid, bindings, safe_z=3.0)
    bb = Blackboard({PENDING_KEY: list(grid.points)})

    actor = clock.register("bt-exec")
    try:
        for _ in range(50_000):
            status = tick(root, bb)
            if status is S and not bb[PENDING_KEY]:
                break
            clock.sleep(actor, 0.1)
        else:
            raise AssertionError("scan did not finish")
    finally:
        clock.unregister(actor)
    rt.shutdown()

    assert [p.index for p in finished] == [0, 1, 2, 3]
    assert len(spectra) == 4
    assert all(isinstance(s, Spectrum) for s in spectra)
    assert all(len(s.intensity) == 22800 for s in spectra)
    assert bb["scan_at"] == (0.5, 0.5)
