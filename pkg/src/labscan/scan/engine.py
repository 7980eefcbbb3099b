"""Scan execution: drives the protocol tree, persists one record per point.

``run_scan`` owns the outer loop: it seeds the blackboard with the
pending points, ticks the tree on the runtime's clock, enforces the
measurement pacing, and appends a record to ``records.jsonl`` as each
point completes.  Kill it at any moment and a rerun against the same
output directory resumes from the records already on disk.

Fault injection happens here, not in the device simulators: a seeded
coin decides per step whether a goal submission is swallowed (reported
FAILED without reaching the device) or a local export/reduce step throws.
The retry wrappers in the tree then have something real to recover from.
"""
from __future__ import annotations

import logging
import random
from pathlib import Path

from labscan.bt import (
    PENDING_KEY,
    RETRY_KEY,
    Blackboard,
    RuntimeClient,
    ScanBindings,
    TickStatus,
    build_scan_tree,
    tick,
)
from labscan.devices import LineDb
from labscan.reduction import reduce_spectrum
from labscan.scan.csvio import export_csv
from labscan.scan.records import (
    MANIFEST_NAME,
    RECORDS_NAME,
    ScanError,
    append_record,
    read_manifest,
    read_records,
    write_manifest,
)

log = logging.getLogger(__name__)

DEFAULT_PACING_S = 15.0
DEFAULT_TICK_S = 0.1
DEFAULT_MAX_RETRIES_PER_POINT = 25
# stage repeatability is sigma=0.05mm and readout quantizes to 0.02mm
# steps; accept a landing within 3 sigma plus half a step, re-move beyond
DEFAULT_POSITION_TOL_MM = 0.16

_STARTED_KEY = "_point_started"
_RETRY_BASE_KEY = "_point_retry_base"
# hard stop for a point that stops making progress without failing
_STALL_TICKS = 50_000


class ScanAborted(RuntimeError):
    """A point exhausted its retry budget; records on disk stay valid."""


class InjectedFault(RuntimeError):
    """Synthetic transient failure from the fault injector."""


class FaultInjector:
    """Seeded coin deciding which steps fail."""

    def __init__(self, probability: float, seed: int = 0):
        if not (0.0 <= probability < 1.0):
            raise ScanError("BAD_PARAMS",
                            f"fault probability {probability} outside [0, 1)")
        self.probability = float(probability)
        self._rng = random.Random(seed)

    def trip(self) -> bool:
        return self.probability > 0.0 and self._rng.random() < self.probability


class FaultyClient:
    """Goal client wrapper that drops submissions at the injector's rate.

    A dropped submission fabricates a goal id that polls FAILED without
    the device ever seeing it, which is what a transient driver or
    transport error looks like from the orchestration side.
    """

    def __init__(self, inner, injector: FaultInjector):
        self.inner = inner
        self.injector = injector
        self._fake: set[str] = set()
        self._count = 0

    def submit(self, device_id: str, action: str, params: dict) -> str:
        if self.injector.trip():
            self._count += 1
            goal_id = f"injected-{self._count:05d}"
            self._fake.add(goal_id)
            log.debug("injected fault on %s.%s", device_id, action)
            return goal_id
        return self.inner.submit(device_id, action, params)

    def poll(self, goal_id: str) -> str:
        if goal_id in self._fake:
            return "FAILED"
        return self.inner.poll(goal_id)

    def result(self, goal_id: str) -> dict:
        if goal_id in self._fake:
            return {"error": "injected transient fault"}
        return self.inner.result(goal_id)

    def has_action(self, device_id: str, action: str) -> bool:
        return self.inner.has_action(device_id, action)


def _sync_manifest(outdir: Path, grid, pacing_s: float) -> None:
    wanted = grid.to_manifest()
    wanted["pacing_s"] = float(pacing_s)
    path = outdir / MANIFEST_NAME
    if path.exists():
        stored = read_manifest(path)
        if stored != wanted:
            raise ScanError("BAD_PARAMS",
                            f"{path} was written for a different scan; "
                            f"refusing to mix outputs")
    else:
        write_manifest(path, wanted)


def _pending_points(grid, records: list[dict]) -> list:
    done = set()
    for r in records:
        idx = r.get("index")
        if not isinstance(idx, int) or not 0 <= idx < len(grid.points):
            raise ScanError("BAD_PARAMS", f"record index {idx!r} outside grid")
        if idx in done:
            raise ScanError("BAD_PARAMS", f"duplicate record for point {idx}")
        done.add(idx)
    return [pt for pt in grid.points if pt.index not in done]


def run_scan(runtime, grid, outdir, *, db=None,
             pacing_s: float = DEFAULT_PACING_S,
             tick_s: float = DEFAULT_TICK_S,
             fault_probability: float = 0.0,
             fault_seed: int = 0,
             max_retries_per_point: int = DEFAULT_MAX_RETRIES_PER_POINT,
             position_tol_mm: float = DEFAULT_POSITION_TOL_MM,
             min_prominence_sigma: float = 5.0,
             tol_nm: float = 0.1,
             accept_threshold: float = 30.0) -> list[dict]:
    """Execute (or resume) a raster scan; returns every record, old and new.

    Output layout under ``outdir``: ``manifest.json``, ``records.jsonl``
    and ``spectra/NNNN.csv``.  ``pacing_s`` floors the start-to-start
    interval between points.  With a virtual clock and fixed seeds the
    byte content of ``records.jsonl`` is reproducible.
    """
    outdir = Path(outdir)
    spectra_dir = outdir / "spectra"
    spectra_dir.mkdir(parents=True, exist_ok=True)
    _sync_manifest(outdir, grid, pacing_s)

    records = read_records(outdir / RECORDS_NAME)
    pending = _pending_points(grid, records)
    if not pending:
        return records
    if db is None:
        db = LineDb.bundled()

    injector = FaultInjector(fault_probability, fault_seed)
    client = RuntimeClient(runtime)
    if injector.probability > 0.0:
        client = FaultyClient(client, injector)

    clock = runtime.clock
    bb = Blackboard()
    bb[PENDING_KEY] = pending
    records_fh = (outdir / RECORDS_NAME).open("a", encoding="ascii")

    def export(bb):
        if injector.trip():
            raise InjectedFault("injected fault in csv export")
        pt = bb[PENDING_KEY][0]
        export_csv(bb["fire"]["spectrum"], spectra_dir / f"{pt.index:04d}.csv")

    def analyze(bb):
        if injector.trip():
            raise InjectedFault("injected fault in reduction")
        spectrum = bb["fire"]["spectrum"]
        bb["summary"] = reduce_spectrum(
            spectrum.wavelength_nm, spectrum.intensity, db,
            min_prominence_sigma=min_prominence_sigma, tol_nm=tol_nm,
            accept_threshold=accept_threshold)

    def finish_point(bb):
        pt = bb[PENDING_KEY][0]
        spectrum = bb["fire"]["spectrum"]
        summary = bb.pop("summary")
        record = {
            "index": pt.index, "ix": pt.ix, "iy": pt.iy,
            "x": pt.x, "y": pt.y,
            "achieved": [float(v) for v in bb["down"]["position"]],
            "spectrum_csv": f"spectra/{pt.index:04d}.csv",
            "channels": len(spectrum.intensity),
            "elements": summary["elements"],
            "n_peaks": summary["n_peaks"],
            "started_at": bb[_STARTED_KEY],
            "ended_at": float(clock.now()),
            "retries": bb.get(RETRY_KEY, 0) - bb[_RETRY_BASE_KEY],
        }
        append_record(records_fh, record)
        records.append(record)

    bindings = ScanBindings(client=client, export=export, analyze=analyze,
                            finish_point=finish_point, now=clock.now,
                            position_tol_mm=position_tol_mm)
    root = build_scan_tree(grid, bindings)

    actor = clock.register("scan-engine")
    try:
        point_ticks = 0
        while bb[PENDING_KEY]:
            if bb.get(_STARTED_KEY) is None:
                bb[_STARTED_KEY] = float(clock.now())
                bb[_RETRY_BASE_KEY] = bb.get(RETRY_KEY, 0)
                point_ticks = 0
            head = bb[PENDING_KEY][0]
            before = len(bb[PENDING_KEY])
            status = tick(root, bb)
            if status is TickStatus.FAILURE:
                raise ScanAborted(f"tree failed at point {head.index}; "
                                  f"{len(records)} records kept in {outdir}")
            if len(bb[PENDING_KEY]) < before:
                wait = bb[_STARTED_KEY] + pacing_s - clock.now()
                bb[_STARTED_KEY] = None
                if wait > 0.0 and bb[PENDING_KEY]:
                    clock.sleep(actor, wait)
                continue
            retries = bb.get(RETRY_KEY, 0) - bb[_RETRY_BASE_KEY]
            if retries > max_retries_per_point:
                raise ScanAborted(
                    f"point {head.index} exceeded {max_retries_per_point} "
                    f"retries; {len(records)} records kept in {outdir}")
            point_ticks += 1
            if point_ticks > _STALL_TICKS:
                raise ScanAborted(f"point {head.index} stalled; "
                                  f"{len(records)} records kept in {outdir}")
            clock.sleep(actor, tick_s)
        tick(root, bb)  # drained: the tree reports overall success
    finally:
        clock.unregister(actor)
        records_fh.close()
    return records
