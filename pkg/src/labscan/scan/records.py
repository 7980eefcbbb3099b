"""Scan record persistence and throughput accounting.

``records.jsonl`` holds one JSON object per completed measurement point,
appended and flushed as each point finishes so a killed scan can resume
from whatever made it to disk.  ``manifest.json`` pins the grid the run
was planned against; a resume against a different grid is refused.

Record keys: index, ix, iy, x, y (commanded), achieved ([x, y, z] the
stage actually reported), spectrum_csv (relative path), channels,
elements (per-element area/line summary), n_peaks, started_at, ended_at
(scan-clock seconds), retries.
"""
from __future__ import annotations

import json
from pathlib import Path

RECORDS_NAME = "records.jsonl"
MANIFEST_NAME = "manifest.json"


class ScanError(ValueError):
    """Scan-level failure; ``code`` mirrors the goal error vocabulary."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def dump_record(record: dict) -> str:
    # sorted keys + fixed separators so identical runs are byte-identical
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def append_record(fh, record: dict) -> None:
    fh.write(dump_record(record) + "\n")
    fh.flush()


def read_records(path: str | Path) -> list[dict]:
    """Load records.jsonl; a missing file is an empty run, not an error."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with path.open("r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ScanError("BAD_PARAMS",
                                f"{path}:{lineno}: bad record: {exc}") \
                    from exc
    return records


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2)
                          + "\n", encoding="ascii")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="ascii"))


def throughput_report(records: list[dict]) -> dict:
    """Measurement and channel rates over a record set.

    The span runs from the earliest ``started_at`` to the latest
    ``ended_at``; a single record spans its own duration.
    """
    if not records:
        raise ScanError("BAD_PARAMS", "no records to report on")
    try:
        start = min(r["started_at"] for r in records)
        end = max(r["ended_at"] for r in records)
        channels = sum(int(r["channels"]) for r in records)
    except KeyError as exc:
        raise ScanError("BAD_PARAMS", f"record missing {exc}") from exc
    span_s = float(end) - float(start)
    if span_s <= 0.0:
        raise ScanError("BAD_PARAMS", f"non-positive time span {span_s}")
    return {
        "count": len(records),
        "span_s": span_s,
        "measurements_per_min": len(records) / (span_s / 60.0),
        "channels_per_sec": channels / span_s,
    }
