"""Raster scan planning, execution and persistence."""
from labscan.scan.grid import GridError, GridPoint, ScanGrid, plan_grid
from labscan.scan.csvio import CSV_HEADER, export_csv, read_spectrum_csv
from labscan.scan.records import (
    MANIFEST_NAME,
    RECORDS_NAME,
    ScanError,
    append_record,
    dump_record,
    read_manifest,
    read_records,
    throughput_report,
    write_manifest,
)
from labscan.scan.engine import (
    DEFAULT_MAX_RETRIES_PER_POINT,
    DEFAULT_PACING_S,
    DEFAULT_POSITION_TOL_MM,
    DEFAULT_TICK_S,
    FaultInjector,
    FaultyClient,
    InjectedFault,
    ScanAborted,
    run_scan,
)

__all__ = [
    "GridError",
    "GridPoint",
    "ScanGrid",
    "plan_grid",
    "CSV_HEADER",
    "export_csv",
    "read_spectrum_csv",
    "MANIFEST_NAME",
    "RECORDS_NAME",
    "ScanError",
    "append_record",
    "dump_record",
    "read_manifest",
    "read_records",
    "throughput_report",
    "write_manifest",
    "DEFAULT_MAX_RETRIES_PER_POINT",
    "DEFAULT_PACING_S",
    "DEFAULT_POSITION_TOL_MM",
    "DEFAULT_TICK_S",
    "FaultInjector",
    "FaultyClient",
    "InjectedFault",
    "ScanAborted",
    "run_scan",
]
