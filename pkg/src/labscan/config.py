"""Runtime configuration: one JSON file, documented defaults, strict checks.

Every tunable lives here — device ports, gantry geometry and noise,
camera model, reduction thresholds, scan pacing and the RNG seed — so a
run is reproducible from the config file alone.  Unknown keys are
rejected rather than ignored; typos should fail loudly, not silently run
with defaults.  Ports (and only ports) may be overridden via environment
variables LABSCAN_STREAM_PORT / LABSCAN_DISCOVERY_PORT /
LABSCAN_BRIDGE_PORT.
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

_ENV_PORTS = {
    "LABSCAN_STREAM_PORT": ("ports", "stream"),
    "LABSCAN_DISCOVERY_PORT": ("ports", "discovery"),
    "LABSCAN_BRIDGE_PORT": ("ports", "bridge"),
}

DEFAULTS: dict = {
    "seed": 0,
    "phantom_path": "fixtures/phantom_demo.txt",
    "linedb_path": None,          # null -> bundled emission-line table
    "host": "127.0.0.1",
    "ports": {"stream": 0, "discovery": 0, "bridge": 0},  # 0 = ephemeral
    "time_scale": 1.0,            # wall-clock speedup for `serve`
    "gantry": {
        "limits_mm": [730.0, 810.0, 100.0],
        "resolution_mm": 0.02,
        "repeatability_sigma_mm": 0.05,
    },
    "camera": {
        "fx": 1000.0, "fy": 1000.0, "cx": 960.0, "cy": 540.0,
        "extrinsics": None,       # filled in by `calibrate`
    },
    "reduction": {
        "min_prominence_sigma": 5.0,
        "tol_nm": 0.1,
        "accept_threshold": 30.0,
    },
    "scan": {
        "grid": [0.0, 0.0, 4.0, 10.0, 0.2],   # x0, y0, width, height, pitch
        "z": 0.0,
        "safe_z": 5.0,
        "pacing_s": 15.0,
        "tick_s": 0.1,
        "fault_probability": 0.0,
        "fault_seed": 0,
        "max_retries_per_point": 25,
        "position_tol_mm": 0.16,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(dotted, "unknown field")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(dotted, "expected an object")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def _require_number(cfg, field, *, minimum=None, maximum=None,
                    exclusive_min=False, integer=False):
    node = cfg
    for part in field.split("."):
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(field, f"expected a number, got {node!r}")
    if integer and not isinstance(node, int):
        raise ConfigError(field, f"expected an integer, got {node!r}")
    if not math.isfinite(node):
        raise ConfigError(field, "must be finite")
    if minimum is not None:
        if exclusive_min and not node > minimum:
            raise ConfigError(field, f"must be > {minimum}, got {node}")
        if not exclusive_min and not node >= minimum:
            raise ConfigError(field, f"must be >= {minimum}, got {node}")
    if maximum is not None and not node <= maximum:
        raise ConfigError(field, f"must be <= {maximum}, got {node}")
    return node


def validate_config(cfg: dict, base_dir: Path | None = None) -> dict:
    """Check types, ranges and file references; returns ``cfg`` unchanged.

    Relative paths resolve against ``base_dir`` (the config file's
    directory) when given, else the working directory.
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    _require_number(cfg, "seed", minimum=0, integer=True)
    _require_number(cfg, "time_scale", minimum=0.0, exclusive_min=True)
    for name in ("stream", "discovery", "bridge"):
        _require_number(cfg, f"ports.{name}", minimum=0, maximum=65535,
                        integer=True)
    if not isinstance(cfg["host"], str) or not cfg["host"]:
        raise ConfigError("host", "expected a non-empty string")

    for field, path in (("phantom_path", cfg["phantom_path"]),
                        ("linedb_path", cfg["linedb_path"])):
        if path is None:
            if field == "phantom_path":
                raise ConfigError(field, "required")
            continue
        if not isinstance(path, str):
            raise ConfigError(field, f"expected a path string, got {path!r}")
        if not (base / path).exists():
            raise ConfigError(field, f"file not found: {base / path}")

    limits = cfg["gantry"]["limits_mm"]
    if (not isinstance(limits, list) or len(limits) != 3
            or not all(isinstance(v, (int, float)) and v > 0 for v in limits)):
        raise ConfigError("gantry.limits_mm",
                          f"expected three positive numbers, got {limits!r}")
    _require_number(cfg, "gantry.resolution_mm", minimum=0.0,
                    exclusive_min=True)
    _require_number(cfg, "gantry.repeatability_sigma_mm", minimum=0.0)

    for name in ("fx", "fy"):
        _require_number(cfg, f"camera.{name}", minimum=0.0,
                        exclusive_min=True)
    for name in ("cx", "cy"):
        _require_number(cfg, f"camera.{name}")
    ext = cfg["camera"]["extrinsics"]
    if ext is not None:
        if (not isinstance(ext, dict)
                or set(ext) - {"rotation", "translation", "rms_px"}
                or "rotation" not in ext or "translation" not in ext):
            raise ConfigError("camera.extrinsics",
                              "expected {rotation, translation[, rms_px]}")
        rot, t = ext["rotation"], ext["translation"]
        if (not isinstance(rot, list) or len(rot) != 3
                or any(not isinstance(row, list) or len(row) != 3
                       for row in rot)):
            raise ConfigError("camera.extrinsics.rotation",
                              "expected a 3x3 matrix")
        if not isinstance(t, list) or len(t) != 3:
            raise ConfigError("camera.extrinsics.translation",
                              "expected three numbers")

    _require_number(cfg, "reduction.min_prominence_sigma", minimum=0.0,
                    exclusive_min=True)
    _require_number(cfg, "reduction.tol_nm", minimum=0.0, exclusive_min=True)
    _require_number(cfg, "reduction.accept_threshold", minimum=0.0,
                    exclusive_min=True)

    grid = cfg["scan"]["grid"]
    if (not isinstance(grid, list) or len(grid) != 5
            or not all(isinstance(v, (int, float)) for v in grid)):
        raise ConfigError("scan.grid",
                          "expected [x0, y0, width, height, pitch]")
    if not grid[4] > 0:
        raise ConfigError("scan.grid", f"pitch must be positive, "
                                       f"got {grid[4]}")
    _require_number(cfg, "scan.z", minimum=0.0)
    _require_number(cfg, "scan.safe_z", minimum=0.0)
    if cfg["scan"]["safe_z"] < cfg["scan"]["z"]:
        raise ConfigError("scan.safe_z", "below scan.z")
    _require_number(cfg, "scan.pacing_s", minimum=0.0)
    _require_number(cfg, "scan.tick_s", minimum=0.0, exclusive_min=True)
    fp = _require_number(cfg, "scan.fault_probability", minimum=0.0)
    if fp >= 1.0:
        raise ConfigError("scan.fault_probability",
                          f"must be < 1, got {fp}")
    _require_number(cfg, "scan.fault_seed", minimum=0, integer=True)
    _require_number(cfg, "scan.max_retries_per_point", minimum=1,
                    integer=True)
    _require_number(cfg, "scan.position_tol_mm", minimum=0.0)
    return cfg


def load_config(path: str | Path | None = None) -> dict:
    """Defaults, overlaid with the JSON file at ``path``, validated.

    Paths inside the file resolve relative to the file itself; with no
    file they resolve against the working directory.
    """
    cfg = json.loads(json.dumps(DEFAULTS))  # deep copy
    base_dir = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config", f"{path}: expected a JSON object")
        cfg = _merge(cfg, loaded)
        base_dir = path.parent
    for env, (section, key) in _ENV_PORTS.items():
        raw = os.environ.get(env)
        if raw is not None:
            try:
                cfg[section][key] = int(raw)
            except ValueError:
                raise ConfigError(f"{section}.{key}",
                                  f"{env}={raw!r} is not an integer") \
                    from None
    validate_config(cfg, base_dir)
    cfg["_base_dir"] = str(base_dir) if base_dir is not None else None
    return cfg


def resolve_path(cfg: dict, value: str) -> Path:
    """Resolve a config-relative path the same way validation did."""
    base = cfg.get("_base_dir")
    root = Path(base) if base else Path.cwd()
    return (root / value).resolve()
