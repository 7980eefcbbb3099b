"""Command-line front door: serve the bench, scan, reduce, map, calibrate.

All tunables come from the JSON config (see labscan.config); flags carry
only per-invocation choices like output paths.  Batch subcommands run on
the virtual clock, so identical config + seed reproduce identical output
bytes.  `serve` starts the stream-layer worker and the action bridge as
separate OS processes and relays their READY lines.
"""
from __future__ import annotations

import json
import signal
import subprocess
import sys
import time
from pathlib import Path

import click

from labscan.clock import SimClock
from labscan.config import ConfigError, load_config, resolve_path
from labscan.devices import LineDb, Phantom
from labscan.reduction import build_element_map, reduce_spectrum
from labscan.report import render_heatmap, write_map_grid
from labscan.runtime import DeviceRuntime
from labscan.runtime.standard import attach_standard_devices
from labscan.scan import (
    GridError,
    ScanAborted,
    ScanError,
    dump_record,
    plan_grid,
    read_manifest,
    read_records,
    read_spectrum_csv,
    run_scan,
    throughput_report,
)
from labscan.vision import (
    CameraIntrinsics,
    PoseError,
    estimate_extrinsics,
    load_correspondences,
)


def _gantry_kwargs(cfg: dict) -> dict:
    g = cfg["gantry"]
    return {"limits": g["limits_mm"], "resolution_mm": g["resolution_mm"],
            "repeatability_sigma_mm": g["repeatability_sigma_mm"]}


def _load_db(cfg: dict) -> LineDb | None:
    if cfg["linedb_path"] is None:
        return None
    return LineDb.load(resolve_path(cfg, cfg["linedb_path"]))


def _parse_grid(spec: str) -> list[float]:
    parts = spec.split(",")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        vals = []
    if len(vals) != 5:
        raise click.BadParameter("expected x0,y0,width,height,pitch",
                                 param_hint="--grid")
    return vals


@click.group(invoke_without_command=True)
@click.option("--config", "config_path", default=None, metavar="FILE",
              help="JSON config file; built-in defaults apply without one.")
@click.option("--print-config", is_flag=True,
              help="Dump the effective config as JSON and exit.")
@click.pass_context
def main(ctx, config_path, print_config):
    """Benchtop scanning platform: instruments, raster scans, reduction."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(f"config invalid — {exc}") from exc
    ctx.obj = {"cfg": cfg, "config_path": config_path}
    if print_config:
        public = {k: v for k, v in cfg.items() if not k.startswith("_")}
        click.echo(json.dumps(public, indent=2, sort_keys=True))
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(2)


@main.command()
@click.option("--grid", "grid_spec", default=None, metavar="SPEC",
              help="x0,y0,width,height,pitch in mm; defaults from config.")
@click.option("--out", "out_dir", required=True, metavar="DIR",
              help="Output directory (created; reused to resume).")
@click.pass_obj
def scan(obj, grid_spec, out_dir):
    """Run (or resume) a raster scan against the simulated bench."""
    cfg = obj["cfg"]
    vals = (cfg["scan"]["grid"] if grid_spec is None
            else _parse_grid(grid_spec))
    sc = cfg["scan"]
    try:
        grid = plan_grid((vals[0], vals[1]), (vals[2], vals[3]), vals[4],
                         z=sc["z"], safe_z=sc["safe_z"],
                         limits=cfg["gantry"]["limits_mm"])
    except GridError as exc:
        raise click.ClickException(f"scan.grid: {exc}") from exc
    phantom = Phantom.load(resolve_path(cfg, cfg["phantom_path"]))
    red = cfg["reduction"]
    runtime = DeviceRuntime(SimClock())
    attach_standard_devices(runtime, phantom, seed=cfg["seed"],
                            gantry_kwargs=_gantry_kwargs(cfg))
    try:
        records = run_scan(
            runtime, grid, out_dir, db=_load_db(cfg),
            pacing_s=sc["pacing_s"], tick_s=sc["tick_s"],
            fault_probability=sc["fault_probability"],
            fault_seed=sc["fault_seed"],
            max_retries_per_point=sc["max_retries_per_point"],
            position_tol_mm=sc["position_tol_mm"],
            min_prominence_sigma=red["min_prominence_sigma"],
            tol_nm=red["tol_nm"], accept_threshold=red["accept_threshold"])
    except (ScanError, ScanAborted) as exc:
        raise click.ClickException(str(exc)) from exc
    finally:
        runtime.shutdown()
    rep = throughput_report(records)
    click.echo(f"{len(records)} records -> {out_dir} "
               f"({rep['measurements_per_min']:.2f} meas/min, "
               f"{rep['channels_per_sec']:.0f} channels/s)")


def _find_manifest(in_dir: Path) -> dict | None:
    for candidate in (in_dir / "manifest.json",
                      in_dir.parent / "manifest.json"):
        if candidate.exists():
            return read_manifest(candidate)
    return None


@main.command()
@click.option("--in", "in_dir", required=True, metavar="DIR",
              type=click.Path(exists=True, file_okay=False),
              help="Directory of spectrum CSVs (a scan's spectra/).")
@click.option("--out", "out_path", required=True, metavar="FILE",
              help="Records file to write (jsonl).")
@click.pass_obj
def reduce(obj, in_dir, out_path):
    """Reduce stored spectrum CSVs to element records."""
    cfg = obj["cfg"]
    in_dir = Path(in_dir)
    files = sorted(in_dir.glob("*.csv"))
    if not files:
        raise click.ClickException(f"no .csv spectra in {in_dir}")
    manifest = _find_manifest(in_dir)
    db = _load_db(cfg) or LineDb.bundled()
    red = cfg["reduction"]
    lines = []
    for path in files:
        wl, intensity = read_spectrum_csv(path)
        summary = reduce_spectrum(
            wl, intensity, db,
            min_prominence_sigma=red["min_prominence_sigma"],
            tol_nm=red["tol_nm"], accept_threshold=red["accept_threshold"])
        record = {
            "spectrum_csv": f"{in_dir.name}/{path.name}",
            "channels": len(wl),
            "elements": summary["elements"],
            "n_peaks": summary["n_peaks"],
        }
        if path.stem.isdigit():
            index = int(path.stem)
            record["index"] = index
            if manifest is not None:
                nx = manifest["nx"]
                record["ix"] = index % nx
                record["iy"] = index // nx
                record["x"] = manifest["origin"][0] + record["ix"] * \
                    manifest["pitch"]
                record["y"] = manifest["origin"][1] + record["iy"] * \
                    manifest["pitch"]
        lines.append(dump_record(record))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="ascii")
    click.echo(f"{len(lines)} records -> {out_path}")


@main.command(name="map")
@click.option("--element", required=True, metavar="EL",
              help="Element symbol, e.g. Li.")
@click.option("--in", "in_path", required=True, metavar="FILE",
              type=click.Path(exists=True, dir_okay=False),
              help="Records file (jsonl).")
@click.option("--out", "out_path", required=True, metavar="FILE",
              help="Map grid file; a PNG heatmap lands beside it.")
@click.pass_obj
def map_cmd(obj, element, in_path, out_path):
    """Build a normalized element map plus a rendered heatmap."""
    out_path = Path(out_path)
    if out_path.suffix == ".png":
        raise click.ClickException(
            "--out names the text grid; the PNG is derived from it")
    try:
        records = read_records(in_path)
    except ScanError as exc:
        raise click.ClickException(str(exc)) from exc
    if not records:
        raise click.ClickException(f"{in_path} holds no records")
    if any("ix" not in r or "iy" not in r for r in records):
        raise click.ClickException(
            "records lack grid indices; reduce a scan output with its "
            "manifest.json present")
    element_map = build_element_map(records, element)
    write_map_grid(element_map, out_path)
    png = render_heatmap(element_map, out_path.with_suffix(".png"))
    ny, nx = element_map.values.shape
    click.echo(f"{element} map {ny}x{nx} -> {out_path} and {png.name}")


@main.command()
@click.option("--corrs", "corrs_path", required=True, metavar="FILE",
              type=click.Path(exists=True, dir_okay=False),
              help="Correspondences: one `x_w y_w z_w u v` row per point.")
@click.pass_obj
def calibrate(obj, corrs_path):
    """Estimate the camera pose and write it into the config file."""
    cfg = obj["cfg"]
    config_path = obj["config_path"]
    if config_path is None:
        raise click.ClickException(
            "calibrate writes the pose back, so --config is required")
    corrs = load_correspondences(corrs_path)
    cam = cfg["camera"]
    intr = CameraIntrinsics(fx=cam["fx"], fy=cam["fy"],
                            cx=cam["cx"], cy=cam["cy"])
    try:
        pose = estimate_extrinsics(corrs, intr)
    except PoseError as exc:
        raise click.ClickException(f"{exc.code}: {exc}") from exc
    path = Path(config_path)
    stored = json.loads(path.read_text(encoding="utf-8"))
    stored.setdefault("camera", {})["extrinsics"] = {
        "rotation": pose.rotation.tolist(),
        "translation": pose.translation.tolist(),
        "rms_px": pose.rms_px,
    }
    path.write_text(json.dumps(stored, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    click.echo(f"pose written to {path} (rms {pose.rms_px:.3g} px, "
               f"{len(corrs)} points)")


@main.command()
@click.option("--time-scale", type=float, default=None,
              help="Wall-clock speedup; overrides config time_scale.")
@click.pass_obj
def serve(obj, time_scale):
    """Start the device stream server, discovery and the action bridge."""
    cfg = obj["cfg"]
    scale = cfg["time_scale"] if time_scale is None else time_scale
    phantom = resolve_path(cfg, cfg["phantom_path"])
    g = cfg["gantry"]
    stream_cmd = [
        sys.executable, "-m", "labscan.runtime.procs", "stream",
        "--phantom", str(phantom), "--seed", str(cfg["seed"]),
        "--host", cfg["host"], "--port", str(cfg["ports"]["stream"]),
        "--discovery-port", str(cfg["ports"]["discovery"]),
        "--time-scale", str(scale),
        "--gantry-limits", ",".join(str(v) for v in g["limits_mm"]),
        "--gantry-resolution", str(g["resolution_mm"]),
        "--gantry-sigma", str(g["repeatability_sigma_mm"]),
    ]
    children: list[subprocess.Popen] = []

    def _on_term(_sig, _frame):
        raise SystemExit(0)

    signal.signal(signal.SIGTERM, _on_term)

    def _spawn(cmd, label):
        proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True)
        children.append(proc)
        line = (proc.stdout.readline() or "").strip()
        if not line.startswith("READY"):
            raise click.ClickException(f"{label} worker failed to start")
        click.echo(line)
        sys.stdout.flush()
        return dict(kv.split("=", 1) for kv in line.split()[1:])

    try:
        fields = _spawn(stream_cmd, "stream")
        bridge_cmd = [
            sys.executable, "-m", "labscan.runtime.procs", "bridge",
            "--discovery", fields["discovery"],
            "--host", cfg["host"], "--port", str(cfg["ports"]["bridge"]),
        ]
        _spawn(bridge_cmd, "bridge")
        click.echo("SERVING (interrupt to stop)")
        sys.stdout.flush()
        while True:
            for proc in children:
                code = proc.poll()
                if code is not None:
                    raise click.ClickException(
                        f"worker exited with status {code}")
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        for proc in children:
            proc.terminate()
        for proc in children:
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()


if __name__ == "__main__":
    main()
