"""Process entry points for distributed deployment.

Run a device-hosting stream server or an action bridge as a standalone OS
process; each prints one READY line with its bound addresses so a parent
(or an operator) can wire them together.  The CLI's `serve` builds on the
same pieces in a single process.
"""
from __future__ import annotations

import argparse
import sys
import threading

from labscan.clock import WallClock
from labscan.devices import Phantom
from labscan.runtime.bridge import ActionBridge, fetch_device_endpoints
from labscan.runtime.core import DeviceRuntime
from labscan.runtime.discovery import DiscoveryServer
from labscan.runtime.standard import attach_standard_devices
from labscan.runtime.stream import StreamServer


def main_stream(argv=None) -> None:
    ap = argparse.ArgumentParser(prog="labscan-stream")
    ap.add_argument("--phantom", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=0)
    ap.add_argument("--discovery-port", type=int, default=0)
    ap.add_argument("--time-scale", type=float, default=1.0)
    ap.add_argument("--gantry-limits", default=None,
                    help="x,y,z travel limits in mm")
    ap.add_argument("--gantry-resolution", type=float, default=None)
    ap.add_argument("--gantry-sigma", type=float, default=None)
    args = ap.parse_args(argv)

    gantry_kwargs = {}
    if args.gantry_limits is not None:
        gantry_kwargs["limits"] = [float(v)
                                   for v in args.gantry_limits.split(",")]
    if args.gantry_resolution is not None:
        gantry_kwargs["resolution_mm"] = args.gantry_resolution
    if args.gantry_sigma is not None:
        gantry_kwargs["repeatability_sigma_mm"] = args.gantry_sigma

    runtime = DeviceRuntime(WallClock(args.time_scale))
    server = StreamServer(runtime, args.host, args.port).start()
    attach_standard_devices(runtime, Phantom.load(args.phantom),
                            seed=args.seed, endpoint=server.url,
                            gantry_kwargs=gantry_kwargs)
    discovery = DiscoveryServer(runtime.describe, args.host,
                                args.discovery_port).start()
    print(f"READY stream={server.url} discovery={discovery.url}", flush=True)
    threading.Event().wait()


def main_bridge(argv=None) -> None:
    ap = argparse.ArgumentParser(prog="labscan-bridge")
    ap.add_argument("--discovery", required=True)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=0)
    args = ap.parse_args(argv)

    bridge = ActionBridge(fetch_device_endpoints(args.discovery),
                          args.host, args.port).start()
    print(f"READY bridge={bridge.url}", flush=True)
    threading.Event().wait()


def main(argv=None) -> None:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in ("stream", "bridge"):
        print("usage: python -m labscan.runtime.procs {stream|bridge} ...",
              file=sys.stderr)
        raise SystemExit(2)
    if argv[0] == "stream":
        main_stream(argv[1:])
    else:
        main_bridge(argv[1:])


if __name__ == "__main__":
    main()
