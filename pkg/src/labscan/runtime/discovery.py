"""Discovery endpoint: a tiny HTTP server listing registered devices."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional


class DiscoveryServer:
    """GET /devices -> {"devices": [descriptor...]}; anything else is 404."""

    def __init__(self, describe: Callable[[], list[dict]],
                 host: str = "127.0.0.1", port: int = 0):
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):   # noqa: N802 (http.server API)
                if self.path.rstrip("/") in ("", "/devices"):
                    body = json.dumps({"devices": outer.describe()},
                                      indent=2).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.send_header("Access-Control-Allow-Origin", "*")
                    self.end_headers()
                    self.wfile.write(body)
                else:
                    self.send_error(404)

            def log_message(self, *args):   # quiet by default
                pass

        self.describe = describe
        self._server = ThreadingHTTPServer((host, port), Handler)
        self.host = host
        self.port = self._server.server_address[1]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "DiscoveryServer":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="discovery", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
