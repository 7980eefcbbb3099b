"""Action-layer bridge: a WebSocket server embedding stream-layer clients.

Orchestration clients speak the ACTION layer to this process; every request
is forwarded verbatim (modulo the layer tag) to the owning device's stream
endpoint, and the device's feedback/result events are relayed back.  The
bridge holds no goal logic of its own, which is what makes the two layers
interchangeable for a client.
"""
from __future__ import annotations

import itertools
import json
import logging
import threading
import urllib.request
from typing import Optional

from websockets.sync.server import serve as ws_serve

from labscan.protocol import (
    DecodeError,
    Layer,
    MessageKind,
    SchemaError,
    WireMessage,
    decode_message,
    encode_message,
)
from labscan.runtime.stream import StreamClient, StreamError

log = logging.getLogger(__name__)


def fetch_device_endpoints(discovery_url: str) -> dict[str, str]:
    """Map device_id -> stream endpoint from a discovery server."""
    with urllib.request.urlopen(discovery_url.rstrip("/") + "/devices") as r:
        listing = json.load(r)
    return {d["device_id"]: d["endpoint"] for d in listing["devices"]}


class ActionBridge:
    def __init__(self, endpoints: dict[str, str], host: str = "127.0.0.1",
                 port: int = 0):
        self.endpoints = dict(endpoints)
        self._server = ws_serve(self._handle, host, port)
        self.host = host
        self.port = self._server.socket.getsockname()[1]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}"

    def start(self) -> "ActionBridge":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="action-bridge", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()

    # ------------------------------------------------------------- handling

    def _handle(self, socket) -> None:
        session = _BridgeSession(self, socket)
        try:
            session.run()
        finally:
            session.close()


class _BridgeSession:
    """One action-layer client and its per-device stream clients."""

    def __init__(self, bridge: ActionBridge, socket):
        self.bridge = bridge
        self.socket = socket
        self.send_lock = threading.Lock()
        self.seq = itertools.count(1)
        self.last_inbound_seq = 0
        self.clients: dict[str, StreamClient] = {}
        self.goal_device: dict[str, str] = {}

    def run(self) -> None:
        for frame in self.socket:
            try:
                msg = decode_message(frame)
            except (DecodeError, SchemaError) as exc:
                self._send(MessageKind.ERROR,
                           {"code": "PROTOCOL", "message": str(exc)})
                return
            if msg.seq <= self.last_inbound_seq:
                self._send(MessageKind.ERROR, {
                    "code": "PROTOCOL",
                    "message": f"seq {msg.seq} does not increase "
                               f"(last {self.last_inbound_seq})",
                    "ref_seq": msg.seq})
                return
            self.last_inbound_seq = msg.seq
            if msg.layer is not Layer.ACTION:
                self._send(MessageKind.ERROR, {
                    "code": "PROTOCOL",
                    "message": f"layer {msg.layer.value} on the action "
                               f"bridge", "ref_seq": msg.seq})
                return
            try:
                self._dispatch(msg)
            except StreamError as exc:
                self._send(MessageKind.ERROR,
                           {"code": exc.code, "message": str(exc),
                            "ref_seq": msg.seq})
            except KeyError as exc:
                self._send(MessageKind.ERROR,
                           {"code": "NOT_FOUND", "message": str(exc),
                            "ref_seq": msg.seq})
            except Exception as exc:
                log.exception("bridge request failed")
                self._send(MessageKind.ERROR,
                           {"code": "INTERNAL", "message": str(exc),
                            "ref_seq": msg.seq})

    def _dispatch(self, msg: WireMessage) -> None:
        payload = msg.payload
        if msg.kind is MessageKind.SUBMIT:
            device_id = payload["device_id"]
            client = self._client_for(device_id)
            reply = client.submit(device_id, payload["action"],
                                  payload["params"],
                                  goal_id=payload.get("goal_id"))
            goal_id = reply["goal_id"]
            self.goal_device[goal_id] = device_id
            self._pump(client, goal_id)
            self._send(MessageKind.STATUS_EVENT, reply)
        elif msg.kind is MessageKind.CANCEL:
            device_id = self.goal_device.get(payload["goal_id"])
            if device_id is None:
                raise KeyError(f"unknown goal {payload['goal_id']!r}")
            reply = self._client_for(device_id).cancel(payload["goal_id"])
            self._send(MessageKind.STATUS_EVENT, reply)
        elif msg.kind is MessageKind.STATUS_QUERY:
            if payload["scope"] == "goal":
                device_id = self.goal_device.get(payload["goal_id"])
                if device_id is None:
                    raise KeyError(f"unknown goal {payload['goal_id']!r}")
                reply = self._client_for(device_id).query_goal(
                    payload["goal_id"])
            else:
                reply = self._client_for(payload["goal_id"]).query_device(
                    payload["goal_id"])
            self._send(MessageKind.STATUS_EVENT, reply)
        else:
            self._send(MessageKind.ERROR, {
                "code": "PROTOCOL",
                "message": f"clients may not send {msg.kind.value}",
                "ref_seq": msg.seq})

    def _client_for(self, device_id: str) -> StreamClient:
        client = self.clients.get(device_id)
        if client is None:
            endpoint = self.bridge.endpoints.get(device_id)
            if endpoint is None:
                raise KeyError(f"unknown device {device_id!r}")
            client = StreamClient(endpoint)
            self.clients[device_id] = client
        return client

    def _pump(self, client: StreamClient, goal_id: str) -> None:
        def pump() -> None:
            try:
                for kind, payload in client.events(goal_id):
                    if kind == "feedback":
                        self._send_safe(MessageKind.FEEDBACK_EVENT, payload)
                    else:
                        self._send_safe(MessageKind.RESULT_EVENT, payload)
            except Exception:
                pass
        threading.Thread(target=pump, name=f"pump-{goal_id}",
                         daemon=True).start()

    def _send(self, kind: MessageKind, payload: dict) -> None:
        frame = encode_message(WireMessage(
            layer=Layer.ACTION, kind=kind, seq=next(self.seq),
            payload=payload))
        with self.send_lock:
            self.socket.send(frame)

    def _send_safe(self, kind: MessageKind, payload: dict) -> None:
        try:
            self._send(kind, payload)
        except Exception:
            pass

    def close(self) -> None:
        for client in self.clients.values():
            client.close()
