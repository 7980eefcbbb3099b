"""Stream-layer WebSocket server and client.

One text frame per message, schemas from the protocol module.  The server
is a thin translation onto a DeviceRuntime; replies (STATUS_EVENT / ERROR)
answer requests in order, while FEEDBACK_EVENT / RESULT_EVENT are pushed
asynchronously to the connection that submitted the goal.  Inbound seq must
strictly increase per connection; a violation is answered with a PROTOCOL
error and the connection is dropped.
"""
from __future__ import annotations

import itertools
import logging
import queue
import threading
from typing import Optional

from websockets.sync.client import connect as ws_connect
from websockets.sync.server import serve as ws_serve

from labscan.protocol import (
    DecodeError,
    Layer,
    MessageKind,
    ProtocolError,
    SchemaError,
    WireMessage,
    decode_message,
    encode_message,
)
from labscan.runtime.core import DeviceRuntime, NotFoundError

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 30.0


class StreamError(Exception):
    """An ERROR frame received in reply to a request."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class _Connection:
    """Server-side per-connection state."""

    def __init__(self, socket, layer: Layer):
        self.socket = socket
        self.layer = layer
        self.send_lock = threading.Lock()
        self.seq = itertools.count(1)
        self.last_inbound_seq = 0

    def send(self, kind: MessageKind, payload: dict) -> None:
        frame = encode_message(WireMessage(
            layer=self.layer, kind=kind, seq=next(self.seq), payload=payload))
        with self.send_lock:
            self.socket.send(frame)

    def send_safe(self, kind: MessageKind, payload: dict) -> None:
        try:
            self.send(kind, payload)
        except Exception:
            pass   # subscriber push to a closed connection


class StreamServer:
    """Serves a DeviceRuntime's devices over the stream layer."""

    def __init__(self, runtime: DeviceRuntime, host: str = "127.0.0.1",
                 port: int = 0):
        self.runtime = runtime
        self._server = ws_serve(self._handle, host, port)
        self.host = host
        self.port = self._server.socket.getsockname()[1]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}"

    def start(self) -> "StreamServer":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="stream-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()

    # ------------------------------------------------------------- handling

    def _handle(self, socket) -> None:
        conn = _Connection(socket, Layer.STREAM)
        for frame in socket:
            try:
                msg = decode_message(frame)
            except (DecodeError, SchemaError) as exc:
                conn.send_safe(MessageKind.ERROR,
                               {"code": "PROTOCOL", "message": str(exc)})
                return
            if msg.seq <= conn.last_inbound_seq:
                conn.send_safe(MessageKind.ERROR, {
                    "code": "PROTOCOL",
                    "message": f"seq {msg.seq} does not increase "
                               f"(last {conn.last_inbound_seq})",
                    "ref_seq": msg.seq})
                return
            conn.last_inbound_seq = msg.seq
            if msg.layer is not Layer.STREAM:
                conn.send_safe(MessageKind.ERROR, {
                    "code": "PROTOCOL",
                    "message": f"layer {msg.layer.value} on a stream socket",
                    "ref_seq": msg.seq})
                return
            try:
                self._dispatch(conn, msg)
            except NotFoundError as exc:
                conn.send_safe(MessageKind.ERROR,
                               {"code": "NOT_FOUND", "message": str(exc),
                                "ref_seq": msg.seq})
            except (ValueError, ProtocolError) as exc:
                conn.send_safe(MessageKind.ERROR,
                               {"code": "BAD_REQUEST", "message": str(exc),
                                "ref_seq": msg.seq})
            except Exception as exc:   # keep serving other connections
                log.exception("stream request failed")
                conn.send_safe(MessageKind.ERROR,
                               {"code": "INTERNAL", "message": str(exc),
                                "ref_seq": msg.seq})

    def _dispatch(self, conn: _Connection, msg: WireMessage) -> None:
        payload = msg.payload
        if msg.kind is MessageKind.SUBMIT:
            goal_id = self.runtime.submit_goal(
                payload["device_id"], payload["action"], payload["params"],
                goal_id=payload.get("goal_id"),
                subscriber=self._pusher(conn))
            snap = self.runtime.poll_status(goal_id)
            conn.send(MessageKind.STATUS_EVENT, {
                "scope": "goal", "goal_id": goal_id,
                "state": snap["state"], "device_id": snap["device_id"]})
        elif msg.kind is MessageKind.CANCEL:
            ack = self.runtime.cancel_goal(payload["goal_id"])
            conn.send(MessageKind.STATUS_EVENT, {
                "scope": "goal", "goal_id": ack["goal_id"],
                "state": ack["state"], "snapshot": {"note": ack["note"]}})
        elif msg.kind is MessageKind.STATUS_QUERY:
            if payload["scope"] == "goal":
                snap = self.runtime.poll_status(payload["goal_id"])
                conn.send(MessageKind.STATUS_EVENT, {
                    "scope": "goal", "goal_id": payload["goal_id"],
                    "state": snap["state"],
                    "feedback": _jsonable(snap["feedback"]),
                    "result": _jsonable(snap["result"]),
                    "device_id": snap["device_id"]})
            else:
                status = self.runtime.device_status(payload["goal_id"])
                conn.send(MessageKind.STATUS_EVENT, {
                    "scope": "device", "device_id": status["device_id"],
                    "snapshot": _jsonable(status)})
        else:
            conn.send(MessageKind.ERROR, {
                "code": "PROTOCOL",
                "message": f"clients may not send {msg.kind.value}",
                "ref_seq": msg.seq})

    def _pusher(self, conn: _Connection):
        def push(kind: str, payload: dict) -> None:
            if kind == "feedback":
                conn.send_safe(MessageKind.FEEDBACK_EVENT, _jsonable(payload))
            elif kind == "result":
                conn.send_safe(MessageKind.RESULT_EVENT, _jsonable(payload))
        return push


def _jsonable(value):
    """Coerce runtime payloads to plain JSON.

    Driver results may hold rich objects (spectra) that only wire clients
    need flattened; in-process callers keep the originals.
    """
    if hasattr(value, "to_payload"):
        return _jsonable(value.to_payload())
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    return value


class StreamClient:
    """Blocking stream-layer client; one request in flight at a time.

    FEEDBACK/RESULT events are routed per goal and consumed via
    :meth:`events` or :meth:`wait_result`.  Methods raise
    :class:`StreamError` on ERROR replies and ``ConnectionError`` when the
    socket drops.
    """

    _CLOSED = object()

    def __init__(self, url: str, timeout_s: float = DEFAULT_TIMEOUT_S,
                 layer: Layer = Layer.STREAM):
        self.url = url
        self.timeout_s = timeout_s
        self.layer = layer
        self._socket = ws_connect(url)
        self._seq = itertools.count(1)
        self._request_lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._replies: queue.Queue = queue.Queue()
        self._events_lock = threading.Lock()
        self._goal_events: dict[str, queue.Queue] = {}
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop,
                                        name="stream-client-reader",
                                        daemon=True)
        self._reader.start()

    # ------------------------------------------------------------- requests

    def submit(self, device_id: str, action: str, params: dict,
               goal_id: str | None = None) -> dict:
        payload = {"device_id": device_id, "action": action,
                   "params": params}
        if goal_id is not None:
            payload["goal_id"] = goal_id
        return self._request(MessageKind.SUBMIT, payload)

    def cancel(self, goal_id: str) -> dict:
        return self._request(MessageKind.CANCEL, {"goal_id": goal_id})

    def query_goal(self, goal_id: str) -> dict:
        return self._request(MessageKind.STATUS_QUERY,
                             {"scope": "goal", "goal_id": goal_id})

    def query_device(self, device_id: str) -> dict:
        # goal_id doubles as the id slot for device-scope queries
        return self._request(MessageKind.STATUS_QUERY,
                             {"scope": "device", "goal_id": device_id})

    def _request(self, kind: MessageKind, payload: dict) -> dict:
        with self._request_lock:
            frame = encode_message(WireMessage(
                layer=self.layer, kind=kind, seq=next(self._seq),
                payload=payload))
            with self._send_lock:
                self._socket.send(frame)
            try:
                reply = self._replies.get(timeout=self.timeout_s)
            except queue.Empty:
                raise TimeoutError(f"no reply to {kind.value} "
                                   f"within {self.timeout_s}s")
        if reply is self._CLOSED:
            raise ConnectionError("stream connection closed")
        if reply.kind is MessageKind.ERROR:
            raise StreamError(reply.payload["code"],
                              reply.payload["message"])
        return reply.payload

    # --------------------------------------------------------------- events

    def events(self, goal_id: str):
        """Yield ("feedback"|"result", payload); stops after the result."""
        q = self._goal_queue(goal_id)
        while True:
            item = q.get(timeout=self.timeout_s)
            if item is self._CLOSED:
                raise ConnectionError("stream connection closed")
            kind, payload = item
            yield kind, payload
            if kind == "result":
                self._drop_goal_queue(goal_id)
                return

    def wait_result(self, goal_id: str,
                    timeout_s: float | None = None) -> dict:
        q = self._goal_queue(goal_id)
        deadline_timeout = timeout_s if timeout_s is not None else self.timeout_s
        while True:
            item = q.get(timeout=deadline_timeout)
            if item is self._CLOSED:
                raise ConnectionError("stream connection closed")
            kind, payload = item
            if kind == "result":
                self._drop_goal_queue(goal_id)
                return payload

    def _goal_queue(self, goal_id: str) -> queue.Queue:
        with self._events_lock:
            return self._goal_events.setdefault(goal_id, queue.Queue())

    def _drop_goal_queue(self, goal_id: str) -> None:
        with self._events_lock:
            self._goal_events.pop(goal_id, None)

    # ------------------------------------------------------------- plumbing

    def _read_loop(self) -> None:
        try:
            for frame in self._socket:
                try:
                    msg = decode_message(frame)
                except (DecodeError, SchemaError):
                    log.warning("dropping undecodable frame")
                    continue
                if msg.kind is MessageKind.FEEDBACK_EVENT:
                    self._goal_queue(msg.payload["goal_id"]).put(
                        ("feedback", msg.payload))
                elif msg.kind is MessageKind.RESULT_EVENT:
                    self._goal_queue(msg.payload["goal_id"]).put(
                        ("result", msg.payload))
                else:
                    self._replies.put(msg)
        except Exception:
            pass
        finally:
            self._closed = True
            self._replies.put(self._CLOSED)
            with self._events_lock:
                for q in self._goal_events.values():
                    q.put(self._CLOSED)

    def close(self) -> None:
        try:
            self._socket.close()
        except Exception:
            pass
