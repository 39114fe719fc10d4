"""Framed bidirectional channel between the robot side and the visualization side.

Wire format: a 4-byte big-endian payload length, one type byte, then the
payload. Payloads are UTF-8 JSON objects except for ultrasound frames,
whose pixels stay binary behind a fixed 16-byte header. A console bridge
relays the same payload objects as WebSocket JSON text frames.
"""
from __future__ import annotations

import json
import queue
import socket
import struct
import threading
from dataclasses import dataclass

MAX_PAYLOAD = 16 * 1024 * 1024


class OversizePayload(ValueError):
    pass


class CorruptLength(RuntimeError):
    """Announced length exceeds the frame cap; the stream cannot be trusted."""


class UnknownType(ValueError):
    pass


class BindError(OSError):
    pass


TYPE_ROBOT_STATE = 0x01
TYPE_COMMAND = 0x02
TYPE_AGENT_EVENT = 0x03
TYPE_ULTRASOUND_FRAME = 0x04
TYPE_HEARTBEAT = 0x05


@dataclass(frozen=True)
class RobotState:
    t_s: float
    probe: tuple[float, float, float]
    orientation_wxyz: tuple[float, float, float, float]
    force_n: float
    phase: str

    def __post_init__(self) -> None:
        if self.force_n < 0.0:
            raise ValueError("contact force cannot be negative")
        object.__setattr__(self, "probe", tuple(float(v) for v in self.probe))
        object.__setattr__(
            self, "orientation_wxyz", tuple(float(v) for v in self.orientation_wxyz)
        )


@dataclass(frozen=True)
class Command:
    cmd: str  # start_scan | stop_scan | set_path
    path: dict | None = None

    def __post_init__(self) -> None:
        if self.cmd not in ("start_scan", "stop_scan", "set_path"):
            raise ValueError(f"unknown command {self.cmd!r}")


@dataclass(frozen=True)
class AgentEvent:
    speaker: str
    text: str
    t_s: float


@dataclass(frozen=True)
class UltrasoundFrame:
    seq: int
    t_ms: int
    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if len(self.pixels) != self.width * self.height:
            raise ValueError(
                f"pixel buffer holds {len(self.pixels)} bytes for "
                f"{self.width}x{self.height}"
            )


@dataclass(frozen=True)
class Heartbeat:
    pass


Message = RobotState | Command | AgentEvent | UltrasoundFrame | Heartbeat

_TYPE_IDS = {
    RobotState: TYPE_ROBOT_STATE,
    Command: TYPE_COMMAND,
    AgentEvent: TYPE_AGENT_EVENT,
    UltrasoundFrame: TYPE_ULTRASOUND_FRAME,
    Heartbeat: TYPE_HEARTBEAT,
}


def _dumps(obj: dict) -> bytes:
    # Canonical text payload: compact separators, declared field order.
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def _encode_payload(m: Message) -> bytes:
    if isinstance(m, RobotState):
        return _dumps(
            {
                "t_s": m.t_s,
                "phase": m.phase,
                "probe": list(m.probe),
                "force_n": m.force_n,
                "orientation_wxyz": list(m.orientation_wxyz),
            }
        )
    if isinstance(m, Command):
        obj = {"cmd": m.cmd}
        if m.path is not None:
            obj["path"] = m.path
        return _dumps(obj)
    if isinstance(m, AgentEvent):
        return _dumps({"speaker": m.speaker, "text": m.text, "t_s": m.t_s})
    if isinstance(m, UltrasoundFrame):
        header = struct.pack(">IIII", m.seq, m.t_ms, m.width, m.height)
        return header + m.pixels
    if isinstance(m, Heartbeat):
        return b""
    raise TypeError(f"not a protocol message: {m!r}")


def _decode_payload(type_id: int, payload: bytes) -> Message:
    if type_id == TYPE_ROBOT_STATE:
        obj = json.loads(payload)
        return RobotState(
            float(obj["t_s"]), tuple(obj["probe"]),
            tuple(obj["orientation_wxyz"]), float(obj["force_n"]), str(obj["phase"]),
        )
    if type_id == TYPE_COMMAND:
        obj = json.loads(payload)
        return Command(str(obj["cmd"]), obj.get("path"))
    if type_id == TYPE_AGENT_EVENT:
        obj = json.loads(payload)
        return AgentEvent(str(obj["speaker"]), str(obj["text"]), float(obj["t_s"]))
    if type_id == TYPE_ULTRASOUND_FRAME:
        if len(payload) < 16:
            raise ValueError("ultrasound frame payload shorter than its header")
        seq, t_ms, width, height = struct.unpack(">IIII", payload[:16])
        return UltrasoundFrame(seq, t_ms, width, height, payload[16:])
    if type_id == TYPE_HEARTBEAT:
        return Heartbeat()
    raise UnknownType(f"unregistered type id 0x{type_id:02x}")


def encode_frame(m: Message) -> bytes:
    """len:u32be | type:u8 | payload."""
    payload = _encode_payload(m)
    if len(payload) > MAX_PAYLOAD:
        raise OversizePayload(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return struct.pack(">IB", len(payload), _TYPE_IDS[type(m)]) + payload


class FrameDecoder:
    """Stream reassembly: feed arbitrary chunks, get complete messages out.

    Unknown type ids skip just that frame (a note lands in `diagnostics`);
    an impossible length is connection-fatal and raises CorruptLength.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.diagnostics: list[str] = []

    def feed(self, chunk: bytes) -> list[Message]:
        self._buf.extend(chunk)
        out: list[Message] = []
        while len(self._buf) >= 5:
            (length,) = struct.unpack(">I", self._buf[:4])
            if length > MAX_PAYLOAD:
                raise CorruptLength(f"announced payload of {length} bytes")
            if len(self._buf) < 5 + length:
                break
            type_id = self._buf[4]
            payload = bytes(self._buf[5 : 5 + length])
            del self._buf[: 5 + length]
            try:
                out.append(_decode_payload(type_id, payload))
            except UnknownType as e:
                self.diagnostics.append(str(e))
        return out


def message_to_bridge_obj(m: Message) -> dict | None:
    """The WebSocket-bridge JSON object for a message (None if not bridged)."""
    if isinstance(m, RobotState):
        return {
            "type": "state",
            "t_s": m.t_s,
            "phase": m.phase,
            "probe": list(m.probe),
            "force_n": m.force_n,
            "orientation_wxyz": list(m.orientation_wxyz),
        }
    if isinstance(m, AgentEvent):
        return {"type": "chat", "speaker": m.speaker, "text": m.text, "t_s": m.t_s}
    if isinstance(m, Command):
        obj = {"type": "command", "cmd": m.cmd}
        if m.path is not None:
            obj["path"] = m.path
        return obj
    return None


def bridge_obj_to_message(obj: dict) -> Message:
    kind = obj.get("type")
    if kind == "command":
        return Command(str(obj["cmd"]), obj.get("path"))
    if kind == "chat":
        return AgentEvent(str(obj.get("speaker", "patient")), str(obj["text"]),
                          float(obj.get("t_s", 0.0)))
    if kind == "state":
        return RobotState(
            float(obj["t_s"]), tuple(obj["probe"]),
            tuple(obj.get("orientation_wxyz", (1.0, 0.0, 0.0, 0.0))),
            float(obj["force_n"]), str(obj["phase"]),
        )
    raise ValueError(f"unknown bridge frame type {kind!r}")


class ProtocolServer:
    """TCP endpoint: broadcasts state, funnels inbound messages to one queue.

    One acceptor thread plus a reader thread per client. Writes happen on
    the broadcaster's thread under a per-client lock; a failing client is
    dropped without disturbing the session.
    """

    def __init__(self, host: str, port: int, inbound: "queue.Queue[Message]"):
        self.host = host
        self.port = port
        self.inbound = inbound
        self._listener: socket.socket | None = None
        self._clients: dict[socket.socket, threading.Lock] = {}
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._accept_thread: threading.Thread | None = None

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self.port))
        except OSError as e:
            listener.close()
            raise BindError(f"cannot bind {self.host}:{self.port}: {e}") from e
        listener.listen()
        listener.settimeout(0.2)
        self._listener = listener
        self.port = listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._clients_lock:
                self._clients[conn] = threading.Lock()
            threading.Thread(target=self._reader_loop, args=(conn,), daemon=True).start()

    def _reader_loop(self, conn: socket.socket) -> None:
        decoder = FrameDecoder()
        try:
            while not self._stop.is_set():
                data = conn.recv(4096)
                if not data:
                    break
                for msg in decoder.feed(data):
                    if isinstance(msg, (Command, AgentEvent)):
                        self.inbound.put(msg)
        except (CorruptLength, OSError):
            pass
        finally:
            self._drop(conn)

    def _drop(self, conn: socket.socket) -> None:
        with self._clients_lock:
            self._clients.pop(conn, None)
        try:
            conn.close()
        except OSError:
            pass

    def broadcast(self, m: Message) -> None:
        frame = encode_frame(m)
        with self._clients_lock:
            targets = list(self._clients.items())
        for conn, lock in targets:
            try:
                with lock:
                    conn.sendall(frame)
            except OSError:
                self._drop(conn)

    def client_count(self) -> int:
        with self._clients_lock:
            return len(self._clients)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._clients_lock:
            conns = list(self._clients)
        for conn in conns:
            self._drop(conn)
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=1.0)


class ConsoleBridge:
    """WebSocket side of the channel for the browser console.

    Relays broadcast messages as JSON text frames and feeds received
    command/chat frames into the same inbound queue as the TCP endpoint.
    """

    def __init__(self, host: str, port: int, inbound: "queue.Queue[Message]"):
        self.host = host
        self.port = port
        self.inbound = inbound
        self._server = None
        self._thread: threading.Thread | None = None
        self._connections: set = set()
        self._lock = threading.Lock()

    def start(self) -> None:
        from websockets.sync.server import serve as ws_serve

        try:
            self._server = ws_serve(self._handler, self.host, self.port)
        except OSError as e:
            raise BindError(f"cannot bind ws {self.host}:{self.port}: {e}") from e
        self.port = self._server.socket.getsockname()[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def _handler(self, connection) -> None:
        with self._lock:
            self._connections.add(connection)
        try:
            for raw in connection:
                try:
                    obj = json.loads(raw)
                    msg = bridge_obj_to_message(obj)
                except (ValueError, KeyError):
                    continue
                if isinstance(msg, (Command, AgentEvent)):
                    self.inbound.put(msg)
        except Exception:
            pass
        finally:
            with self._lock:
                self._connections.discard(connection)

    def broadcast(self, m: Message) -> None:
        obj = message_to_bridge_obj(m)
        if obj is None:
            return
        text = json.dumps(obj)
        with self._lock:
            targets = list(self._connections)
        for conn in targets:
            try:
                conn.send(text)
            except Exception:
                with self._lock:
                    self._connections.discard(conn)

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=2.0)


def synthetic_ultrasound_frame(seq: int, t_ms: int, width: int = 64, height: int = 48) -> UltrasoundFrame:
    """Stub image: a diagonal gradient that scrolls with the sequence number."""
    pixels = bytes(
        (x + y + seq) % 256 for y in range(height) for x in range(width)
    )
    return UltrasoundFrame(seq, t_ms, width, height, pixels)
