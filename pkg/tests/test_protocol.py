import json
import queue
import socket
import threading
import time

import numpy as np
import pytest

from sonosim.protocol import (
    AgentEvent,
    Command,
    ConsoleBridge,
    CorruptLength,
    FrameDecoder,
    Heartbeat,
    MAX_PAYLOAD,
    OversizePayload,
    ProtocolServer,
    RobotState,
    UltrasoundFrame,
    bridge_obj_to_message,
    encode_frame,
    message_to_bridge_obj,
    synthetic_ultrasound_frame,
)


def rand_message(rng) -> object:
    kind = rng.integers(0, 5)
    if kind == 0:
        return RobotState(
            float(rng.uniform(0, 1000)),
            tuple(float(v) for v in rng.normal(size=3)),
            tuple(float(v) for v in rng.normal(size=4)),
            float(rng.uniform(0, 20)),
            str(rng.choice(["setup", "resting", "execution", "complete", "aborted"])),
        )
    if kind == 1:
        cmd = str(rng.choice(["start_scan", "stop_scan", "set_path"]))
        path = {"speed_mps": float(rng.uniform(0.001, 0.1))} if cmd == "set_path" else None
        return Command(cmd, path)
    if kind == 2:
        words = ["hello", "scan", "stop", "ready", "ok", "échographie", "了解"]
        text = " ".join(rng.choice(words, size=int(rng.integers(1, 6))))
        return AgentEvent(str(rng.choice(["patient", "agent"])), text, float(rng.uniform(0, 500)))
    if kind == 3:
        w, h = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        return UltrasoundFrame(
            int(rng.integers(0, 2**32)), int(rng.integers(0, 2**32)),
            w, h, bytes(rng.integers(0, 256, size=w * h, dtype=np.uint8)),
        )
    return Heartbeat()


class TestEncodeFrame:
    def test_heartbeat_bytes(self):
        assert encode_frame(Heartbeat()) == b"\x00\x00\x00\x00\x05"

    def test_start_scan_payload(self):
        frame = encode_frame(Command("start_scan"))
        assert frame[:4] == len(b'{"cmd":"start_scan"}').to_bytes(4, "big")
        assert frame[4] == 0x02
        assert frame[5:] == b'{"cmd":"start_scan"}'

    def test_round_trip_random_messages(self):
        rng = np.random.default_rng(70)
        decoder = FrameDecoder()
        for _ in range(10_000):
            m = rand_message(rng)
            out = decoder.feed(encode_frame(m))
            assert out == [m]

    def test_oversize_payload_rejected(self):
        big = UltrasoundFrame(0, 0, 4096, 4097, bytes(4096 * 4097))
        with pytest.raises(OversizePayload):
            encode_frame(big)

    def test_robot_state_rejects_negative_force(self):
        with pytest.raises(ValueError):
            RobotState(0.0, (0, 0, 0), (1, 0, 0, 0), -1.0, "resting")

    def test_frame_pixel_length_checked(self):
        with pytest.raises(ValueError):
            UltrasoundFrame(0, 0, 4, 4, b"\x00" * 15)


class TestFrameDecoder:
    def test_single_byte_chunks(self):
        frame = encode_frame(Heartbeat())
        decoder = FrameDecoder()
        for i, b in enumerate(frame):
            out = decoder.feed(bytes([b]))
            if i < len(frame) - 1:
                assert out == []
        assert out == [Heartbeat()]

    def test_two_messages_one_chunk(self):
        m1 = Command("start_scan")
        m2 = AgentEvent("agent", "hello", 1.0)
        decoder = FrameDecoder()
        out = decoder.feed(encode_frame(m1) + encode_frame(m2))
        assert out == [m1, m2]

    def test_empty_chunk(self):
        decoder = FrameDecoder()
        assert decoder.feed(b"") == []

    def test_chunking_invariance(self):
        rng = np.random.default_rng(71)
        messages = [rand_message(rng) for _ in range(100)]
        stream = b"".join(encode_frame(m) for m in messages)
        for _ in range(100):
            n_cuts = int(rng.integers(0, 40))
            cuts = sorted(rng.integers(0, len(stream) + 1, size=n_cuts).tolist())
            decoder = FrameDecoder()
            out = []
            prev = 0
            for cut in cuts + [len(stream)]:
                out.extend(decoder.feed(stream[prev:cut]))
                prev = cut
            assert out == messages

    def test_unknown_type_skips_frame(self):
        bogus = (5).to_bytes(4, "big") + bytes([0x7F]) + b"hello"
        decoder = FrameDecoder()
        out = decoder.feed(bogus + encode_frame(Heartbeat()))
        assert out == [Heartbeat()]
        assert decoder.diagnostics

    def test_corrupt_length_fatal(self):
        decoder = FrameDecoder()
        with pytest.raises(CorruptLength):
            decoder.feed((MAX_PAYLOAD + 1).to_bytes(4, "big") + b"\x01")


class TestBridgeMapping:
    def test_state_round_trip(self):
        m = RobotState(1.5, (0.1, 0.2, 0.3), (1, 0, 0, 0), 7.9, "execution")
        obj = message_to_bridge_obj(m)
        assert obj["type"] == "state"
        assert bridge_obj_to_message(obj) == m

    def test_chat_round_trip(self):
        m = AgentEvent("patient", "please begin", 4.0)
        obj = message_to_bridge_obj(m)
        assert obj["type"] == "chat"
        assert bridge_obj_to_message(obj) == m

    def test_command_round_trip(self):
        m = Command("stop_scan")
        obj = message_to_bridge_obj(m)
        assert obj == {"type": "command", "cmd": "stop_scan"}
        assert bridge_obj_to_message(obj) == m

    def test_frames_not_bridged(self):
        assert message_to_bridge_obj(synthetic_ultrasound_frame(1, 2)) is None

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError):
            bridge_obj_to_message({"type": "mystery"})


def recv_messages(sock, n, timeout=5.0):
    decoder = FrameDecoder()
    out = []
    sock.settimeout(timeout)
    deadline = time.monotonic() + timeout
    while len(out) < n and time.monotonic() < deadline:
        try:
            data = sock.recv(4096)
        except socket.timeout:
            break
        if not data:
            break
        out.extend(decoder.feed(data))
    return out


@pytest.fixture
def server():
    inbound = queue.Queue()
    srv = ProtocolServer("127.0.0.1", 0, inbound)
    srv.start()
    yield srv, inbound
    srv.stop()


def connect(port) -> socket.socket:
    s = socket.create_connection(("127.0.0.1", port), timeout=5.0)
    s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return s


def wait_for_clients(srv, n, timeout=5.0):
    deadline = time.monotonic() + timeout
    while srv.client_count() < n and time.monotonic() < deadline:
        time.sleep(0.01)
    assert srv.client_count() >= n


class TestProtocolServer:
    def test_two_clients_receive_identical_sequences(self, server):
        srv, _ = server
        c1, c2 = connect(srv.port), connect(srv.port)
        try:
            wait_for_clients(srv, 2)
            sent = [
                RobotState(0.1 * i, (0.01 * i, 0.0, 0.0), (1, 0, 0, 0), 7.9, "execution")
                for i in range(1, 21)
            ]
            for m in sent:
                srv.broadcast(m)
            got1 = recv_messages(c1, 20)
            got2 = recv_messages(c2, 20)
            assert got1 == sent
            assert got2 == sent
            stamps = [m.t_s for m in got1]
            assert stamps == sorted(stamps)
        finally:
            c1.close()
            c2.close()

    def test_inbound_command_reaches_queue(self, server):
        srv, inbound = server
        c = connect(srv.port)
        try:
            wait_for_clients(srv, 1)
            c.sendall(encode_frame(Command("start_scan")))
            msg = inbound.get(timeout=5.0)
            assert msg == Command("start_scan")
        finally:
            c.close()

    def test_garbage_client_isolated(self, server):
        srv, inbound = server
        good, bad = connect(srv.port), connect(srv.port)
        try:
            wait_for_clients(srv, 2)
            bad.sendall(b"\xff" * 64)  # announces an absurd length
            deadline = time.monotonic() + 5.0
            while srv.client_count() > 1 and time.monotonic() < deadline:
                time.sleep(0.01)
            assert srv.client_count() == 1
            srv.broadcast(Heartbeat())
            assert recv_messages(good, 1) == [Heartbeat()]
        finally:
            good.close()
            bad.close()

    def test_client_disconnect_does_not_break_broadcast(self, server):
        srv, _ = server
        c1, c2 = connect(srv.port), connect(srv.port)
        wait_for_clients(srv, 2)
        c1.close()
        for _ in range(5):
            srv.broadcast(Heartbeat())
            time.sleep(0.01)
        assert recv_messages(c2, 5) == [Heartbeat()] * 5
        c2.close()


class TestConsoleBridge:
    def test_ws_round_trip(self):
        from websockets.sync.client import connect as ws_connect

        inbound = queue.Queue()
        bridge = ConsoleBridge("127.0.0.1", 0, inbound)
        bridge.start()
        try:
            with ws_connect(f"ws://127.0.0.1:{bridge.port}") as ws:
                deadline = time.monotonic() + 5.0
                while not bridge._connections and time.monotonic() < deadline:
                    time.sleep(0.01)
                state = RobotState(1.0, (0, 0, 0), (1, 0, 0, 0), 7.9, "resting")
                bridge.broadcast(state)
                obj = json.loads(ws.recv(timeout=5.0))
                assert obj["type"] == "state"
                assert obj["force_n"] == 7.9
                ws.send(json.dumps({"type": "command", "cmd": "start_scan"}))
                assert inbound.get(timeout=5.0) == Command("start_scan")
                ws.send(json.dumps({"type": "chat", "speaker": "patient", "text": "hi"}))
                msg = inbound.get(timeout=5.0)
                assert isinstance(msg, AgentEvent)
                assert msg.text == "hi"
        finally:
            bridge.stop()


def test_synthetic_frame_shape():
    frame = synthetic_ultrasound_frame(3, 1500, width=32, height=16)
    assert len(frame.pixels) == 32 * 16
    decoded = FrameDecoder().feed(encode_frame(frame))
    assert decoded == [frame]
