import json
import socket
import struct
import threading
import time

import numpy as np
import pytest

from ficsim.harness import run_scenario
from ficsim.scenario import SCHEMA_VERSION, InputRow, parse_config, write_master_csv
from ficsim.server import ServeSession, WireClient, encode_frame


def serve_raw(duration=0.2, decimation=5):
    return {
        "duration": duration,
        "dt": 0.001,
        "plant_substeps": 4,
        "arms": [{"preset": "planar3", "initial_q": [0.4, 1.3, 0.8]}],
        "master": {"workspace_radius": 0.10, "input": {"type": "live"}},
        "admittance": {"enabled": False},
        "serve": {"decimation": decimation, "realtime": False},
    }


@pytest.fixture
def session(tmp_path):
    cfg = parse_config(serve_raw(), name="live_test")
    sess = ServeSession(cfg, port=0, out_dir=tmp_path)
    result = {}
    thread = threading.Thread(
        target=lambda: result.setdefault("trace", sess.serve_forever(max_wall_s=30.0)),
        daemon=True)
    thread.start()
    yield sess, result
    sess.stop()
    thread.join(timeout=35.0)


def drive_rows(client, rows, finish=True):
    for r in rows:
        client.send({"type": "master_input", "t": r.t, "mode": r.mode,
                     "x_M": list(r.x_m), "v_M": list(r.v_m), "K_H": r.k_h})
    if finish:
        client.send({"type": "control", "action": "finish"})


def script_rows(duration, period=0.01):
    rows = []
    t = 0.0
    while t < duration:
        x = 0.02 * np.sin(2 * np.pi * t / 0.1)
        rows.append(InputRow(round(t, 6), "position",
                             np.array([1, 0, 0, 0, x, 0.0, 0.0]), np.zeros(6), 0.5))
        t += period
    return rows


def test_handshake_and_completion(session, tmp_path):
    sess, result = session
    client = WireClient("127.0.0.1", sess.port)
    hello = client.hello()
    assert hello["type"] == "hello"
    assert hello["schema_version"] == SCHEMA_VERSION
    drive_rows(client, script_rows(0.2))
    msgs = client.drain("done", timeout=30.0)
    steps = [m for m in msgs if m["type"] == "step"]
    assert steps, "no telemetry received"
    assert steps[0]["t"] == 0.0
    done = msgs[-1]
    assert done["ticks"] == 200
    client.close()


def test_schema_mismatch_rejected(session):
    sess, _ = session
    client = WireClient("127.0.0.1", sess.port)
    reply = client.hello(schema_version=99)
    assert reply["type"] == "error"
    assert reply["reason"] == "schema_mismatch"
    client.close()


def test_hello_required_before_input(session):
    sess, _ = session
    client = WireClient("127.0.0.1", sess.port)
    client.send({"type": "master_input", "t": 0.0})
    reply = client.recv()
    assert reply["type"] == "error"
    client.close()


def test_live_equals_scripted_csv(tmp_path):
    # the same 100 Hz command stream through the socket and through a CSV
    # must produce identical traces
    rows = script_rows(0.2)
    cfg = parse_config(serve_raw(), name="live_test")
    sess = ServeSession(cfg, port=0, out_dir=tmp_path / "live")
    holder = {}
    thread = threading.Thread(
        target=lambda: holder.setdefault("trace", sess.serve_forever(max_wall_s=60.0)),
        daemon=True)
    thread.start()
    client = WireClient("127.0.0.1", sess.port)
    client.hello()
    drive_rows(client, rows)
    client.drain("done", timeout=60.0)
    client.close()
    thread.join(timeout=60.0)
    live_trace = holder["trace"]
    assert live_trace is not None

    csv_path = tmp_path / "master.csv"
    write_master_csv(csv_path, rows)
    raw = serve_raw()
    raw["master"]["input"] = {"type": "csv", "path": str(csv_path)}
    cfg2 = parse_config(raw, base_dir=tmp_path, name="scripted")
    res = run_scenario(cfg2, seed=cfg.seed, out_dir=tmp_path / "headless")

    live = np.loadtxt(live_trace, delimiter=",", skiprows=1)
    headless = np.loadtxt(res.trace_path, delimiter=",", skiprows=1)
    np.testing.assert_allclose(live, headless, atol=1e-9)


def test_mode_toggle_reflected_next_tick(tmp_path):
    cfg = parse_config(serve_raw(duration=0.05, decimation=1), name="live_test")
    sess = ServeSession(cfg, port=0, out_dir=tmp_path)
    holder = {}
    thread = threading.Thread(
        target=lambda: holder.setdefault("trace", sess.serve_forever(max_wall_s=30.0)),
        daemon=True)
    thread.start()
    client = WireClient("127.0.0.1", sess.port)
    client.hello()
    rows = []
    for k in range(50):
        t = k * 1e-3
        mode = "velocity" if t >= 0.02 else "position"
        rows.append(InputRow(t, mode, np.array([1, 0, 0, 0, 0, 0, 0.0]),
                             np.array([0, 0, 0, 0.1, 0, 0.0]), 0.0))
    drive_rows(client, rows)
    msgs = client.drain("done", timeout=30.0)
    client.close()
    thread.join(timeout=30.0)
    steps = [m for m in msgs if m["type"] == "step"]
    # in velocity mode the command integrates 0.1 m/s: visible movement of
    # m_xd4 starting right after the toggle tick
    xs = {round(s["t"], 3): s["m_xd4"] for s in steps}
    assert abs(xs[0.019] - xs[0.0]) < 1e-12
    assert xs[0.021] > xs[0.0]


def test_websocket_transport(session):
    sess, _ = session

    # hand-rolled websocket client: handshake + masked text frames
    sock = socket.create_connection(("127.0.0.1", sess.port), timeout=10.0)
    key = "dGhlIHNhbXBsZSBub25jZQ=="
    sock.sendall((f"GET / HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\n"
                  f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
                  f"Sec-WebSocket-Version: 13\r\n\r\n").encode())
    head = b""
    while b"\r\n\r\n" not in head:
        head += sock.recv(4096)
    assert b"101" in head.split(b"\r\n")[0]

    def ws_send(msg):
        payload = json.dumps(msg).encode()
        mask = b"\x01\x02\x03\x04"
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        header = bytearray([0x81])
        if len(payload) < 126:
            header.append(0x80 | len(payload))
        else:
            header.append(0x80 | 126)
            header.extend(struct.pack(">H", len(payload)))
        sock.sendall(bytes(header) + mask + masked)

    def ws_recv():
        buf = b""
        while True:
            buf += sock.recv(65536)
            if len(buf) < 2:
                continue
            ln = buf[1] & 0x7F
            idx = 2
            if ln == 126:
                ln = struct.unpack(">H", buf[2:4])[0]
                idx = 4
            if len(buf) >= idx + ln:
                return json.loads(buf[idx:idx + ln])

    ws_send({"type": "hello", "schema_version": SCHEMA_VERSION})
    hello = ws_recv()
    assert hello["type"] == "hello"
    sock.close()
