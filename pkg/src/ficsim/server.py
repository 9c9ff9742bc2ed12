"""Live session endpoint: the scenario loop driven by a remote operator.

The wire protocol is length-prefixed JSON (4-byte big-endian length +
UTF-8 payload) over a TCP socket.  Browser clients can speak the same
JSON messages over a WebSocket: the listener sniffs the first bytes of
a connection and upgrades when it sees an HTTP handshake.

Messages
  server -> client: {type: hello, schema_version, scenario, dt, decimation}
                    {type: step, t, ...trace columns...}
                    {type: done, trace}  /  {type: error, reason}
  client -> server: {type: hello, schema_version}
                    {type: master_input, t, mode, x_M[7], v_M[6], K_H}
                    {type: control, action: start|pause|reset|finish}

Scripted and live inputs are mutually exclusive per session: serve mode
ignores any input script in the config.  Input rows are consumed with
the same zero-order-hold rule as scripted CSV rows, which makes a
recorded session byte-replayable through the headless runner.
"""

from __future__ import annotations

import base64
import bisect
import hashlib
import json
import select
import socket
import struct
import time
from pathlib import Path

import numpy as np

from .geometry import Pose, Twist
from .harness import Simulation
from .scenario import SCHEMA_VERSION, InputRow, ScenarioConfig

_WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
# bounded outgoing telemetry queue; oldest frames drop on backpressure
_OUT_QUEUE_LIMIT = 256


class ProtocolError(RuntimeError):
    pass


def encode_frame(msg: dict) -> bytes:
    payload = json.dumps(msg, separators=(",", ":"), sort_keys=True).encode()
    return struct.pack(">I", len(payload)) + payload


class _LengthPrefixCodec:
    def __init__(self):
        self.buf = bytearray()

    def feed(self, data: bytes):
        self.buf.extend(data)
        out = []
        while len(self.buf) >= 4:
            (length,) = struct.unpack(">I", self.buf[:4])
            if length > 1 << 22:
                raise ProtocolError("oversized frame")
            if len(self.buf) < 4 + length:
                break
            payload = bytes(self.buf[4:4 + length])
            del self.buf[:4 + length]
            out.append(json.loads(payload))
        return out

    def encode(self, msg: dict) -> bytes:
        return encode_frame(msg)


class _WebSocketCodec:
    """Server-side WebSocket framing (text frames, one JSON message each)."""

    def __init__(self):
        self.buf = bytearray()

    def feed(self, data: bytes):
        self.buf.extend(data)
        out = []
        while True:
            frame = self._next_frame()
            if frame is None:
                return out
            opcode, payload = frame
            if opcode == 0x8:  # close
                raise ProtocolError("client closed the websocket")
            if opcode in (0x1, 0x2):
                out.append(json.loads(payload))
            # ping/pong ignored: poll cadence keeps the link alive

    def _next_frame(self):
        if len(self.buf) < 2:
            return None
        b0, b1 = self.buf[0], self.buf[1]
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        idx = 2
        if length == 126:
            if len(self.buf) < 4:
                return None
            (length,) = struct.unpack(">H", self.buf[2:4])
            idx = 4
        elif length == 127:
            if len(self.buf) < 10:
                return None
            (length,) = struct.unpack(">Q", self.buf[2:10])
            idx = 10
        mask = b""
        if masked:
            if len(self.buf) < idx + 4:
                return None
            mask = bytes(self.buf[idx:idx + 4])
            idx += 4
        if len(self.buf) < idx + length:
            return None
        payload = bytearray(self.buf[idx:idx + length])
        if masked:
            for i in range(len(payload)):
                payload[i] ^= mask[i % 4]
        del self.buf[:idx + length]
        return opcode, bytes(payload)

    def encode(self, msg: dict) -> bytes:
        payload = json.dumps(msg, separators=(",", ":"), sort_keys=True).encode()
        header = bytearray([0x81])
        n = len(payload)
        if n < 126:
            header.append(n)
        elif n < 1 << 16:
            header.append(126)
            header.extend(struct.pack(">H", n))
        else:
            header.append(127)
            header.extend(struct.pack(">Q", n))
        return bytes(header) + payload


def _websocket_accept(request: bytes, conn: socket.socket) -> bool:
    try:
        head = request.decode("latin-1")
        lines = head.split("\r\n")
        key = None
        for line in lines[1:]:
            if line.lower().startswith("sec-websocket-key:"):
                key = line.split(":", 1)[1].strip()
        if key is None:
            return False
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_MAGIC).encode()).digest()).decode()
        conn.sendall(
            ("HTTP/1.1 101 Switching Protocols\r\n"
             "Upgrade: websocket\r\nConnection: Upgrade\r\n"
             f"Sec-WebSocket-Accept: {accept}\r\n\r\n").encode())
        return True
    except Exception:
        return False


class _LiveInputs:
    """Received master-input rows, sampled with the scripted-CSV rule
    (zero-order hold on the newest row at or before the tick time)."""

    def __init__(self):
        self.rows = [InputRow(-1.0, "position",
                              np.array([1.0, 0, 0, 0, 0, 0, 0]),
                              np.zeros(6), 0.0)]
        self.times = [-1.0]
        self.latest_t = -np.inf

    def push(self, msg: dict):
        row = InputRow(
            t=float(msg["t"]),
            mode=str(msg.get("mode", "position")),
            x_m=np.asarray(msg.get("x_M", [1, 0, 0, 0, 0, 0, 0]), dtype=float).reshape(7),
            v_m=np.asarray(msg.get("v_M", [0, 0, 0, 0, 0, 0]), dtype=float).reshape(6),
            k_h=float(msg.get("K_H", 0.0)),
        )
        if row.mode not in ("position", "velocity"):
            raise ProtocolError(f"unknown master mode {row.mode!r}")
        idx = bisect.bisect_right(self.times, row.t)
        self.rows.insert(idx, row)
        self.times.insert(idx, row.t)
        self.latest_t = self.times[-1]

    def sample(self, t: float):
        idx = max(0, bisect.bisect_right(self.times, t + 1e-12) - 1)
        row = self.rows[idx]
        return (row.mode, Pose.from_array(row.x_m), Twist.from_array(row.v_m),
                row.k_h)


class ServeSession:
    """One live scenario session bound to a listening socket."""

    def __init__(self, cfg: ScenarioConfig, port: int, host: str = "127.0.0.1",
                 out_dir=None, realtime: bool | None = None):
        self.cfg = cfg
        self.realtime = cfg.serve_realtime if realtime is None else realtime
        self.decimation = max(1, cfg.serve_decimation)
        self.out_dir = Path(out_dir) if out_dir else None
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(1)
        self.port = self.listener.getsockname()[1]
        self._stop = False
        self._reset()

    def _reset(self):
        self.sim = Simulation(self.cfg)
        self.inputs = _LiveInputs()
        self.running = False
        self.finishing = False
        self.rows = []
        self.n_ticks = int(round(self.cfg.duration / self.cfg.dt))

    def _hello(self) -> dict:
        return {"type": "hello", "schema_version": SCHEMA_VERSION,
                "scenario": self.cfg.name, "dt": self.cfg.dt,
                "decimation": self.decimation,
                "arms": [m.n for m in self.cfg.arms]}

    def stop(self):
        self._stop = True
        try:
            self.listener.close()
        except OSError:
            pass

    def serve_forever(self, max_wall_s: float | None = None):
        """Accept clients until one session runs to completion."""
        deadline = time.monotonic() + max_wall_s if max_wall_s else None
        try:
            while not self._stop:
                if deadline and time.monotonic() > deadline:
                    return None
                try:
                    ready, _, _ = select.select([self.listener], [], [], 0.2)
                except (OSError, ValueError):
                    return None
                if not ready:
                    continue
                try:
                    conn, _ = self.listener.accept()
                except OSError:
                    return None
                result = self._run_client(conn, deadline)
                if result is not None:
                    return result
                self._reset()  # reconnect => fresh session
            return None
        finally:
            try:
                self.listener.close()
            except OSError:
                pass

    def _run_client(self, conn: socket.socket, deadline):
        conn.setblocking(False)
        codec = None
        out_queue = []
        greeted = False
        sniff = bytearray()

        def send(msg):
            out_queue.append(codec.encode(msg))
            while len(out_queue) > _OUT_QUEUE_LIMIT:
                out_queue.pop(1 if len(out_queue) > 1 else 0)

        next_wall = time.monotonic()
        try:
            while not self._stop:
                if deadline and time.monotonic() > deadline:
                    return None
                try:
                    data = conn.recv(65536)
                    if data == b"":
                        return None  # disconnect -> session reset
                except BlockingIOError:
                    data = b""
                if data:
                    if codec is None:
                        sniff.extend(data)
                        if sniff.startswith(b"GET"):
                            if b"\r\n\r\n" not in sniff:
                                continue
                            head, _, rest = bytes(sniff).partition(b"\r\n\r\n")
                            if not _websocket_accept(head, conn):
                                return None
                            codec = _WebSocketCodec()
                            data = rest
                        else:
                            codec = _LengthPrefixCodec()
                            data = bytes(sniff)
                        sniff.clear()
                    for msg in codec.feed(data):
                        kind = msg.get("type")
                        if kind == "hello":
                            if int(msg.get("schema_version", -1)) != SCHEMA_VERSION:
                                send({"type": "error", "reason": "schema_mismatch",
                                      "server_schema": SCHEMA_VERSION})
                                self._flush(conn, out_queue)
                                return None
                            greeted = True
                            send(self._hello())
                        elif not greeted:
                            send({"type": "error", "reason": "hello_required"})
                            self._flush(conn, out_queue)
                            return None
                        elif kind == "master_input":
                            self.inputs.push(msg)
                            self.running = True
                        elif kind == "control":
                            action = msg.get("action")
                            if action == "start":
                                self.running = True
                            elif action == "pause":
                                self.running = False
                            elif action == "reset":
                                self._reset()
                            elif action == "finish":
                                self.finishing = True
                                self.running = True
                            else:
                                raise ProtocolError(f"unknown action {action!r}")
                        else:
                            raise ProtocolError(f"unknown message type {kind!r}")

                # advance the scenario when allowed
                while (self.running and self.sim.tick_index < self.n_ticks
                       and self._may_tick()):
                    t = self.sim.tick_index * self.cfg.dt
                    row = self.sim.step(self.inputs.sample(t))
                    self.rows.append(row)
                    if (self.sim.tick_index - 1) % self.decimation == 0:
                        step_msg = {"type": "step", "schema_version": SCHEMA_VERSION}
                        step_msg.update({k: float(v) for k, v in row.items()})
                        send(step_msg)
                    if self.realtime:
                        next_wall += self.cfg.dt
                        lag = next_wall - time.monotonic()
                        if lag > 0:
                            time.sleep(lag)
                        break  # one tick per outer loop in realtime mode

                self._flush(conn, out_queue)

                if self.sim.tick_index >= self.n_ticks:
                    trace = self._write_trace()
                    send({"type": "done",
                          "trace": str(trace) if trace else None,
                          "ticks": self.sim.tick_index})
                    self._flush(conn, out_queue, blocking=True)
                    conn.close()
                    return trace if trace else self.rows

                if not data and not self.running:
                    time.sleep(0.005)
            return None
        except (ProtocolError, json.JSONDecodeError, KeyError, ValueError) as exc:
            try:
                if codec is not None:
                    conn.sendall(codec.encode({"type": "error", "reason": str(exc)}))
            except OSError:
                pass
            conn.close()
            return None
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _may_tick(self) -> bool:
        if self.finishing:
            return True
        # paced mode: never run ahead of the operator's newest timestamp
        if not self.realtime:
            return (self.sim.tick_index * self.cfg.dt) <= self.inputs.latest_t + 1e-12
        return True

    def _flush(self, conn, out_queue, blocking=False):
        while out_queue:
            try:
                sent = conn.send(out_queue[0])
            except BlockingIOError:
                if not blocking:
                    return
                select.select([], [conn], [], 1.0)
                continue
            except OSError:
                return
            if sent == len(out_queue[0]):
                out_queue.pop(0)
            else:
                out_queue[0] = out_queue[0][sent:]

    def _write_trace(self):
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        trace = self.out_dir / f"{self.cfg.name}_live.csv"
        with open(trace, "w") as fh:
            fh.write(",".join(self.sim.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(float(row[c])) for c in self.sim.columns) + "\n")
        sidecar = {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.cfg.name,
            "seed": self.sim.seed,
            "dt": self.cfg.dt,
            "duration": self.cfg.duration,
            "n_ticks": len(self.rows),
            "columns": self.sim.columns,
            "arms": [m.n for m in self.cfg.arms],
            "phases": self.cfg.phases,
            "settle_tol": self.cfg.settle_tol,
            "live": True,
        }
        with open(trace.with_suffix(".json"), "w") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return trace


def serve(cfg: ScenarioConfig, port: int, host: str = "127.0.0.1",
          out_dir=None, realtime: bool | None = None,
          max_wall_s: float | None = None):
    """Run one live session; returns the trace path once a session finishes."""
    session = ServeSession(cfg, port, host=host, out_dir=out_dir, realtime=realtime)
    return session.serve_forever(max_wall_s=max_wall_s)


class WireClient:
    """Small blocking client for tests and scripted drivers."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.codec = _LengthPrefixCodec()
        self.inbox = []

    def hello(self, schema_version: int = SCHEMA_VERSION) -> dict:
        self.send({"type": "hello", "schema_version": schema_version})
        return self.recv()

    def send(self, msg: dict):
        self.sock.sendall(self.codec.encode(msg))

    def recv(self, timeout: float = 10.0) -> dict:
        if self.inbox:
            return self.inbox.pop(0)
        self.sock.settimeout(timeout)
        while True:
            data = self.sock.recv(65536)
            if data == b"":
                raise ConnectionError("server closed")
            msgs = self.codec.feed(data)
            if msgs:
                self.inbox.extend(msgs[1:])
                return msgs[0]

    def drain(self, until_type: str, timeout: float = 60.0) -> list:
        out = []
        end = time.monotonic() + timeout
        while time.monotonic() < end:
            msg = self.recv(timeout=max(0.1, end - time.monotonic()))
            out.append(msg)
            if msg.get("type") == until_type:
                return out
        raise TimeoutError(f"no {until_type!r} message within {timeout}s")

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass
