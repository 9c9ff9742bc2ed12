"""Lossy, delayed, in-order message channel between master and replica.

Each message is released no earlier than send time + latency + seeded
uniform jitter; releases are monotone so reordered arrivals still come
out in send order.  Drops are decided at send time from the same seeded
stream, which keeps whole runs reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class _Pending:
    seq: int
    send_time: float
    release_time: float
    payload: object


class DelayChannel:
    def __init__(self, latency: float = 0.0, jitter: float = 0.0,
                 drop_rate: float = 0.0, seed: int = 0):
        if latency < 0.0 or jitter < 0.0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= drop_rate < 1.0:
            raise ValueError("drop rate must lie in [0, 1)")
        self.latency = float(latency)
        self.jitter = float(jitter)
        self.drop_rate = float(drop_rate)
        self._rng = np.random.default_rng(seed)
        self._fifo: deque[_Pending] = deque()
        self._seq = 0
        self._last_release = -np.inf
        self._last_send = -np.inf
        self.dropped = 0

    @property
    def depth(self) -> int:
        return len(self._fifo)

    def send(self, payload, now: float):
        if now < self._last_send:
            raise ValueError("send times must be monotone")
        self._last_send = now
        jitter = self._rng.uniform(0.0, self.jitter) if self.jitter > 0.0 else 0.0
        dropped = self.drop_rate > 0.0 and self._rng.uniform() < self.drop_rate
        if dropped:
            self.dropped += 1
            return
        release = max(now + self.latency + jitter, self._last_release)
        self._last_release = release
        self._fifo.append(_Pending(self._seq, now, release, payload))
        self._seq += 1

    def poll(self, now: float) -> list:
        out = []
        while self._fifo and self._fifo[0].release_time <= now:
            out.append(self._fifo.popleft().payload)
        return out


def channel_send(ch: DelayChannel, msg, now: float):
    ch.send(msg, now)


def channel_poll(ch: DelayChannel, now: float) -> list:
    return ch.poll(now)
