import { describe, expect, it, vi } from "vitest";

import { ClientMsg, ServerMsg } from "../src/protocol.js";
import { SessionClient } from "../src/session.js";
import { Transport } from "../src/transport.js";

class FakeTransport implements Transport {
  sent: ClientMsg[] = [];
  private messageCb: ((msg: ServerMsg) => void) | null = null;
  private closeCb: (() => void) | null = null;
  closed = false;

  send(msg: ClientMsg) {
    this.sent.push(msg);
  }
  onMessage(cb: (msg: ServerMsg) => void) {
    this.messageCb = cb;
  }
  onClose(cb: () => void) {
    this.closeCb = cb;
  }
  close() {
    this.closed = true;
  }
  push(msg: ServerMsg) {
    this.messageCb?.(msg);
  }
  drop() {
    this.closeCb?.();
  }
}

function makeSession(opts: { now?: () => number } = {}) {
  const transports: FakeTransport[] = [];
  const session = new SessionClient(async () => {
    const t = new FakeTransport();
    transports.push(t);
    return t;
  }, { now: opts.now, reconnectDelayMs: 10, staleAfterMs: 500 });
  return { session, transports };
}

const HELLO = { type: "hello", schema_version: 1, arms: [3], dt: 0.001,
                decimation: 10 } as ServerMsg;

function frame(t: number, extra: Record<string, number> = {}): ServerMsg {
  return { type: "step", schema_version: 1, t, a0_he3: 0, a0_he4: 0, a0_he5: 0,
           m_hH3: 0, m_hH4: 0, m_hH5: 0, ...extra } as ServerMsg;
}

describe("handshake", () => {
  it("connects on matching schema", async () => {
    const { session, transports } = makeSession();
    await session.connect();
    expect(transports[0].sent[0]).toEqual({ type: "hello", schema_version: 1 });
    transports[0].push(HELLO);
    expect(session.state).toBe("connected");
    expect(session.banner).toBeNull();
  });

  it("raises a blocking banner on mismatch", async () => {
    const { session, transports } = makeSession();
    await session.connect();
    transports[0].push({ type: "hello", schema_version: 99 } as ServerMsg);
    expect(session.state).toBe("mismatch");
    expect(session.banner).toMatch(/schema mismatch/);
    expect(transports[0].closed).toBe(true);
  });
});

describe("telemetry buffers", () => {
  it("fills rolling series from step frames and prunes the window", async () => {
    const { session, transports } = makeSession();
    await session.connect();
    transports[0].push(HELLO);
    for (let k = 0; k < 100; k++) {
      transports[0].push(frame(k * 1.0, { a0_he3: 3.0, a0_he4: 4.0 }));
    }
    expect(session.forceNorm[0].latest()).toBeCloseTo(5.0, 12);
    // 30 s window on 100 s of data
    expect(session.forceNorm[0].points.length).toBeLessThanOrEqual(31);
    expect(session.frames.length).toBe(100);
  });

  it("never invents values: displayed quantities come from the frames", async () => {
    const { session, transports } = makeSession();
    await session.connect();
    transports[0].push(HELLO);
    transports[0].push(frame(0.0, { m_hH3: 7.5 }));
    expect(session.hapticNorm.latest()).toBeCloseTo(7.5, 12);
  });
});

describe("stale watermark", () => {
  it("fires after the threshold and clears on fresh frames", async () => {
    let wall = 1000;
    const { session, transports } = makeSession({ now: () => wall });
    await session.connect();
    transports[0].push(HELLO);
    transports[0].push(frame(0.0));
    expect(session.isStale()).toBe(false);
    wall += 501;
    expect(session.isStale()).toBe(true);
    transports[0].push(frame(0.01));
    expect(session.isStale()).toBe(false);
  });

  it("never fires while frames keep flowing", async () => {
    let wall = 0;
    const { session, transports } = makeSession({ now: () => wall });
    await session.connect();
    transports[0].push(HELLO);
    for (let k = 0; k < 50; k++) {
      wall += 200;  // fresh frame every 200 ms
      transports[0].push(frame(k * 0.2));
      expect(session.isStale()).toBe(false);
    }
  });
});

describe("reconnect", () => {
  it("reconnects with a fresh session after a drop", async () => {
    vi.useFakeTimers();
    try {
      const { session, transports } = makeSession();
      await session.connect();
      transports[0].push(HELLO);
      transports[0].push(frame(5.0));
      expect(session.frames.length).toBe(1);
      transports[0].drop();
      expect(session.state).toBe("closed");
      await vi.advanceTimersByTimeAsync(20);
      expect(transports.length).toBe(2);
      transports[1].push(HELLO);
      expect(session.state).toBe("connected");
      expect(session.frames.length).toBe(0);  // session reset
    } finally {
      vi.useRealTimers();
    }
  });
});

describe("input recording", () => {
  it("records exactly what was sent", async () => {
    const { session, transports } = makeSession();
    await session.connect();
    transports[0].push(HELLO);
    session.sendInput(0.0, [1, 0, 0, 0, 0.01, 0, 0], "position", 0.4);
    session.sendInput(0.02, [1, 0, 0, 0, 0.02, 0, 0], "position", 0.4);
    const sentInputs = transports[0].sent.filter((m) => m.type === "master_input");
    expect(sentInputs.length).toBe(2);
    expect(session.recording.length).toBe(2);
    const csv = session.exportCsv();
    expect(csv.trim().split("\n").length).toBe(3);
  });
});
