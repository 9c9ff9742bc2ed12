/**
 * Session state machine: handshake with schema check, decimated telemetry
 * into rolling buffers, stale-data detection, automatic reconnect with a
 * full session reset, and input recording for headless replay.
 *
 * The console never computes simulation truth; everything displayed comes
 * straight out of step records.
 */

import {
  HelloMsg,
  MasterInputMsg,
  MasterMode,
  RecordedInput,
  SCHEMA_VERSION,
  ServerMsg,
  StepMsg,
  inputsToCsv,
} from "./protocol.js";
import { Transport } from "./transport.js";

export type ConnectionState =
  | "idle"
  | "connecting"
  | "connected"
  | "mismatch"
  | "closed"
  | "done";

export interface SamplePoint {
  t: number;
  value: number;
}

export class RollingSeries {
  points: SamplePoint[] = [];

  constructor(public windowSeconds: number) {}

  push(t: number, value: number) {
    this.points.push({ t, value });
    const cutoff = t - this.windowSeconds;
    let drop = 0;
    while (drop < this.points.length && this.points[drop].t < cutoff) drop++;
    if (drop > 0) this.points.splice(0, drop);
  }

  latest(): number {
    return this.points.length ? this.points[this.points.length - 1].value : 0;
  }
}

export interface SessionOptions {
  staleAfterMs?: number;
  reconnectDelayMs?: number;
  bufferSeconds?: number;
  now?: () => number;        // wall clock, injectable for tests
  autoReconnect?: boolean;
}

export class SessionClient {
  state: ConnectionState = "idle";
  banner: string | null = null;
  hello: HelloMsg | null = null;
  lastFrame: StepMsg | null = null;
  lastFrameWall = -Infinity;
  frames: StepMsg[] = [];
  recording: RecordedInput[] = [];
  tracePath: string | null = null;

  forceNorm: RollingSeries[] = [];
  trackingError: RollingSeries[] = [];
  stiffnessNorm: RollingSeries[] = [];
  hapticNorm: RollingSeries;

  private transport: Transport | null = null;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private readonly staleAfterMs: number;
  private readonly reconnectDelayMs: number;
  private readonly bufferSeconds: number;
  private readonly now: () => number;
  private readonly autoReconnect: boolean;
  private stopped = false;

  constructor(private connectFn: () => Promise<Transport>,
              opts: SessionOptions = {}) {
    this.staleAfterMs = opts.staleAfterMs ?? 500;
    this.reconnectDelayMs = opts.reconnectDelayMs ?? 500;
    this.bufferSeconds = opts.bufferSeconds ?? 30;
    this.now = opts.now ?? (() => Date.now());
    this.autoReconnect = opts.autoReconnect ?? true;
    this.hapticNorm = new RollingSeries(this.bufferSeconds);
  }

  async connect(): Promise<void> {
    this.resetView();
    this.state = "connecting";
    try {
      this.transport = await this.connectFn();
    } catch {
      this.state = "closed";
      this.scheduleReconnect();
      return;
    }
    this.transport.onMessage((msg) => this.handleMessage(msg));
    this.transport.onClose(() => {
      if (this.state !== "mismatch" && this.state !== "done") {
        this.state = "closed";
        this.scheduleReconnect();
      }
    });
    this.transport.send({ type: "hello", schema_version: SCHEMA_VERSION });
  }

  stop() {
    this.stopped = true;
    if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
    this.transport?.close();
  }

  private resetView() {
    this.hello = null;
    this.lastFrame = null;
    this.lastFrameWall = -Infinity;
    this.frames = [];
    this.forceNorm = [];
    this.trackingError = [];
    this.stiffnessNorm = [];
    this.hapticNorm = new RollingSeries(this.bufferSeconds);
    this.tracePath = null;
  }

  private scheduleReconnect() {
    if (!this.autoReconnect || this.stopped) return;
    if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
    this.reconnectTimer = setTimeout(() => {
      void this.connect();
    }, this.reconnectDelayMs);
  }

  private handleMessage(msg: ServerMsg) {
    switch (msg.type) {
      case "hello": {
        if (msg.schema_version !== SCHEMA_VERSION) {
          this.banner = `schema mismatch: server ${msg.schema_version}, console ${SCHEMA_VERSION}`;
          this.state = "mismatch";
          this.transport?.close();
          return;
        }
        this.hello = msg;
        const nArms = (msg.arms ?? [1]).length;
        this.forceNorm = Array.from({ length: nArms },
                                    () => new RollingSeries(this.bufferSeconds));
        this.trackingError = Array.from({ length: nArms },
                                        () => new RollingSeries(this.bufferSeconds));
        this.stiffnessNorm = Array.from({ length: nArms },
                                        () => new RollingSeries(this.bufferSeconds));
        this.banner = null;
        this.state = "connected";
        return;
      }
      case "step":
        this.ingest(msg);
        return;
      case "done":
        this.tracePath = msg.trace;
        this.state = "done";
        return;
      case "error":
        if (msg.reason === "schema_mismatch") {
          this.banner = "schema mismatch: server rejected the console version";
          this.state = "mismatch";
        } else {
          this.banner = `server error: ${msg.reason}`;
        }
        return;
    }
  }

  private ingest(frame: StepMsg) {
    this.lastFrame = frame;
    this.lastFrameWall = this.now();
    this.frames.push(frame);
    const t = Number(frame.t);
    const arms = this.forceNorm.length || 1;
    for (let i = 0; i < arms; i++) {
      const f = norm3(frame, [`a${i}_he3`, `a${i}_he4`, `a${i}_he5`]);
      this.forceNorm[i]?.push(t, f);
      const err = Math.hypot(
        num(frame, `a${i}_xd4`) - num(frame, `a${i}_x4`),
        num(frame, `a${i}_xd5`) - num(frame, `a${i}_x5`),
        num(frame, `a${i}_xd6`) - num(frame, `a${i}_x6`));
      this.trackingError[i]?.push(t, err);
      const k = norm3(frame, [`a${i}_k3`, `a${i}_k4`, `a${i}_k5`]);
      this.stiffnessNorm[i]?.push(t, k);
    }
    this.hapticNorm.push(t, norm3(frame, ["m_hH3", "m_hH4", "m_hH5"]));
  }

  /** True once no frame has arrived for the stale threshold. */
  isStale(nowMs?: number): boolean {
    if (this.state !== "connected" || this.lastFrame === null) return false;
    return (nowMs ?? this.now()) - this.lastFrameWall > this.staleAfterMs;
  }

  sendInput(t: number, xM: number[], mode: MasterMode, kH: number,
            vM: number[] = [0, 0, 0, 0, 0, 0]) {
    if (this.state !== "connected" || !this.transport) return;
    const msg: MasterInputMsg = {
      type: "master_input", t, mode, x_M: xM, v_M: vM, K_H: kH,
    };
    this.transport.send(msg);
    this.recording.push({ t, mode, x_M: [...xM], v_M: [...vM], K_H: kH });
  }

  control(action: "start" | "pause" | "reset" | "finish") {
    this.transport?.send({ type: "control", action });
  }

  exportCsv(): string {
    return inputsToCsv(this.recording);
  }
}

function num(frame: StepMsg, key: string): number {
  const v = frame[key];
  return typeof v === "number" ? v : 0;
}

function norm3(frame: StepMsg, keys: string[]): number {
  return Math.hypot(num(frame, keys[0]), num(frame, keys[1]), num(frame, keys[2]));
}
