/**
 * Wire protocol shared with the simulator: JSON messages, either one per
 * WebSocket frame (browser) or length-prefixed over TCP (4-byte big-endian
 * length + UTF-8 payload, used by node drivers and tests).
 */

export const SCHEMA_VERSION = 1;

export type MasterMode = "position" | "velocity";

export interface HelloMsg {
  type: "hello";
  schema_version: number;
  scenario?: string;
  dt?: number;
  decimation?: number;
  arms?: number[];
}

export interface StepMsg {
  type: "step";
  schema_version: number;
  t: number;
  [column: string]: number | string;
}

export interface DoneMsg {
  type: "done";
  trace: string | null;
  ticks: number;
}

export interface ErrorMsg {
  type: "error";
  reason: string;
}

export type ServerMsg = HelloMsg | StepMsg | DoneMsg | ErrorMsg;

export interface MasterInputMsg {
  type: "master_input";
  t: number;
  mode: MasterMode;
  x_M: number[];
  v_M: number[];
  K_H: number;
}

export interface ControlMsg {
  type: "control";
  action: "start" | "pause" | "reset" | "finish";
}

export type ClientMsg = { type: "hello"; schema_version: number } | MasterInputMsg | ControlMsg;

/** Incremental decoder for the length-prefixed TCP framing. */
export class LengthPrefixDecoder {
  private buf: Uint8Array = new Uint8Array(0);

  feed(data: Uint8Array): ServerMsg[] {
    const joined = new Uint8Array(this.buf.length + data.length);
    joined.set(this.buf, 0);
    joined.set(data, this.buf.length);
    this.buf = joined;
    const out: ServerMsg[] = [];
    for (;;) {
      if (this.buf.length < 4) break;
      const view = new DataView(this.buf.buffer, this.buf.byteOffset, 4);
      const length = view.getUint32(0, false);
      if (this.buf.length < 4 + length) break;
      const payload = this.buf.subarray(4, 4 + length);
      out.push(JSON.parse(new TextDecoder().decode(payload)));
      this.buf = this.buf.slice(4 + length);
    }
    return out;
  }
}

export function encodeFrame(msg: ClientMsg): Uint8Array {
  const payload = new TextEncoder().encode(JSON.stringify(msg));
  const frame = new Uint8Array(4 + payload.length);
  new DataView(frame.buffer).setUint32(0, payload.length, false);
  frame.set(payload, 4);
  return frame;
}

export interface RecordedInput {
  t: number;
  mode: MasterMode;
  x_M: number[];
  v_M: number[];
  K_H: number;
}

/**
 * Serialize recorded inputs in the simulator's master-CSV grammar so a
 * console session replays through the headless runner.
 */
export function inputsToCsv(rows: RecordedInput[]): string {
  const header = [
    "t", "mode",
    "xM_qw", "xM_qx", "xM_qy", "xM_qz", "xM_tx", "xM_ty", "xM_tz",
    "vM_wx", "vM_wy", "vM_wz", "vM_vx", "vM_vy", "vM_vz", "K_H",
  ].join(",");
  const lines = rows.map((r) =>
    [r.t, r.mode, ...r.x_M, ...r.v_M, r.K_H]
      .map((v) => (typeof v === "number" ? String(v) : v))
      .join(","));
  return [header, ...lines].join("\n") + "\n";
}
