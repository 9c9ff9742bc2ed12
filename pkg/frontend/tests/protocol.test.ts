import { describe, expect, it } from "vitest";

import {
  LengthPrefixDecoder,
  RecordedInput,
  encodeFrame,
  inputsToCsv,
} from "../src/protocol.js";

describe("length-prefixed framing", () => {
  it("round-trips a message", () => {
    const dec = new LengthPrefixDecoder();
    const frame = encodeFrame({ type: "hello", schema_version: 1 });
    const out = dec.feed(frame);
    expect(out).toEqual([{ type: "hello", schema_version: 1 }]);
  });

  it("handles split and concatenated frames", () => {
    const dec = new LengthPrefixDecoder();
    const a = encodeFrame({ type: "control", action: "start" });
    const b = encodeFrame({ type: "control", action: "pause" });
    const joined = new Uint8Array(a.length + b.length);
    joined.set(a, 0);
    joined.set(b, a.length);
    expect(dec.feed(joined.subarray(0, 3))).toEqual([]);
    expect(dec.feed(joined.subarray(3, a.length + 5)).length).toBe(1);
    const rest = dec.feed(joined.subarray(a.length + 5));
    expect(rest).toEqual([{ type: "control", action: "pause" }]);
  });
});

describe("session CSV export", () => {
  it("matches the master-CSV grammar", () => {
    const rows: RecordedInput[] = [
      { t: 0, mode: "position", x_M: [1, 0, 0, 0, 0.01, 0, 0],
        v_M: [0, 0, 0, 0, 0, 0], K_H: 0.5 },
      { t: 0.01, mode: "velocity", x_M: [1, 0, 0, 0, 0, 0, 0],
        v_M: [0, 0, 0, 0.1, 0, 0], K_H: 1 },
    ];
    const csv = inputsToCsv(rows);
    const lines = csv.trim().split("\n");
    expect(lines.length).toBe(3);
    expect(lines[0].split(",").length).toBe(16);
    expect(lines[1].split(",")[1]).toBe("position");
    expect(Number(lines[2].split(",")[12])).toBeCloseTo(0.1, 12);
  });
});
