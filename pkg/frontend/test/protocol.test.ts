import { describe, expect, it } from "vitest";
import {
  makeAction,
  makeConfig,
  makeEstop,
  makeRecord,
  makeReset,
  parseFrame,
  validateOutbound,
} from "../src/protocol.js";

const goodFrame = {
  type: "frame",
  seq: 7,
  image: "aGVsbG8=",
  speed: 1.25,
  collision: false,
  recording: true,
  lap_progress: 0.4,
};

describe("parseFrame", () => {
  it("accepts a well-formed frame", () => {
    const f = parseFrame(JSON.stringify(goodFrame));
    expect(f).not.toBeNull();
    expect(f!.seq).toBe(7);
    expect(f!.speed).toBeCloseTo(1.25);
    expect(f!.recording).toBe(true);
  });

  it("rejects non-JSON and non-objects", () => {
    expect(parseFrame("not json")).toBeNull();
    expect(parseFrame("42")).toBeNull();
    expect(parseFrame("null")).toBeNull();
  });

  it("rejects wrong type tags and missing fields", () => {
    expect(parseFrame(JSON.stringify({ ...goodFrame, type: "action" }))).toBeNull();
    for (const field of ["seq", "image", "speed", "collision", "recording", "lap_progress"]) {
      const broken: Record<string, unknown> = { ...goodFrame };
      delete broken[field];
      expect(parseFrame(JSON.stringify(broken))).toBeNull();
    }
  });

  it("rejects non-finite numerics and negative seq", () => {
    expect(parseFrame(JSON.stringify({ ...goodFrame, speed: "fast" }))).toBeNull();
    expect(parseFrame(JSON.stringify({ ...goodFrame, seq: -1 }))).toBeNull();
    expect(parseFrame(JSON.stringify({ ...goodFrame, seq: 1.5 }))).toBeNull();
    // JSON has no NaN literal; a null speed is the closest wire-level analogue
    expect(parseFrame(JSON.stringify({ ...goodFrame, speed: null }))).toBeNull();
  });
});

describe("makeAction", () => {
  it("passes in-range values through", () => {
    const a = makeAction(-0.5, 0.75);
    expect(a.steering).toBeCloseTo(-0.5);
    expect(a.throttle).toBeCloseTo(0.75);
  });

  it("clamps out-of-range and zeroes non-finite values", () => {
    expect(makeAction(3, -2)).toEqual({ type: "action", steering: 1, throttle: -1 });
    expect(makeAction(Number.NaN, Infinity)).toEqual({
      type: "action",
      steering: 0,
      throttle: 0,
    });
  });
});

describe("makeConfig", () => {
  it("builds valid config messages", () => {
    expect(makeConfig("hard", 3)).toEqual({ type: "config", task: "hard", seed: 3 });
  });

  it("rejects bad tasks and seeds", () => {
    expect(() => makeConfig("medium" as never, 0)).toThrow();
    expect(() => makeConfig("easy", -1)).toThrow();
    expect(() => makeConfig("easy", 0.5)).toThrow();
  });
});

describe("validateOutbound", () => {
  it("accepts every constructor output", () => {
    expect(validateOutbound(makeAction(0.1, -0.2))).toBe(true);
    expect(validateOutbound(makeEstop())).toBe(true);
    expect(validateOutbound(makeReset())).toBe(true);
    expect(validateOutbound(makeRecord(true))).toBe(true);
    expect(validateOutbound(makeConfig("easy", 0))).toBe(true);
  });

  it("rejects hand-built malformed messages", () => {
    expect(validateOutbound({ type: "action", steering: 2, throttle: 0 })).toBe(false);
    expect(
      validateOutbound({ type: "action", steering: Number.NaN, throttle: 0 }),
    ).toBe(false);
    expect(validateOutbound({ type: "record", on: 1 as unknown as boolean })).toBe(false);
    expect(
      validateOutbound({ type: "config", task: "easy", seed: -3 }),
    ).toBe(false);
  });
});
