import { describe, expect, it } from "vitest";

import {
  initialState,
  replay,
  transition,
  type ViewerEvent,
  type ViewerState,
} from "../src/state.js";

const loaded: ViewerEvent = {
  kind: "volume-loaded",
  volumeId: "vol-1",
  depth: 16,
  height: 32,
  width: 32,
  modalities: ["T1", "T1c", "T2", "T2-FLAIR"],
};

function drawBox(x0: number, y0: number, x1: number, y1: number): ViewerEvent[] {
  return [
    { kind: "drag-start", x: x0, y: y0 },
    { kind: "drag-move", x: x1, y: y1 },
    { kind: "drag-end", x: x1, y: y1 },
  ];
}

describe("volume-loaded", () => {
  it("opens on the middle slice with the first modality", () => {
    const s = replay([loaded]);
    expect(s.sliceIndex).toBe(8);
    expect(s.modality).toBe("T1");
    expect(s.volumeId).toBe("vol-1");
  });

  it("keeps the request sequence monotonic across volumes", () => {
    const s = replay([loaded, { kind: "segment-requested", seq: 5 }, loaded]);
    expect(s.requestSeq).toBe(5);
    expect(s.inFlight).toBe(false);
  });
});

describe("slice scrolling", () => {
  it("clamps at both ends", () => {
    expect(replay([loaded, { kind: "scroll-slice", delta: 100 }]).sliceIndex).toBe(15);
    expect(replay([loaded, { kind: "scroll-slice", delta: -100 }]).sliceIndex).toBe(0);
    expect(replay([loaded, { kind: "set-slice", index: -3 }]).sliceIndex).toBe(0);
  });

  it("clears box and overlay on a slice change", () => {
    const s = replay([
      loaded,
      ...drawBox(2, 2, 10, 10),
      {
        kind: "segment-requested",
        seq: 1,
      },
      { kind: "segment-succeeded", seq: 1, runs: [2, 3, 3], height: 2, width: 4 },
      { kind: "scroll-slice", delta: 1 },
    ]);
    expect(s.box).toBeNull();
    expect(s.overlay).toBeNull();
  });

  it("is a no-op when the clamp lands on the same slice", () => {
    const before = replay([loaded, ...drawBox(2, 2, 10, 10)]);
    const after = transition(before, { kind: "scroll-slice", delta: 0 });
    expect(after).toBe(before);
    expect(after.box).not.toBeNull();
  });

  it("keyboard and wheel deltas produce identical states", () => {
    const viaWheel = replay([loaded, { kind: "scroll-slice", delta: 1 }]);
    const viaKeys = replay([loaded, { kind: "scroll-slice", delta: 1 }]);
    expect(viaKeys).toEqual(viaWheel);
  });
});

describe("modality switching", () => {
  it("preserves box and overlay on the same slice", () => {
    const s = replay([
      loaded,
      ...drawBox(2, 2, 10, 10),
      { kind: "segment-requested", seq: 1 },
      { kind: "segment-succeeded", seq: 1, runs: [2, 3, 3], height: 2, width: 4 },
      { kind: "set-modality", name: "T2" },
    ]);
    expect(s.modality).toBe("T2");
    expect(s.box).toEqual({ x0: 2, y0: 2, x1: 10, y1: 10 });
    expect(s.overlay?.runs).toEqual([2, 3, 3]);
  });

  it("rejects unknown modalities with a banner", () => {
    const s = replay([loaded, { kind: "set-modality", name: "PET" }]);
    expect(s.modality).toBe("T1");
    expect(s.banner).toContain("PET");
  });
});

describe("box drawing", () => {
  it("canonicalizes a reversed drag", () => {
    const s = replay([loaded, ...drawBox(10, 12, 3, 4)]);
    expect(s.box).toEqual({ x0: 3, y0: 4, x1: 10, y1: 12 });
  });

  it("snaps fractional corners outward", () => {
    const s = replay([loaded, ...drawBox(2.6, 3.2, 9.1, 10.9)]);
    expect(s.box).toEqual({ x0: 2, y0: 3, x1: 10, y1: 11 });
  });

  it("rejects a sub-pixel drag with a visible hint, keeping any prior box", () => {
    const s = replay([loaded, ...drawBox(2, 2, 10, 10), ...drawBox(5, 5, 5.2, 5.4)]);
    expect(s.banner).toMatch(/too small/);
    expect(s.box).toEqual({ x0: 2, y0: 2, x1: 10, y1: 10 });
  });

  it("clamps boxes to the slice bounds", () => {
    const s = replay([loaded, ...drawBox(-4, -2, 40, 50)]);
    expect(s.box).toEqual({ x0: 0, y0: 0, x1: 32, y1: 32 });
  });

  it("ignores drag-move and drag-end without a drag-start", () => {
    const s0 = replay([loaded]);
    expect(transition(s0, { kind: "drag-move", x: 1, y: 1 })).toBe(s0);
    expect(transition(s0, { kind: "drag-end", x: 1, y: 1 })).toBe(s0);
  });
});

describe("segmentation round-trip", () => {
  const withBox = [loaded, ...drawBox(2, 2, 10, 10)];

  it("stores the overlay with its foreground count", () => {
    const s = replay([
      ...withBox,
      { kind: "segment-requested", seq: 1 },
      { kind: "segment-succeeded", seq: 1, runs: [2, 3, 3], height: 2, width: 4 },
    ]);
    expect(s.overlay).toEqual({
      runs: [2, 3, 3],
      height: 2,
      width: 4,
      sliceIndex: 8,
      foreground: 3,
    });
    expect(s.inFlight).toBe(false);
  });

  it("drops a stale success after a newer request", () => {
    const s = replay([
      ...withBox,
      { kind: "segment-requested", seq: 1 },
      { kind: "segment-requested", seq: 2 },
      { kind: "segment-succeeded", seq: 1, runs: [2, 3, 3], height: 2, width: 4 },
    ]);
    expect(s.overlay).toBeNull();
    expect(s.inFlight).toBe(true);
  });

  it("drops a success that lands after a slice change", () => {
    const s = replay([
      ...withBox,
      { kind: "segment-requested", seq: 1 },
      { kind: "scroll-slice", delta: 1 },
      { kind: "segment-succeeded", seq: 1, runs: [2, 3, 3], height: 2, width: 4 },
    ]);
    expect(s.overlay).toBeNull();
  });

  it("surfaces failures as a banner without touching the overlay", () => {
    const s = replay([
      ...withBox,
      { kind: "segment-requested", seq: 1 },
      { kind: "segment-succeeded", seq: 1, runs: [2, 3, 3], height: 2, width: 4 },
      { kind: "segment-requested", seq: 2 },
      { kind: "segment-failed", seq: 2, message: "HTTP 422: bad box" },
    ]);
    expect(s.banner).toBe("HTTP 422: bad box");
    expect(s.overlay?.runs).toEqual([2, 3, 3]);
    expect(s.inFlight).toBe(false);
  });

  it("ignores a stale failure", () => {
    const s = replay([
      ...withBox,
      { kind: "segment-requested", seq: 3 },
      { kind: "segment-failed", seq: 2, message: "old" },
    ]);
    expect(s.banner).toBeNull();
    expect(s.inFlight).toBe(true);
  });

  it("an identical re-request reproduces the identical overlay", () => {
    const once = replay([
      ...withBox,
      { kind: "segment-requested", seq: 1 },
      { kind: "segment-succeeded", seq: 1, runs: [2, 3, 3], height: 2, width: 4 },
    ]);
    const twice = replay(
      [
        { kind: "segment-requested", seq: 2 },
        { kind: "segment-succeeded", seq: 2, runs: [2, 3, 3], height: 2, width: 4 },
      ],
      once,
    );
    expect(twice.overlay).toEqual(once.overlay);
  });
});

describe("event-log replay", () => {
  it("replaying the same log reproduces the same final state", () => {
    const log: ViewerEvent[] = [
      loaded,
      { kind: "scroll-slice", delta: 2 },
      { kind: "set-modality", name: "T2-FLAIR" },
      ...drawBox(1.2, 3.4, 20.9, 18.1),
      { kind: "segment-requested", seq: 1 },
      { kind: "segment-succeeded", seq: 1, runs: [5, 2, 9], height: 4, width: 4 },
      { kind: "dismiss-banner" },
    ];
    expect(replay(log)).toEqual(replay(log));
  });

  it("transition never mutates its input", () => {
    const s0 = replay([loaded, ...drawBox(2, 2, 10, 10)]);
    const frozen: ViewerState = JSON.parse(JSON.stringify(s0));
    transition(s0, { kind: "scroll-slice", delta: 1 });
    transition(s0, { kind: "set-modality", name: "T2" });
    expect(s0).toEqual(frozen);
  });
});
