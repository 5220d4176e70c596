/**
 * Viewer state machine. Every UI gesture and network outcome is an event;
 * `transition` is a pure function, so a replayed event log always reproduces
 * the same state and the whole flow is testable without a browser.
 */

import { rleForegroundCount } from "./rle.js";

export interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface Drag {
  startX: number;
  startY: number;
  x: number;
  y: number;
}

export interface Overlay {
  runs: number[];
  height: number;
  width: number;
  sliceIndex: number;
  foreground: number;
}

export interface ViewerState {
  volumeId: string | null;
  depth: number;
  height: number;
  width: number;
  modalities: string[];
  sliceIndex: number;
  modality: string;
  drag: Drag | null;
  box: Box | null;
  overlay: Overlay | null;
  banner: string | null;
  requestSeq: number;
  pendingSlice: number | null;
  inFlight: boolean;
}

export type ViewerEvent =
  | {
      kind: "volume-loaded";
      volumeId: string;
      depth: number;
      height: number;
      width: number;
      modalities: string[];
    }
  | { kind: "scroll-slice"; delta: number }
  | { kind: "set-slice"; index: number }
  | { kind: "set-modality"; name: string }
  | { kind: "drag-start"; x: number; y: number }
  | { kind: "drag-move"; x: number; y: number }
  | { kind: "drag-end"; x: number; y: number }
  | { kind: "segment-requested"; seq: number }
  | {
      kind: "segment-succeeded";
      seq: number;
      runs: number[];
      height: number;
      width: number;
    }
  | { kind: "segment-failed"; seq: number; message: string }
  | { kind: "dismiss-banner" };

export function initialState(): ViewerState {
  return {
    volumeId: null,
    depth: 0,
    height: 0,
    width: 0,
    modalities: [],
    sliceIndex: 0,
    modality: "",
    drag: null,
    box: null,
    overlay: null,
    banner: null,
    requestSeq: 0,
    pendingSlice: null,
    inFlight: false,
  };
}

const clamp = (v: number, lo: number, hi: number) => Math.min(Math.max(v, lo), hi);

function changeSlice(state: ViewerState, index: number): ViewerState {
  const next = clamp(index, 0, Math.max(state.depth - 1, 0));
  if (next === state.sliceIndex) {
    return state;
  }
  // boxes and overlays are per-slice artifacts
  return { ...state, sliceIndex: next, box: null, overlay: null, drag: null };
}

export function transition(state: ViewerState, event: ViewerEvent): ViewerState {
  switch (event.kind) {
    case "volume-loaded":
      return {
        ...initialState(),
        volumeId: event.volumeId,
        depth: event.depth,
        height: event.height,
        width: event.width,
        modalities: [...event.modalities],
        sliceIndex: Math.floor(event.depth / 2),
        modality: event.modalities[0] ?? "",
        requestSeq: state.requestSeq, // keep sequence monotonic across volumes
      };
    case "scroll-slice":
      return changeSlice(state, state.sliceIndex + event.delta);
    case "set-slice":
      return changeSlice(state, event.index);
    case "set-modality":
      if (!state.modalities.includes(event.name)) {
        return { ...state, banner: `unknown modality ${event.name}` };
      }
      // box and overlay belong to the slice, not the modality: both persist
      return { ...state, modality: event.name };
    case "drag-start":
      return {
        ...state,
        drag: { startX: event.x, startY: event.y, x: event.x, y: event.y },
      };
    case "drag-move":
      if (!state.drag) {
        return state;
      }
      return { ...state, drag: { ...state.drag, x: event.x, y: event.y } };
    case "drag-end": {
      if (!state.drag) {
        return state;
      }
      const { startX, startY } = state.drag;
      // raw extent, not the snapped one: outward snapping would turn any
      // sub-pixel jitter into a full-pixel box
      if (Math.abs(event.x - startX) < 1 || Math.abs(event.y - startY) < 1) {
        return {
          ...state,
          drag: null,
          banner: "box too small - drag out a larger region",
        };
      }
      const x0 = Math.floor(Math.min(startX, event.x));
      const x1 = Math.ceil(Math.max(startX, event.x));
      const y0 = Math.floor(Math.min(startY, event.y));
      const y1 = Math.ceil(Math.max(startY, event.y));
      const box: Box = {
        x0: clamp(x0, 0, state.width),
        y0: clamp(y0, 0, state.height),
        x1: clamp(x1, 0, state.width),
        y1: clamp(y1, 0, state.height),
      };
      return { ...state, drag: null, box, banner: null };
    }
    case "segment-requested":
      return {
        ...state,
        inFlight: true,
        requestSeq: Math.max(state.requestSeq, event.seq),
        pendingSlice: state.sliceIndex,
      };
    case "segment-succeeded": {
      if (event.seq !== state.requestSeq || state.pendingSlice !== state.sliceIndex) {
        return state; // stale: a newer request or a slice change superseded it
      }
      const overlay: Overlay = {
        runs: [...event.runs],
        height: event.height,
        width: event.width,
        sliceIndex: state.sliceIndex,
        foreground: rleForegroundCount(event.runs),
      };
      return { ...state, overlay, inFlight: false, pendingSlice: null, banner: null };
    }
    case "segment-failed":
      if (event.seq !== state.requestSeq) {
        return state;
      }
      // non-blocking: overlay and box stay as they were
      return { ...state, inFlight: false, pendingSlice: null, banner: event.message };
    case "dismiss-banner":
      return { ...state, banner: null };
  }
}

export function replay(events: ViewerEvent[], from?: ViewerState): ViewerState {
  return events.reduce(transition, from ?? initialState());
}
