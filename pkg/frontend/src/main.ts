/**
 * Browser entry point: wires DOM events to the viewer state machine and
 * renders slices, box drags, and mask overlays onto stacked canvases.
 * All decision logic lives in state.ts; this file only translates events.
 */

import { createClient, type Client } from "./api.js";
import { DEFAULT_STYLE, overlayPixels } from "./overlay.js";
import { initialState, transition, type ViewerEvent, type ViewerState } from "./state.js";

const SCALE = 12; // display pixels per voxel

interface Dom {
  headerInput: HTMLInputElement;
  payloadInput: HTMLInputElement;
  uploadBtn: HTMLButtonElement;
  modalitySelect: HTMLSelectElement;
  sliceLabel: HTMLSpanElement;
  segmentBtn: HTMLButtonElement;
  banner: HTMLDivElement;
  stack: HTMLDivElement;
  imageCanvas: HTMLCanvasElement;
  overlayCanvas: HTMLCanvasElement;
  interactCanvas: HTMLCanvasElement;
}

function buildDom(root: HTMLElement): Dom {
  root.innerHTML = `
    <div class="toolbar">
      <label>header <input type="file" id="header-file" accept=".json"></label>
      <label>payload <input type="file" id="payload-file" accept=".bin"></label>
      <button id="upload">upload</button>
      <select id="modality" disabled></select>
      <span id="slice-label">no volume</span>
      <button id="segment" disabled>segment box</button>
    </div>
    <div class="banner" id="banner" hidden></div>
    <div class="stack" id="stack">
      <canvas id="image"></canvas>
      <canvas id="overlay"></canvas>
      <canvas id="interact" tabindex="0"></canvas>
    </div>`;
  const get = <T extends HTMLElement>(id: string) => root.querySelector<T>(`#${id}`)!;
  return {
    headerInput: get<HTMLInputElement>("header-file"),
    payloadInput: get<HTMLInputElement>("payload-file"),
    uploadBtn: get<HTMLButtonElement>("upload"),
    modalitySelect: get<HTMLSelectElement>("modality"),
    sliceLabel: get<HTMLSpanElement>("slice-label"),
    segmentBtn: get<HTMLButtonElement>("segment"),
    banner: get<HTMLDivElement>("banner"),
    stack: get<HTMLDivElement>("stack"),
    imageCanvas: get<HTMLCanvasElement>("image"),
    overlayCanvas: get<HTMLCanvasElement>("overlay"),
    interactCanvas: get<HTMLCanvasElement>("interact"),
  };
}

export function mountViewer(root: HTMLElement, client?: Client): void {
  const api = client ?? createClient(window.location.origin);
  const dom = buildDom(root);
  let state: ViewerState = initialState();
  let seqCounter = 0;

  const canvasEvent = (e: MouseEvent): { x: number; y: number } => {
    const r = dom.interactCanvas.getBoundingClientRect();
    return { x: (e.clientX - r.left) / SCALE, y: (e.clientY - r.top) / SCALE };
  };

  function dispatch(event: ViewerEvent): void {
    const prev = state;
    state = transition(state, event);
    if (state !== prev) {
      render(prev);
    }
  }

  async function refreshSliceImage(): Promise<void> {
    if (!state.volumeId) {
      return;
    }
    const url = api.sliceUrl(state.volumeId, state.sliceIndex, state.modality);
    const img = new Image();
    img.src = url;
    await img.decode();
    const ctx = dom.imageCanvas.getContext("2d")!;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, dom.imageCanvas.width, dom.imageCanvas.height);
  }

  function renderOverlayAndBox(): void {
    const ctx = dom.overlayCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, dom.overlayCanvas.width, dom.overlayCanvas.height);
    if (state.overlay && state.overlay.sliceIndex === state.sliceIndex) {
      const { runs, height, width } = state.overlay;
      const rgba = overlayPixels(runs, height, width, DEFAULT_STYLE);
      const off = document.createElement("canvas");
      off.width = width;
      off.height = height;
      off.getContext("2d")!.putImageData(new ImageData(rgba, width, height), 0, 0);
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(off, 0, 0, width * SCALE, height * SCALE);
    }
    const box = state.drag
      ? {
          x0: Math.min(state.drag.startX, state.drag.x),
          y0: Math.min(state.drag.startY, state.drag.y),
          x1: Math.max(state.drag.startX, state.drag.x),
          y1: Math.max(state.drag.startY, state.drag.y),
        }
      : state.box;
    if (box) {
      ctx.strokeStyle = "#3df";
      ctx.lineWidth = 2;
      ctx.strokeRect(
        box.x0 * SCALE,
        box.y0 * SCALE,
        (box.x1 - box.x0) * SCALE,
        (box.y1 - box.y0) * SCALE,
      );
    }
  }

  function render(prev: ViewerState): void {
    dom.banner.hidden = state.banner === null;
    dom.banner.textContent = state.banner ?? "";
    dom.sliceLabel.textContent = state.volumeId
      ? `slice ${state.sliceIndex + 1}/${state.depth}`
      : "no volume";
    dom.segmentBtn.disabled = !state.volumeId || !state.box || state.inFlight;
    dom.modalitySelect.disabled = !state.volumeId;

    if (state.modalities !== prev.modalities) {
      dom.modalitySelect.innerHTML = "";
      for (const m of state.modalities) {
        const opt = document.createElement("option");
        opt.value = m;
        opt.textContent = m;
        dom.modalitySelect.appendChild(opt);
      }
      const w = state.width * SCALE;
      const h = state.height * SCALE;
      for (const c of [dom.imageCanvas, dom.overlayCanvas, dom.interactCanvas]) {
        c.width = w;
        c.height = h;
      }
    }
    dom.modalitySelect.value = state.modality;

    const sliceChanged =
      state.volumeId !== prev.volumeId ||
      state.sliceIndex !== prev.sliceIndex ||
      state.modality !== prev.modality;
    if (sliceChanged) {
      void refreshSliceImage().catch((err) => {
        dispatch({ kind: "segment-failed", seq: state.requestSeq, message: String(err) });
      });
    }
    renderOverlayAndBox();
  }

  dom.uploadBtn.addEventListener("click", async () => {
    const headerFile = dom.headerInput.files?.[0];
    const payloadFile = dom.payloadInput.files?.[0];
    if (!headerFile || !payloadFile) {
      dispatch({ kind: "segment-failed", seq: state.requestSeq, message: "pick both files" });
      return;
    }
    try {
      const headerJson = await headerFile.text();
      const payload = new Uint8Array(await payloadFile.arrayBuffer());
      const res = await api.uploadVolume(headerJson, payload);
      dispatch({
        kind: "volume-loaded",
        volumeId: res.volume_id,
        depth: res.header.D,
        height: res.header.H,
        width: res.header.W,
        modalities: res.header.modalities,
      });
    } catch (err) {
      dispatch({ kind: "segment-failed", seq: state.requestSeq, message: String(err) });
    }
  });

  dom.modalitySelect.addEventListener("change", () => {
    dispatch({ kind: "set-modality", name: dom.modalitySelect.value });
  });

  dom.interactCanvas.addEventListener("mousedown", (e) => {
    const { x, y } = canvasEvent(e);
    dispatch({ kind: "drag-start", x, y });
  });
  dom.interactCanvas.addEventListener("mousemove", (e) => {
    if (state.drag) {
      const { x, y } = canvasEvent(e);
      dispatch({ kind: "drag-move", x, y });
    }
  });
  dom.interactCanvas.addEventListener("mouseup", (e) => {
    const { x, y } = canvasEvent(e);
    dispatch({ kind: "drag-end", x, y });
  });

  // wheel and arrow keys must produce identical transitions
  dom.stack.addEventListener("wheel", (e) => {
    e.preventDefault();
    dispatch({ kind: "scroll-slice", delta: e.deltaY > 0 ? 1 : -1 });
  });
  dom.interactCanvas.addEventListener("keydown", (e) => {
    if (e.key === "ArrowDown") {
      dispatch({ kind: "scroll-slice", delta: 1 });
    } else if (e.key === "ArrowUp") {
      dispatch({ kind: "scroll-slice", delta: -1 });
    }
  });

  dom.segmentBtn.addEventListener("click", async () => {
    if (!state.volumeId || !state.box) {
      return;
    }
    const seq = ++seqCounter;
    const { volumeId, sliceIndex, box } = state;
    dispatch({ kind: "segment-requested", seq });
    try {
      const res = await api.segment({
        volume_id: volumeId,
        slice_index: sliceIndex,
        box: [box.x0, box.y0, box.x1, box.y1],
      });
      dispatch({
        kind: "segment-succeeded",
        seq,
        runs: res.rle,
        height: res.shape[0],
        width: res.shape[1],
      });
    } catch (err) {
      dispatch({ kind: "segment-failed", seq, message: String(err) });
    }
  });

  dom.banner.addEventListener("click", () => dispatch({ kind: "dismiss-banner" }));
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountViewer(document.getElementById("app")!);
}
