/** Thin typed client for the inference service's HTTP API. */

export interface VolumeHeader {
  magic: string;
  H: number;
  W: number;
  D: number;
  M: number;
  dtype: string;
  modalities: string[];
  voxel_id: string;
}

export interface UploadResponse {
  volume_id: string;
  header: VolumeHeader;
}

export interface SegmentRequest {
  volume_id: string;
  slice_index: number;
  box: [number, number, number, number];
}

export interface SegmentResponse {
  rle: number[];
  shape: [number, number];
  stats: { min: number; max: number; mean: number };
  checkpoint_id: string;
  latency_ms: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) {
    return;
  }
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body.detail !== undefined) {
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body: keep the status text
  }
  throw new ApiError(response.status, detail);
}

export function createClient(baseUrl: string, fetchImpl: typeof fetch = fetch) {
  const base = baseUrl.replace(/\/+$/, "");
  return {
    async health(): Promise<{ status: string; checkpoint_id: string }> {
      const r = await fetchImpl(`${base}/healthz`);
      await raiseForStatus(r);
      return r.json();
    },

    async uploadVolume(headerJson: string, payload: Uint8Array): Promise<UploadResponse> {
      const form = new FormData();
      form.append("header", new Blob([headerJson], { type: "application/json" }), "volume.json");
      form.append(
        "payload",
        new Blob([payload.buffer as ArrayBuffer], { type: "application/octet-stream" }),
        "volume.bin",
      );
      const r = await fetchImpl(`${base}/volumes`, { method: "POST", body: form });
      await raiseForStatus(r);
      return r.json();
    },

    async volumeHeader(volumeId: string): Promise<UploadResponse> {
      const r = await fetchImpl(`${base}/volumes/${volumeId}`);
      await raiseForStatus(r);
      return r.json();
    },

    sliceUrl(volumeId: string, sliceIndex: number, modality: string): string {
      return `${base}/volumes/${volumeId}/slices/${sliceIndex}?modality=${encodeURIComponent(modality)}`;
    },

    async segment(request: SegmentRequest): Promise<SegmentResponse> {
      const r = await fetchImpl(`${base}/segment`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(request),
      });
      await raiseForStatus(r);
      return r.json();
    },
  };
}

export type Client = ReturnType<typeof createClient>;
