/** Thin client for the annotation HTTP API. */

export interface SampleEntry {
  id: string;
  role: string;
  annotated: boolean;
}

export type Layer = "image" | "background" | "prediction" | "diff";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

async function detailOf(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    return body.detail ?? resp.statusText;
  } catch {
    return resp.statusText;
  }
}

export class AnnotationApi {
  constructor(private readonly base: string = "") {}

  async listSamples(): Promise<SampleEntry[]> {
    const resp = await fetch(`${this.base}/api/samples`);
    if (!resp.ok) throw new ApiError(resp.status, await detailOf(resp));
    return resp.json();
  }

  layerUrl(id: string, layer: Layer): string {
    return `${this.base}/api/samples/${encodeURIComponent(id)}/layer/${layer}`;
  }

  async fetchScribbles(id: string): Promise<Uint8Array | null> {
    const resp = await fetch(
      `${this.base}/api/samples/${encodeURIComponent(id)}/scribbles`,
    );
    if (resp.status === 404) return null;
    if (!resp.ok) throw new ApiError(resp.status, await detailOf(resp));
    return new Uint8Array(await resp.arrayBuffer());
  }

  async putScribbles(id: string, png: Uint8Array): Promise<void> {
    const resp = await fetch(
      `${this.base}/api/samples/${encodeURIComponent(id)}/scribbles`,
      {
        method: "PUT",
        headers: { "Content-Type": "image/png" },
        body: new Blob([png.buffer as ArrayBuffer]),
      },
    );
    if (!resp.ok) throw new ApiError(resp.status, await detailOf(resp));
  }
}
