/** Typed client for the engine's /v1 HTTP API. Transport only: no rendering
 * math on this side, every displayed number originates in a response. */

import { validateEdit, type EditPayload } from "./validate.js";

export interface SceneSummary {
  width: number;
  height: number;
  fov_deg: number;
  masks: string[];
  maps: string[];
  optimized: boolean;
  optimized_maps: string[];
  prior_maps: string[];
  preview_png_b64: string;
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface JobSummary {
  id: string;
  kind: string;
  status: JobStatus;
  progress: number;
  loss_tail: number[];
  error: string | null;
}

export class ApiError extends Error {
  status: number;
  field: string | null;

  constructor(status: number, message: string, field: string | null = null) {
    super(message);
    this.status = status;
    this.field = field;
  }
}

/** Thrown before any request leaves the client. */
export class ClientValidationError extends Error {
  field: string;

  constructor(field: string, message: string) {
    super(message);
    this.field = field;
  }
}

async function raiseHttp(res: Response): Promise<never> {
  let field: string | null = null;
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    const d = body?.detail;
    if (typeof d === "string") message = d;
    else if (d && typeof d === "object") {
      field = typeof d.field === "string" ? d.field : null;
      message = typeof d.message === "string" ? d.message : message;
    }
  } catch {
    /* non-JSON error body: keep the status line */
  }
  throw new ApiError(res.status, message, field);
}

export class Client {
  base: string;
  /** Mask names the engine knows, refreshed by scene(); used to validate
   * edits before they leave the client. Null until the first load. */
  masks: string[] | null = null;

  constructor(base: string) {
    this.base = base.replace(/\/+$/, "");
  }

  private url(path: string): string {
    return `${this.base}/v1${path}`;
  }

  async scene(signal?: AbortSignal): Promise<SceneSummary> {
    const res = await fetch(this.url("/scene"), { signal });
    if (!res.ok) await raiseHttp(res);
    const summary = (await res.json()) as SceneSummary;
    this.masks = summary.masks;
    return summary;
  }

  async mapPng(name: string, signal?: AbortSignal): Promise<ArrayBuffer> {
    const res = await fetch(this.url(`/maps/${name}`), { signal });
    if (!res.ok) await raiseHttp(res);
    return res.arrayBuffer();
  }

  /** HDR variant: raw PFM bytes, the inspector's source of linear values. */
  async mapHdr(name: string, signal?: AbortSignal): Promise<ArrayBuffer> {
    const res = await fetch(this.url(`/maps/${name}?hdr=1`), { signal });
    if (!res.ok) await raiseHttp(res);
    return res.arrayBuffer();
  }

  /** Client-side validation runs first and refuses out-of-range payloads;
   * force=true skips it (used by tests to probe the server's own checks). */
  async submitEdit(
    payload: EditPayload,
    opts: { signal?: AbortSignal; force?: boolean } = {},
  ): Promise<{ id: string; status: JobStatus }> {
    if (!opts.force) {
      const errs = validateEdit(payload, this.masks);
      if (errs.length > 0) {
        throw new ClientValidationError(errs[0].field, errs[0].message);
      }
    }
    const res = await fetch(this.url("/edits"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
      signal: opts.signal,
    });
    if (res.status !== 202) await raiseHttp(res);
    if (typeof payload.mask_name === "string" && payload.mask_name &&
        this.masks && !this.masks.includes(payload.mask_name)) {
      this.masks.push(payload.mask_name); // engine registered the upload
    }
    return (await res.json()) as { id: string; status: JobStatus };
  }

  async jobStatus(id: string, signal?: AbortSignal): Promise<JobSummary> {
    const res = await fetch(this.url(`/jobs/${id}`), { signal });
    if (!res.ok) await raiseHttp(res);
    return (await res.json()) as JobSummary;
  }

  async jobResultPng(id: string, signal?: AbortSignal): Promise<ArrayBuffer> {
    const res = await fetch(this.url(`/jobs/${id}/result`), { signal });
    if (!res.ok) await raiseHttp(res);
    return res.arrayBuffer();
  }

  async jobResultHdr(id: string, signal?: AbortSignal): Promise<ArrayBuffer> {
    const res = await fetch(this.url(`/jobs/${id}/result?hdr=1`), { signal });
    if (!res.ok) await raiseHttp(res);
    return res.arrayBuffer();
  }
}
