/** Poll a job to completion with the forward-only status guard. */

import type { Client, JobSummary } from "./api.js";
import { mergeJob } from "./state.js";

export class JobFailed extends Error {
  job: JobSummary;

  constructor(job: JobSummary) {
    super(job.error ?? `job ${job.id} failed`);
    this.job = job;
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  signal?: AbortSignal;
  onUpdate?: (job: JobSummary) => void;
}

function sleep(ms: number, signal?: AbortSignal): Promise<void> {
  return new Promise((resolve, reject) => {
    const t = setTimeout(() => {
      signal?.removeEventListener("abort", onAbort);
      resolve();
    }, ms);
    function onAbort() {
      clearTimeout(t);
      reject(new Error("aborted"));
    }
    signal?.addEventListener("abort", onAbort, { once: true });
  });
}

export async function pollJob(
  client: Client,
  id: string,
  opts: PollOptions = {},
): Promise<JobSummary> {
  const interval = opts.intervalMs ?? 150;
  const deadline = Date.now() + (opts.timeoutMs ?? 30_000);
  let last: JobSummary | null = null;
  for (;;) {
    if (opts.signal?.aborted) throw new Error("aborted");
    const job = mergeJob(last, await client.jobStatus(id, opts.signal));
    last = job;
    opts.onUpdate?.(job);
    if (job.status === "done") return job;
    if (job.status === "failed") throw new JobFailed(job);
    if (Date.now() > deadline) {
      throw new Error(`job ${id} still ${job.status} after timeout`);
    }
    await sleep(interval, opts.signal);
  }
}
