/** Console state: scene summary, mask selection, slider history for undo,
 * and the per-panel preview bookkeeping that guarantees at most one
 * in-flight request per panel with the newest submission winning. */

import type { JobStatus, JobSummary, SceneSummary } from "./api.js";

const STATUS_ORDER: Record<JobStatus, number> = {
  queued: 0,
  running: 1,
  done: 2,
  failed: 2,
};

/** Forward-only merge of polled job summaries; a regression means the
 * server and client disagree about which job this is. */
export function mergeJob(
  prev: JobSummary | null,
  next: JobSummary,
): JobSummary {
  if (prev !== null) {
    if (prev.id !== next.id) {
      throw new Error(`job id changed: ${prev.id} -> ${next.id}`);
    }
    if (STATUS_ORDER[next.status] < STATUS_ORDER[prev.status]) {
      throw new Error(
        `job ${next.id} went backward: ${prev.status} -> ${next.status}`,
      );
    }
  }
  return next;
}

export interface HistoryEntry {
  kind: string;
  params: Record<string, unknown>;
  label: string;
}

interface PanelFlight {
  controller: AbortController;
  seq: number;
}

export class ConsoleState {
  scene: SceneSummary | null = null;
  selectedMask: string | null = null;
  /** PNG bytes currently shown in each pane. */
  before: ArrayBuffer | null = null;
  after: ArrayBuffer | null = null;
  history: HistoryEntry[] = [];

  private flights = new Map<string, PanelFlight>();
  private nextSeq = 1;

  setScene(scene: SceneSummary): void {
    this.scene = scene;
    if (this.selectedMask && !scene.masks.includes(this.selectedMask)) {
      this.selectedMask = null;
    }
  }

  selectMask(name: string): void {
    if (!this.scene || !this.scene.masks.includes(name)) {
      throw new Error(`unknown mask ${name}`);
    }
    this.selectedMask = name;
  }

  pushHistory(entry: HistoryEntry): void {
    this.history.push(entry);
  }

  /** Pop the latest edit; returns the entry whose values the controls
   * should restore, or null at the bottom of the stack. */
  undo(): HistoryEntry | null {
    this.history.pop();
    return this.history.length
      ? this.history[this.history.length - 1]
      : null;
  }

  /** Start a preview on a panel: cancels that panel's previous in-flight
   * request and hands back a ticket the result must present. */
  beginPreview(panel: string): { signal: AbortSignal; seq: number } {
    const prev = this.flights.get(panel);
    if (prev) prev.controller.abort();
    const controller = new AbortController();
    const seq = this.nextSeq++;
    this.flights.set(panel, { controller, seq });
    return { signal: controller.signal, seq };
  }

  /** True when this ticket is still the newest for the panel; stale
   * results are dropped so the last submission wins the pane. */
  commitResult(panel: string, seq: number, image: ArrayBuffer): boolean {
    const flight = this.flights.get(panel);
    if (!flight || flight.seq !== seq) return false;
    this.flights.delete(panel);
    this.after = image;
    return true;
  }

  inFlight(panel: string): boolean {
    return this.flights.has(panel);
  }
}
