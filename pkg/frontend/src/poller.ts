// Status polling: one timer per job id (concurrent polls deduplicated),
// stopping automatically once the job is terminal.

import type { ApiClient } from "./api.js";
import { JobView } from "./jobview.js";
import type { JobRecordDoc } from "./types.js";

export class JobPoller {
  private timers = new Map<string, ReturnType<typeof setInterval>>();

  constructor(private api: ApiClient, private intervalMs = 2000) {}

  /** Polls until terminal, invoking onUpdate after each accepted snapshot. */
  watch(record: JobRecordDoc, onUpdate: (view: JobView) => void): JobView {
    const view = new JobView(record);
    onUpdate(view);
    if (view.terminal) return view;
    if (this.timers.has(view.jobId)) return view; // already watching
    let inFlight = false;
    const timer = setInterval(async () => {
      if (inFlight) return;
      inFlight = true;
      try {
        const snapshot = await this.api.jobStatus(view.jobId);
        view.update(snapshot);
        onUpdate(view);
        if (view.terminal) this.stop(view.jobId);
      } catch {
        // transient poll failure: keep trying until stopped
      } finally {
        inFlight = false;
      }
    }, this.intervalMs);
    this.timers.set(view.jobId, timer);
    return view;
  }

  stop(jobId: string): void {
    const timer = this.timers.get(jobId);
    if (timer !== undefined) {
      clearInterval(timer);
      this.timers.delete(jobId);
    }
  }

  stopAll(): void {
    for (const jobId of [...this.timers.keys()]) this.stop(jobId);
  }
}
