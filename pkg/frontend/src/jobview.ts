// JobView: live job state for the monitor. Poll responses may arrive out
// of order; the view only ever advances along the legal phase chain and
// discards stale snapshots.

import type { JobRecordDoc, JobState } from "./types.js";
import { PHASE_CHAIN, TERMINAL_STATES } from "./types.js";

const RANK: Record<JobState, number> = {
  scheduled: 0,
  queued: 1,
  fetching: 2,
  decrypting: 3,
  running: 4,
  encrypting_results: 5,
  uploading: 6,
  completed: 7,
  failed: 7,
  cancelled: 7,
};

export class JobView {
  state: JobState;
  timestamps: Partial<Record<JobState, number>>;
  error: { code: string; message: string } | null = null;
  readonly jobId: string;

  constructor(record: JobRecordDoc) {
    this.jobId = record.job_id;
    this.state = record.state;
    this.timestamps = { ...record.timestamps };
    this.error = record.error;
  }

  /** Applies a poll snapshot; returns true when the view advanced. */
  update(record: JobRecordDoc): boolean {
    if (record.job_id !== this.jobId) return false;
    if (RANK[record.state] < RANK[this.state]) return false; // stale poll
    if (RANK[record.state] === RANK[this.state] && record.state !== this.state) return false;
    const advanced = record.state !== this.state;
    this.state = record.state;
    this.timestamps = { ...this.timestamps, ...record.timestamps };
    this.error = record.error ?? this.error;
    return advanced;
  }

  get terminal(): boolean {
    return TERMINAL_STATES.includes(this.state);
  }

  get resultsAvailable(): boolean {
    return this.state === "completed";
  }

  /** Phases reached so far, in chain order (for the timeline display). */
  phasesReached(): { phase: JobState; at: number }[] {
    const reached = PHASE_CHAIN.filter((p) => this.timestamps[p] !== undefined).map((p) => ({
      phase: p,
      at: this.timestamps[p]!,
    }));
    for (const terminal of ["failed", "cancelled"] as JobState[]) {
      if (this.timestamps[terminal] !== undefined) {
        reached.push({ phase: terminal, at: this.timestamps[terminal]! });
      }
    }
    return reached.sort((a, b) => a.at - b.at);
  }
}

/** True when the observed phase sequence is a prefix of the legal chain
 * (terminal failure/cancellation may cap it anywhere). */
export function isLegalPhaseSequence(phases: JobState[]): boolean {
  let limit = -1;
  for (const phase of phases) {
    if (phase === "failed" || phase === "cancelled") return true; // cap
    const rank = PHASE_CHAIN.indexOf(phase);
    if (rank === -1 || rank <= limit) return false;
    limit = rank;
  }
  return true;
}
