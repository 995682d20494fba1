// Review session state machine: one rater walking the unscored queue.
// All metrics shown to the rater come from the server; the session never
// computes agreement or averages itself.

import { MemoryStore, RetryQueue, ReviewApi, type SubmitOutcome } from "./api.js";
import { CRITERIA, isValidScore } from "./rubric.js";
import type { Progress, ReviewItem, Scores } from "./types.js";

export type SessionState = "loading" | "scoring" | "offline" | "done";

export class ReviewSession {
  state: SessionState = "loading";
  current: ReviewItem | null = null;
  progress: Progress = { scored: 0, total: 0 };
  selections: Partial<Scores> = {};

  readonly retry: RetryQueue;

  constructor(
    readonly api: ReviewApi,
    readonly rater: string,
    retry?: RetryQueue,
  ) {
    if (!rater.trim()) throw new Error("rater id must be nonempty");
    this.retry = retry ?? new RetryQueue(api, new MemoryStore());
  }

  async start(): Promise<void> {
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    this.state = "loading";
    try {
      const queue = await this.api.nextUnscored(this.rater);
      this.progress = queue.progress;
      this.current = queue.item;
      this.selections = {};
      this.state = queue.item === null ? "done" : "scoring";
    } catch {
      this.state = "offline";
    }
  }

  select(criterion: string, value: number): void {
    if (!(CRITERIA as readonly string[]).includes(criterion)) {
      throw new Error(`unknown criterion ${criterion}`);
    }
    if (!isValidScore(value)) {
      throw new Error(`score ${value} is not in {-1, 1, 2, 3}`);
    }
    this.selections[criterion] = value;
  }

  /** Submission stays disabled until every criterion has a selection. */
  canSubmit(): boolean {
    return (
      this.current !== null &&
      CRITERIA.every((criterion) => this.selections[criterion] !== undefined)
    );
  }

  async submit(): Promise<SubmitOutcome> {
    if (this.current === null) throw new Error("nothing to submit");
    if (!this.canSubmit()) throw new Error("all five criteria need a selection");
    const outcome = await this.retry.submit({
      triplet_id: this.current.id,
      rater_id: this.rater,
      scores: { ...(this.selections as Scores) },
    });
    if (outcome === "confirmed") {
      await this.loadNext();
    } else {
      // parked for redelivery; keep the rater moving without the network
      this.state = "offline";
      this.selections = {};
    }
    return outcome;
  }

  /** Redeliver parked submissions and resume the queue. */
  async reconnect(): Promise<number> {
    const delivered = await this.retry.flush();
    await this.loadNext();
    return delivered;
  }
}
