// Typed client for the review API plus a persistent retry queue so a score
// submitted while offline survives reloads and is eventually delivered.
//
// The server resolves (triplet, rater) last-write-wins, so replaying a
// submission whose acknowledgment was lost cannot duplicate a record.

import type {
  AgreementReport,
  QueueResponse,
  ReviewItem,
  ScoreSubmission,
  SubmitAck,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

export class ReviewApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(detail, response.status);
    }
    return (await response.json()) as T;
  }

  nextUnscored(rater: string): Promise<QueueResponse> {
    const query = new URLSearchParams({ rater, unscored: "1" });
    return this.request<QueueResponse>(`/api/triplets?${query}`);
  }

  getTriplet(id: string): Promise<ReviewItem> {
    return this.request<ReviewItem>(`/api/triplets/${encodeURIComponent(id)}`);
  }

  submitScores(submission: ScoreSubmission): Promise<SubmitAck> {
    return this.request<SubmitAck>("/api/scores", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(submission),
    });
  }

  agreement(): Promise<AgreementReport> {
    return this.request<AgreementReport>("/api/agreement");
  }

  async exportCsv(): Promise<string> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/export`);
    if (!response.ok) throw new ApiError(response.statusText, response.status);
    return response.text();
  }

  imageUrl(item: ReviewItem): string {
    return `${this.baseUrl}${item.image_url}`;
  }

  exportUrl(): string {
    return `${this.baseUrl}/api/export`;
  }
}

// --- retry queue -----------------------------------------------------------

export interface PendingStore {
  load(): ScoreSubmission[];
  save(items: ScoreSubmission[]): void;
}

export class MemoryStore implements PendingStore {
  private items: ScoreSubmission[] = [];
  load(): ScoreSubmission[] {
    return [...this.items];
  }
  save(items: ScoreSubmission[]): void {
    this.items = [...items];
  }
}

/** localStorage-backed store so pending submissions survive a reload. */
export class WebStorageStore implements PendingStore {
  constructor(
    private readonly key: string,
    private readonly storage: Pick<Storage, "getItem" | "setItem"> = localStorage,
  ) {}

  load(): ScoreSubmission[] {
    const raw = this.storage.getItem(this.key);
    if (!raw) return [];
    try {
      return JSON.parse(raw) as ScoreSubmission[];
    } catch {
      return [];
    }
  }

  save(items: ScoreSubmission[]): void {
    this.storage.setItem(this.key, JSON.stringify(items));
  }
}

export type SubmitOutcome = "confirmed" | "queued";

export class RetryQueue {
  constructor(
    private readonly api: ReviewApi,
    private readonly store: PendingStore,
  ) {}

  pending(): ScoreSubmission[] {
    return this.store.load();
  }

  private park(submission: ScoreSubmission): void {
    const items = this.store
      .load()
      .filter(
        (p) =>
          !(p.triplet_id === submission.triplet_id && p.rater_id === submission.rater_id),
      );
    items.push(submission);
    this.store.save(items);
  }

  /** Try to deliver now; transport failures and 5xx park the submission. */
  async submit(submission: ScoreSubmission): Promise<SubmitOutcome> {
    try {
      await this.api.submitScores(submission);
      return "confirmed";
    } catch (err) {
      if (err instanceof ApiError && err.status < 500) throw err;
      this.park(submission);
      return "queued";
    }
  }

  /** Redeliver everything parked; returns how many were confirmed. */
  async flush(): Promise<number> {
    const items = this.store.load();
    const remaining: ScoreSubmission[] = [];
    let confirmed = 0;
    for (const submission of items) {
      try {
        await this.api.submitScores(submission);
        confirmed += 1;
      } catch (err) {
        if (err instanceof ApiError && err.status < 500) throw err;
        remaining.push(submission);
      }
    }
    this.store.save(remaining);
    return confirmed;
  }
}
