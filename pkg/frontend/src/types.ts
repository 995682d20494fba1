// Payload shapes of the review HTTP API. Field names match the server's
// JSON exactly; the UI renders them unmodified.

export interface ReviewItem {
  id: string;
  question: string;
  answer: string;
  explanation: string;
  pipeline: string | null;
  image_id: string;
  image_url: string;
  vip: boolean;
  object_name: string | null;
}

export interface Progress {
  scored: number;
  total: number;
}

export interface QueueResponse {
  item: ReviewItem | null;
  progress: Progress;
}

export type Scores = Record<string, number>;

export interface ScoreSubmission {
  triplet_id: string;
  rater_id: string;
  scores: Scores;
}

export interface SubmitAck {
  ok: boolean;
  overwrites: boolean;
  timestamp: string;
}

export interface AgreementReport {
  per_criterion: Record<string, number | null>;
  average: number | null;
  raters: string[];
  items_complete: number;
  per_rater_means: Record<string, Record<string, number>>;
}
