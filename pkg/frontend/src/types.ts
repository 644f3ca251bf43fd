// Payload shapes of the review service API.  Field names mirror the wire
// format exactly; the UI renders these values and never derives its own.

export interface GoldLabel {
  label: string;
  unseen: boolean;
}

export type PredictionCategory = "correct" | "known" | "novel";

export interface PredictedLabel {
  label: string;
  score: number;
  rank: number;
  category: PredictionCategory;
}

export interface Judgment {
  reviewer: string;
  sensible: boolean;
  informative: boolean;
  timestamp: number;
}

export interface Candidate {
  label: string;
  rank: number;
  score: number;
  semantic_match: boolean | null;
  judgments: Judgment[];
}

export interface InstancePayload {
  id: string;
  text: string;
  gold: GoldLabel[];
  predicted: PredictedLabel[];
  candidates: Candidate[];
}

export interface InstancePage {
  instances: InstancePayload[];
  next_cursor: string | null;
  total_instances: number;
}

export interface StatsRow {
  key: "yes" | "no" | "total";
  n_labels: number;
  sensible_pct: number | null;
  informative_pct: number | null;
  sensible_fraction: number | null;
  informative_fraction: number | null;
}

export interface Stats {
  rows: StatsRow[];
  coverage: { reviewed: number; total: number };
}

export interface ReviewSubmission {
  instance_id: string;
  label: string;
  sensible: boolean;
  informative: boolean;
  reviewer: string;
}
