/** Payload types for the /api/v1 routes. */

export interface ModelSummary {
  prototypes: number;
  dimension: number;
  confusions: number[][][];
  config: Record<string, unknown>;
  categories: string[];
  importance_rank: number[];
}

export interface PairSummary {
  pair_index: number;
  source_doc: string;
  target_doc: string;
  sentences: number;
}

export interface FusedState {
  doc_id: string;
  index: number;
  posterior: number[];
  argmax_label: number;
  fallback_used: boolean;
  prototype: number;
  confusion_row: number[];
}

export interface SentenceState {
  doc_id: string;
  index: number;
  text: string;
  machine_probs: number[];
  prototype: number;
  human_label: number | null;
  fused: FusedState | null;
}

export interface Session {
  session_id: string;
  source_doc: string;
  target_doc: string;
  sentences: SentenceState[];
  relation: number | null;
  score: number | null;
  created_at: string;
  updated_at: string;
}

export interface SessionSummary {
  session_id: string;
  source_doc: string;
  target_doc: string;
  marked: number;
  total: number;
  relation: number | null;
}

export interface DecisionsResponse {
  session_id: string;
  fused: FusedState[];
}

export interface CategorySimilarity {
  category: number;
  mass_source: number;
  mass_target: number;
  similarity: number | null;
}

export interface MatchResponse {
  session_id: string;
  relation: number;
  score: number;
  per_category: CategorySimilarity[];
  machine_filled: { doc_id: string; index: number }[];
}

export interface Health {
  status: string;
  model_loaded: boolean;
  sessions: number;
}
