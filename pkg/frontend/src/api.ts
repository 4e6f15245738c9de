/** Typed client for the matching service. All state lives server-side; the
 * UI never computes fusion locally. */

import type {
  DecisionsResponse,
  Health,
  MatchResponse,
  ModelSummary,
  PairSummary,
  Session,
  SessionSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(`${this.baseUrl}/api/v1${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      throw new ApiError(response.status, await parseDetail(response));
    }
    return (await response.json()) as T;
  }

  health(): Promise<Health> {
    return this.request<Health>("/healthz");
  }

  model(): Promise<ModelSummary> {
    return this.request<ModelSummary>("/model");
  }

  pairs(): Promise<PairSummary[]> {
    return this.request<PairSummary[]>("/pairs");
  }

  sessions(): Promise<SessionSummary[]> {
    return this.request<SessionSummary[]>("/sessions");
  }

  createSession(pairIndex: number): Promise<Session> {
    return this.request<Session>("/sessions", {
      method: "POST",
      body: JSON.stringify({ pair_index: pairIndex }),
    });
  }

  getSession(sessionId: string): Promise<Session> {
    return this.request<Session>(`/sessions/${sessionId}`);
  }

  submitDecision(
    sessionId: string,
    docId: string,
    index: number,
    label: number,
  ): Promise<DecisionsResponse> {
    return this.request<DecisionsResponse>(`/sessions/${sessionId}/decisions`, {
      method: "PUT",
      body: JSON.stringify({ decisions: [{ doc_id: docId, index, label }] }),
    });
  }

  match(sessionId: string, finalizeUnmarked: boolean): Promise<MatchResponse> {
    return this.request<MatchResponse>(`/sessions/${sessionId}/match`, {
      method: "POST",
      body: JSON.stringify(finalizeUnmarked ? { finalize_unmarked: "machine" } : {}),
    });
  }
}
