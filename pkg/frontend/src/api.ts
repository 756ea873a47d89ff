/**
 * Thin client over the six arena endpoints.
 *
 * The fetch implementation is injected so tests can run against an
 * in-memory stub. Only the structural parts of Response that we use are
 * required of the stub: ok, status, and json().
 */

import type {
  EventsResponse,
  MessageRequest,
  ParticipantRequest,
  ParticipantResponse,
  RevealResponse,
  SessionRequest,
  SessionResponse,
  TranscriptEntry,
  VerdictRequest,
} from "./types.js";

export interface FetchResponse {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchFn = (url: string, init?: RequestInit) => Promise<FetchResponse>;

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, detail: string) {
    super(detail || code);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

async function raiseFor(res: FetchResponse): Promise<never> {
  let code = "UnknownError";
  let detail = "";
  try {
    const body = (await res.json()) as { error?: string; detail?: string };
    if (body && typeof body.error === "string") code = body.error;
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the defaults
  }
  throw new ApiError(res.status, code, detail);
}

export class ArenaClient {
  private baseUrl: string;
  private fetchFn: FetchFn;

  constructor(baseUrl: string, fetchFn: FetchFn) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) await raiseFor(res);
    return (await res.json()) as T;
  }

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path);
    if (!res.ok) await raiseFor(res);
    return (await res.json()) as T;
  }

  enroll(profile: ParticipantRequest): Promise<ParticipantResponse> {
    return this.post("/participants", profile);
  }

  openSession(participantId: string): Promise<SessionResponse> {
    const body: SessionRequest = { participant_id: participantId };
    return this.post("/sessions", body);
  }

  sendMessage(sessionId: string, text: string): Promise<TranscriptEntry> {
    const body: MessageRequest = { text };
    return this.post(`/sessions/${sessionId}/messages`, body);
  }

  endTurn(sessionId: string): Promise<{ ok: boolean }> {
    return this.post(`/sessions/${sessionId}/end-turn`, {});
  }

  pollEvents(sessionId: string, since: number, wait: number): Promise<EventsResponse> {
    const q = `since=${since}&wait=${wait}`;
    return this.get(`/sessions/${sessionId}/events?${q}`);
  }

  submitVerdict(sessionId: string, verdict: VerdictRequest): Promise<RevealResponse> {
    return this.post(`/sessions/${sessionId}/verdict`, verdict);
  }
}
