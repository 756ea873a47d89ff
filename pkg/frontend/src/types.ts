/**
 * Wire types for the arena HTTP API.
 *
 * These mirror the server's request and response bodies field for field.
 * Anything optional on the server side is sent explicitly as null rather
 * than omitted, so recorded request payloads are stable.
 */

export interface ParticipantRequest {
  initials: string;
  interviewer: string;
  ai_familiarity: number;
  age: number | null;
  closeness: number | null;
  text_frequency: number | null;
  played_before: boolean;
}

export interface ParticipantResponse {
  participant_id: string;
}

export interface SessionRequest {
  participant_id: string;
}

export interface SessionResponse {
  session_id: string;
  topic: string;
  prompt: string;
}

export interface MessageRequest {
  text: string;
}

export interface TranscriptEntry {
  sender: string;
  text: string;
  t: number;
}

export interface ChatEvent {
  i: number;
  sender: string;
  t: number;
  text: string;
}

export type SessionState = "live" | "awaiting-verdict" | "revealed" | "aborted";

export interface EventsResponse {
  events: ChatEvent[];
  cursor: number;
  remaining: number;
  state: SessionState;
}

export interface VerdictRequest {
  rating: number;
  reasons: string[];
  free_text: string;
}

export interface RevealResponse {
  kind: string;
  config: string;
}

export interface ErrorBody {
  error: string;
  detail: string;
}
