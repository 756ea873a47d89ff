/**
 * View state for one run through the arena, plus the pure transitions
 * that the controller applies to it.
 *
 * The phase machine is questionnaire -> chatting -> verdict -> revealed.
 * Hitting the deadline is a phase transition (chatting -> verdict), not
 * an error: the draft survives it and is simply never transmitted.
 *
 * The countdown is owned by the server. Every events response carries
 * `remaining`; the display may interpolate between polls but is clamped
 * to the last server-reported value, never run off the local clock alone.
 */

import type { ChatEvent, EventsResponse, RevealResponse } from "./types.js";

export type Phase = "questionnaire" | "chatting" | "verdict" | "revealed";

export const PARTICIPANT_SENDER = "participant";

export interface Bubble {
  i: number;
  mine: boolean;
  text: string;
  t: number;
}

export interface VerdictDraft {
  rating: number | null;
  reasons: string[];
  freeText: string;
}

export interface ChatViewState {
  phase: Phase;
  participantId: string | null;
  sessionId: string | null;
  topic: string | null;
  prompt: string | null;
  bubbles: Bubble[];
  cursor: number;
  /** Seconds left, as last reported by the server. Null before the first poll. */
  remaining: number | null;
  /** Local ms timestamp of the poll that reported `remaining`. */
  syncedAt: number | null;
  draft: string;
  /** Messages sent since the participant last yielded the turn. */
  sentThisTurn: number;
  /** True between end-turn and the next interlocutor event. */
  awaitingReply: boolean;
  verdict: VerdictDraft;
  reveal: RevealResponse | null;
  aborted: boolean;
  notice: string | null;
}

export function initialState(): ChatViewState {
  return {
    phase: "questionnaire",
    participantId: null,
    sessionId: null,
    topic: null,
    prompt: null,
    bubbles: [],
    cursor: 0,
    remaining: null,
    syncedAt: null,
    draft: "",
    sentThisTurn: 0,
    awaitingReply: false,
    verdict: { rating: null, reasons: [], freeText: "" },
    reveal: null,
    aborted: false,
    notice: null,
  };
}

/** The one gate on the composer: chatting phase with time on the clock. */
export function inputEnabled(state: ChatViewState): boolean {
  if (state.phase !== "chatting") return false;
  return state.remaining !== null && state.remaining > 0;
}

export function canSend(state: ChatViewState): boolean {
  return inputEnabled(state) && !state.awaitingReply && state.draft.trim().length > 0;
}

export function canEndTurn(state: ChatViewState): boolean {
  return inputEnabled(state) && !state.awaitingReply && state.sentThisTurn > 0;
}

function toBubble(event: ChatEvent): Bubble {
  return {
    i: event.i,
    mine: event.sender === PARTICIPANT_SENDER,
    text: event.text,
    t: event.t,
  };
}

/**
 * Fold an events response into the state. New events append in order;
 * the cursor advances so the next poll picks up where this one stopped.
 * A non-live server state drives the phase forward.
 */
export function applyEvents(state: ChatViewState, res: EventsResponse): void {
  for (const event of res.events) {
    state.bubbles.push(toBubble(event));
    if (event.sender !== PARTICIPANT_SENDER) {
      state.awaitingReply = false;
    }
  }
  state.cursor = res.cursor;
  state.remaining = res.remaining;
  state.syncedAt = Date.now();

  if (res.state === "awaiting-verdict" && state.phase === "chatting") {
    state.phase = "verdict";
  } else if (res.state === "aborted" && state.phase === "chatting") {
    state.aborted = true;
    state.phase = "revealed";
    state.notice = "The session ended early on the other side and will not be counted.";
  }
}

/** Called when a send or end-turn comes back 410: the clock ran out mid-flight. */
export function expireToVerdict(state: ChatViewState): void {
  if (state.phase === "chatting") {
    state.phase = "verdict";
    state.remaining = 0;
  }
}

/**
 * Seconds to paint on the countdown at local time `nowMs`. Interpolates
 * from the last server report so the display moves between polls, but
 * the server value is the anchor.
 */
export function displayRemaining(state: ChatViewState, nowMs: number): number | null {
  if (state.remaining === null) return null;
  if (state.syncedAt === null) return state.remaining;
  const elapsed = (nowMs - state.syncedAt) / 1000;
  return Math.max(0, state.remaining - Math.max(0, elapsed));
}
