/**
 * Orchestration between the API client and the view state. The view
 * layer calls these actions and rerenders on every change notification;
 * tests drive the same actions directly against a stub server.
 *
 * One long-poll is kept in flight at a time. Its response carries both
 * new transcript events and the authoritative remaining-seconds, so the
 * controller never decides on its own that time is up: it either hears
 * it from a poll or from a 410 on a send.
 */

import { ApiError, ArenaClient } from "./api.js";
import {
  applyEvents,
  canEndTurn,
  canSend,
  expireToVerdict,
  initialState,
  type ChatViewState,
} from "./state.js";
import { emptyForm, toParticipantRequest, validate, type QuestionnaireForm } from "./questionnaire.js";
import { toVerdictRequest } from "./verdict.js";

export type SleepFn = (ms: number) => Promise<void>;

const defaultSleep: SleepFn = (ms) => new Promise((resolve) => setTimeout(resolve, ms));

export const POLL_WAIT_S = 25;
const RETRY_BASE_MS = 500;
const RETRY_CAP_MS = 8000;

export class Controller {
  state: ChatViewState;
  form: QuestionnaireForm;
  formErrors: Partial<Record<keyof QuestionnaireForm, string>>;

  private client: ArenaClient;
  private sleep: SleepFn;
  private listeners: Array<() => void> = [];
  private pollInFlight = false;

  constructor(client: ArenaClient, sleep: SleepFn = defaultSleep) {
    this.client = client;
    this.sleep = sleep;
    this.state = initialState();
    this.form = emptyForm();
    this.formErrors = {};
  }

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  /**
   * Text inputs mutate silently: the DOM box already shows the keystroke,
   * and a rerender mid-typing would drop the caret.
   */
  setFormField<K extends keyof QuestionnaireForm>(key: K, value: QuestionnaireForm[K]): void {
    this.form[key] = value;
  }

  /** Validate, enroll, and open the first session. */
  async submitQuestionnaire(): Promise<void> {
    this.formErrors = validate(this.form);
    if (Object.keys(this.formErrors).length > 0) {
      this.notify();
      return;
    }
    const enrolled = await this.client.enroll(toParticipantRequest(this.form));
    this.state.participantId = enrolled.participant_id;
    await this.openSession();
  }

  private async openSession(): Promise<void> {
    if (this.state.participantId === null) return;
    const session = await this.client.openSession(this.state.participantId);
    const participantId = this.state.participantId;
    this.state = initialState();
    this.state.participantId = participantId;
    this.state.sessionId = session.session_id;
    this.state.topic = session.topic;
    this.state.prompt = session.prompt;
    this.state.phase = "chatting";
    this.notify();
    await this.pollOnce(0);
  }

  setDraft(text: string): void {
    this.state.draft = text;
  }

  /**
   * Transmit the draft. The draft clears only on success; a 410 flips
   * to the verdict phase with the text still in the box.
   */
  async send(): Promise<void> {
    if (!canSend(this.state) || this.state.sessionId === null) return;
    const text = this.state.draft.trim();
    try {
      await this.client.sendMessage(this.state.sessionId, text);
    } catch (err) {
      this.handleChatError(err);
      return;
    }
    this.state.draft = "";
    this.state.sentThisTurn += 1;
    this.state.notice = null;
    this.notify();
  }

  /** Yield the floor so the other side answers everything sent so far. */
  async endTurn(): Promise<void> {
    if (!canEndTurn(this.state) || this.state.sessionId === null) return;
    try {
      await this.client.endTurn(this.state.sessionId);
    } catch (err) {
      this.handleChatError(err);
      return;
    }
    this.state.awaitingReply = true;
    this.state.sentThisTurn = 0;
    this.state.notice = null;
    this.notify();
  }

  private handleChatError(err: unknown): void {
    if (err instanceof ApiError && err.status === 410) {
      expireToVerdict(this.state);
      this.notify();
      return;
    }
    if (err instanceof ApiError && err.status === 409) {
      this.state.notice = "Hold on, the other side is still typing.";
      this.notify();
      return;
    }
    throw err;
  }

  /**
   * One events round-trip. Skipped if a poll is already out, so there is
   * never more than one in flight.
   */
  async pollOnce(waitS: number = POLL_WAIT_S): Promise<void> {
    if (this.pollInFlight) return;
    if (this.state.phase !== "chatting" || this.state.sessionId === null) return;
    this.pollInFlight = true;
    try {
      const res = await this.client.pollEvents(this.state.sessionId, this.state.cursor, waitS);
      this.state.notice = null;
      applyEvents(this.state, res);
      this.notify();
    } finally {
      this.pollInFlight = false;
    }
  }

  /** Keep a long-poll out until the session leaves the chatting phase. */
  async runPollLoop(): Promise<void> {
    let retryMs = RETRY_BASE_MS;
    while (this.state.phase === "chatting" && this.state.sessionId !== null) {
      try {
        await this.pollOnce(POLL_WAIT_S);
        retryMs = RETRY_BASE_MS;
      } catch (err) {
        if (err instanceof ApiError && err.status === 410) {
          expireToVerdict(this.state);
          this.notify();
          return;
        }
        this.state.notice = "Connection hiccup, retrying.";
        this.notify();
        await this.sleep(retryMs);
        retryMs = Math.min(retryMs * 2, RETRY_CAP_MS);
      }
    }
  }

  setRating(rating: number): void {
    this.state.verdict.rating = rating;
    this.notify();
  }

  toggleReason(id: string): void {
    const reasons = this.state.verdict.reasons;
    const at = reasons.indexOf(id);
    if (at >= 0) reasons.splice(at, 1);
    else reasons.push(id);
    this.notify();
  }

  setFreeText(text: string): void {
    this.state.verdict.freeText = text;
  }

  /** Submit the verdict and land on the reveal. */
  async submitVerdict(): Promise<void> {
    if (this.state.phase !== "verdict" || this.state.sessionId === null) return;
    const { rating, reasons, freeText } = this.state.verdict;
    let body;
    try {
      body = toVerdictRequest(rating, reasons, freeText);
    } catch {
      this.state.notice = "Pick a rating other than the midpoint first.";
      this.notify();
      return;
    }
    try {
      const reveal = await this.client.submitVerdict(this.state.sessionId, body);
      this.state.reveal = reveal;
      this.state.phase = "revealed";
      this.state.notice = null;
    } catch (err) {
      if (err instanceof ApiError) {
        this.state.notice = `The server rejected the verdict: ${err.code}.`;
      } else {
        throw err;
      }
    }
    this.notify();
  }

  /** From the reveal screen, start another round as the same participant. */
  async nextSession(): Promise<void> {
    if (this.state.phase !== "revealed") return;
    if (this.state.participantId === null) {
      this.state = initialState();
      this.form = emptyForm();
      this.notify();
      return;
    }
    await this.openSession();
  }
}
