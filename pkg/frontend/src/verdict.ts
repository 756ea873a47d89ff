/**
 * Verdict form model. Ratings run 1-7 with 4 ruled out: the participant
 * has to lean human or AI, and the midpoint stays on the screen only to
 * show the scale is centered. Reason checkboxes use the server's ids.
 */

import type { VerdictRequest } from "./types.js";

export const RATINGS = [1, 2, 3, 4, 5, 6, 7] as const;
export const DISALLOWED_RATING = 4;

export const RATING_HINTS: Record<number, string> = {
  1: "certainly AI",
  4: "unsure",
  7: "certainly human",
};

export interface ReasonOption {
  id: string;
  label: string;
}

export const VERDICT_REASONS: ReasonOption[] = [
  { id: "contextual-knowledge", label: "Contextual knowledge" },
  { id: "stylistic-conversation", label: "Conversational style" },
  { id: "stylistic-flow", label: "Flow of the exchange" },
];

export function ratingSelectable(rating: number): boolean {
  return rating !== DISALLOWED_RATING && rating >= 1 && rating <= 7;
}

export function toVerdictRequest(
  rating: number | null,
  reasons: string[],
  freeText: string,
): VerdictRequest {
  if (rating === null || !ratingSelectable(rating)) {
    throw new Error(`rating must be 1-7 and not ${DISALLOWED_RATING}`);
  }
  const known = new Set(VERDICT_REASONS.map((r) => r.id));
  for (const reason of reasons) {
    if (!known.has(reason)) throw new Error(`unknown reason: ${reason}`);
  }
  return { rating, reasons: [...reasons], free_text: freeText };
}
