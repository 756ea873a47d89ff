/**
 * Intake questionnaire: field definitions, validation, and the exact
 * enrollment payload. Starred fields block submission when empty; the
 * optional ones go over the wire as null so the payload shape is the
 * same for every participant.
 */

import type { ParticipantRequest } from "./types.js";

export interface QuestionnaireForm {
  initials: string;
  interviewer: string;
  aiFamiliarity: string;
  age: string;
  closeness: string;
  textFrequency: string;
  playedBefore: boolean;
}

export interface FieldSpec {
  key: keyof QuestionnaireForm;
  label: string;
  required: boolean;
  kind: "text" | "scale" | "number" | "flag";
  min?: number;
  max?: number;
}

export const QUESTIONNAIRE_FIELDS: FieldSpec[] = [
  { key: "initials", label: "Your initials", required: true, kind: "text" },
  { key: "interviewer", label: "Interviewer initials", required: true, kind: "text" },
  {
    key: "aiFamiliarity",
    label: "Familiarity with AI chatbots (1-7)",
    required: true,
    kind: "scale",
    min: 1,
    max: 7,
  },
  { key: "age", label: "Age", required: false, kind: "number", min: 1, max: 120 },
  {
    key: "closeness",
    label: "Closeness to the person being imitated (1-7)",
    required: false,
    kind: "scale",
    min: 1,
    max: 7,
  },
  {
    key: "textFrequency",
    label: "How often you text with them (1-7)",
    required: false,
    kind: "scale",
    min: 1,
    max: 7,
  },
  { key: "playedBefore", label: "Played a round before today", required: false, kind: "flag" },
];

export function emptyForm(): QuestionnaireForm {
  return {
    initials: "",
    interviewer: "",
    aiFamiliarity: "",
    age: "",
    closeness: "",
    textFrequency: "",
    playedBefore: false,
  };
}

function parseScale(raw: string, spec: FieldSpec): number | string {
  const n = Number(raw);
  if (!Number.isInteger(n)) return `${spec.label} must be a whole number`;
  if (spec.min !== undefined && n < spec.min) return `${spec.label} must be at least ${spec.min}`;
  if (spec.max !== undefined && n > spec.max) return `${spec.label} must be at most ${spec.max}`;
  return n;
}

/** Returns a map of field key to message; empty map means the form is good. */
export function validate(form: QuestionnaireForm): Partial<Record<keyof QuestionnaireForm, string>> {
  const errors: Partial<Record<keyof QuestionnaireForm, string>> = {};
  for (const spec of QUESTIONNAIRE_FIELDS) {
    if (spec.kind === "flag") continue;
    const raw = (form[spec.key] as string).trim();
    if (raw === "") {
      if (spec.required) errors[spec.key] = `${spec.label} is required`;
      continue;
    }
    if (spec.kind === "scale" || spec.kind === "number") {
      const parsed = parseScale(raw, spec);
      if (typeof parsed === "string") errors[spec.key] = parsed;
    }
  }
  return errors;
}

/** Build the enrollment body. Call only after validate() comes back clean. */
export function toParticipantRequest(form: QuestionnaireForm): ParticipantRequest {
  const optional = (raw: string): number | null => {
    const trimmed = raw.trim();
    return trimmed === "" ? null : Number(trimmed);
  };
  return {
    initials: form.initials.trim(),
    interviewer: form.interviewer.trim(),
    ai_familiarity: Number(form.aiFamiliarity.trim()),
    age: optional(form.age),
    closeness: optional(form.closeness),
    text_frequency: optional(form.textFrequency),
    played_before: form.playedBefore,
  };
}
