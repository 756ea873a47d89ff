/**
 * DOM rendering, one function per phase. The whole app node is rebuilt
 * on every state change; the tree is small enough that diffing would be
 * ceremony. Nothing rendered before the reveal carries identity data:
 * until the verdict round-trip returns, the client simply does not have
 * it.
 */

import type { Controller } from "./controller.js";
import { canEndTurn, canSend, displayRemaining, inputEnabled } from "./state.js";
import { QUESTIONNAIRE_FIELDS, type FieldSpec } from "./questionnaire.js";
import { DISALLOWED_RATING, RATING_HINTS, RATINGS, VERDICT_REASONS } from "./verdict.js";

type Attrs = Record<string, string | boolean | EventListener>;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  ...children: Array<Node | string>
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === "function") {
      node.addEventListener(key, value);
    } else if (typeof value === "boolean") {
      if (key in node) (node as unknown as Record<string, boolean>)[key] = value;
      else if (value) node.setAttribute(key, "");
    } else {
      node.setAttribute(key, value);
    }
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

export function formatClock(seconds: number | null): string {
  if (seconds === null) return "--:--";
  const whole = Math.max(0, Math.floor(seconds));
  const m = String(Math.floor(whole / 60)).padStart(2, "0");
  const s = String(whole % 60).padStart(2, "0");
  return `${m}:${s}`;
}

function fieldRow(ctl: Controller, spec: FieldSpec): HTMLElement {
  const star = spec.required ? " *" : "";
  const error = ctl.formErrors[spec.key];
  if (spec.kind === "flag") {
    const box = el("input", {
      type: "checkbox",
      "data-field": spec.key,
      change: (e) => ctl.setFormField(spec.key, (e.target as HTMLInputElement).checked),
    });
    box.checked = ctl.form[spec.key] as boolean;
    return el("label", { class: "field flag" }, box, ` ${spec.label}`);
  }
  const input = el("input", {
    type: "text",
    "data-field": spec.key,
    value: ctl.form[spec.key] as string,
    input: (e) => ctl.setFormField(spec.key, (e.target as HTMLInputElement).value),
  });
  const row = el("label", { class: "field" }, `${spec.label}${star} `, input);
  if (error) row.append(el("span", { class: "error", "data-error": spec.key }, error));
  return row;
}

function questionnaireView(ctl: Controller): HTMLElement {
  return el(
    "section",
    { class: "questionnaire" },
    el("h2", {}, "Before you start"),
    el("p", {}, "Fields marked * are required."),
    ...QUESTIONNAIRE_FIELDS.map((spec) => fieldRow(ctl, spec)),
    el(
      "button",
      { "data-action": "begin", click: () => void ctl.submitQuestionnaire() },
      "Begin",
    ),
  );
}

function chatView(ctl: Controller): HTMLElement {
  const state = ctl.state;
  const enabled = inputEnabled(state);
  const bubbles = state.bubbles.map((b) =>
    el("div", { class: b.mine ? "bubble mine" : "bubble theirs" }, b.text),
  );
  const sendBtn = el(
    "button",
    { "data-action": "send", disabled: !canSend(state), click: () => void ctl.send() },
    "Send",
  );
  const draftBox = el("textarea", {
    "data-role": "draft",
    placeholder: "Type a message",
    input: (e) => {
      ctl.setDraft((e.target as HTMLTextAreaElement).value);
      sendBtn.disabled = !canSend(ctl.state);
    },
    disabled: !enabled,
  });
  draftBox.value = state.draft;
  return el(
    "section",
    { class: "chat" },
    el(
      "header",
      {},
      el("span", { class: "topic" }, state.topic ?? ""),
      el(
        "span",
        { class: "countdown", "data-role": "countdown" },
        formatClock(displayRemaining(state, Date.now())),
      ),
    ),
    el("p", { class: "prompt" }, state.prompt ?? ""),
    el("div", { class: "transcript" }, ...bubbles),
    state.notice ? el("p", { class: "notice" }, state.notice) : "",
    el(
      "div",
      { class: "composer" },
      draftBox,
      sendBtn,
      el(
        "button",
        {
          "data-action": "end-turn",
          disabled: !canEndTurn(state),
          click: () => void ctl.endTurn(),
        },
        "Your move",
      ),
    ),
  );
}

function verdictView(ctl: Controller): HTMLElement {
  const state = ctl.state;
  const ratingButtons = RATINGS.map((rating) => {
    const blocked = rating === DISALLOWED_RATING;
    const picked = state.verdict.rating === rating;
    const classes = ["rating"];
    if (blocked) classes.push("blocked");
    if (picked) classes.push("picked");
    return el(
      "button",
      {
        class: classes.join(" "),
        "data-rating": String(rating),
        disabled: blocked,
        "aria-disabled": blocked ? "true" : "false",
        click: () => ctl.setRating(rating),
      },
      String(rating),
    );
  });
  const hints = el(
    "p",
    { class: "hints" },
    `1 = ${RATING_HINTS[1]}, 4 = ${RATING_HINTS[4]} (not selectable), 7 = ${RATING_HINTS[7]}`,
  );
  const reasons = VERDICT_REASONS.map((reason) => {
    const box = el("input", {
      type: "checkbox",
      "data-reason": reason.id,
      change: () => ctl.toggleReason(reason.id),
    });
    box.checked = state.verdict.reasons.includes(reason.id);
    return el("label", { class: "reason" }, box, ` ${reason.label}`);
  });
  const freeText = el("textarea", {
    "data-role": "free-text",
    placeholder: "Anything that tipped you off?",
    input: (e) => ctl.setFreeText((e.target as HTMLTextAreaElement).value),
  });
  freeText.value = state.verdict.freeText;
  return el(
    "section",
    { class: "verdict" },
    el("h2", {}, "Time. Who were you talking to?"),
    el("div", { class: "ratings" }, ...ratingButtons),
    hints,
    el("div", { class: "reasons" }, ...reasons),
    freeText,
    state.notice ? el("p", { class: "notice" }, state.notice) : "",
    el(
      "button",
      { "data-action": "submit-verdict", click: () => void ctl.submitVerdict() },
      "Lock it in",
    ),
  );
}

function revealView(ctl: Controller): HTMLElement {
  const state = ctl.state;
  let line: string;
  if (state.reveal === null) {
    line = "No reveal for this one.";
  } else if (state.reveal.kind === "human") {
    line = "That was the real person.";
  } else {
    line = `That was the imitation (${state.reveal.config}).`;
  }
  return el(
    "section",
    { class: "reveal" },
    el("h2", {}, "Reveal"),
    el("p", { "data-role": "reveal-line" }, line),
    state.notice ? el("p", { class: "notice" }, state.notice) : "",
    el(
      "button",
      { "data-action": "next-session", click: () => void ctl.nextSession() },
      "Next session",
    ),
  );
}

export function render(root: HTMLElement, ctl: Controller): void {
  root.replaceChildren();
  switch (ctl.state.phase) {
    case "questionnaire":
      root.append(questionnaireView(ctl));
      break;
    case "chatting":
      root.append(chatView(ctl));
      break;
    case "verdict":
      root.append(verdictView(ctl));
      break;
    case "revealed":
      root.append(revealView(ctl));
      break;
  }
}
