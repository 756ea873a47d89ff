"""Statistics over finished sessions: pass rates, humanness, correlations.

Outputs one row per interlocutor config plus the human baseline, each with
pass rate ± SE, mean humanness rating ± SE overall and split by prompt
category, and a permutation p-value against the human baseline. Undefined
quantities (single-sample SE, zero-variance correlations) render as the
"—" marker, never as a fake zero.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .arena.core import HUMAN_CONFIG, HUMAN_GUESS_MIN, TrajectoryStore, VERDICT_REASONS

UNDEFINED = "—"
EXHAUSTIVE_MAX_N = 12
DEFAULT_ITERATIONS = 10_000


class EmptyInput(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class StoreCorrupt(Exception):
    pass


def guessed_human(rating: int) -> bool:
    return rating >= HUMAN_GUESS_MIN


# --- kernel statistics -------------------------------------------------------

def pass_rate(ratings: Sequence[int]) -> tuple[float, float]:
    """Percent of verdicts guessing human, with the binomial standard error."""
    n = len(ratings)
    if n == 0:
        raise EmptyInput("pass_rate needs at least one verdict")
    p = sum(1 for r in ratings if guessed_human(r)) / n
    se = math.sqrt(p * (1.0 - p) / n)
    return 100.0 * p, 100.0 * se


def humanness_stats(ratings: Sequence[int]) -> tuple[float, float | None]:
    """Mean rating and its standard error (sample sd / sqrt n); SE None at n=1."""
    n = len(ratings)
    if n == 0:
        raise EmptyInput("humanness_stats needs at least one rating")
    mean = sum(ratings) / n
    if n == 1:
        return mean, None
    var = sum((r - mean) ** 2 for r in ratings) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("zero variance leaves the correlation undefined")
    return sxy / math.sqrt(sxx * syy)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} vs {len(y)}")
    if len(x) < 2:
        raise LengthMismatch("need at least two pairs")
    return _pearson(average_ranks(x), average_ranks(y))


def permutation_test(
    group_a: Sequence[float],
    group_b: Sequence[float],
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
) -> float:
    """Two-sided p-value for the mean difference under label permutation.

    Exhaustive over all label splits when the pooled size is at most 12;
    Monte-Carlo with the add-one estimate otherwise.
    """
    if not group_a or not group_b:
        raise EmptyInput("both groups must be non-empty")
    pooled = list(group_a) + list(group_b)
    na = len(group_a)
    observed = abs(sum(group_a) / na - sum(group_b) / len(group_b))
    eps = 1e-12

    def diff(a_idx: frozenset[int]) -> float:
        sa = sum(pooled[i] for i in a_idx)
        sb = sum(pooled) - sa
        return abs(sa / na - sb / (len(pooled) - na))

    if len(pooled) <= EXHAUSTIVE_MAX_N:
        splits = list(combinations(range(len(pooled)), na))
        hits = sum(1 for split in splits if diff(frozenset(split)) >= observed - eps)
        return hits / len(splits)

    rng = np.random.default_rng(seed)
    arr = np.array(pooled, dtype=float)
    nb = arr.size - na
    total = arr.sum()
    hits = 0
    done = 0
    while done < iterations:
        rows = min(2048, iterations - done)  # cap the permuted matrix size
        perm = rng.permuted(np.tile(arr, (rows, 1)), axis=1)
        sums_a = perm[:, :na].sum(axis=1)
        diffs = np.abs(sums_a / na - (total - sums_a) / nb)
        hits += int((diffs >= observed - eps).sum())
        done += rows
    return (1 + hits) / (1 + iterations)


# --- report over a trajectory store -------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    config: str
    n: int
    pass_pct: float
    pass_se: float
    humanness: float
    humanness_se: float | None
    stylistic: float | None
    stylistic_se: float | None
    contextual: float | None
    contextual_se: float | None
    p_value: float | None


@dataclass(frozen=True)
class Report:
    rows: tuple[MetricsRow, ...]
    reason_histogram: dict
    excluded: int


def _included_records(records: list[dict]) -> list[dict]:
    out = []
    for rec in records:
        try:
            if rec["excluded"] or rec["verdict"] is None:
                continue
            rec["verdict"]["rating"]
            rec["prompt"]["category"]
            rec["interlocutor"]
        except (KeyError, TypeError) as exc:
            raise StoreCorrupt(f"malformed trajectory record: {exc}") from exc
        out.append(rec)
    return out


def _row(config: str, records: list[dict], human_ratings: list[int]) -> MetricsRow:
    ratings = [rec["verdict"]["rating"] for rec in records]
    pct, pse = pass_rate(ratings)
    mean, se = humanness_stats(ratings)

    def by_category(cat: str) -> tuple[float | None, float | None]:
        sub = [
            rec["verdict"]["rating"] for rec in records
            if rec["prompt"]["category"] == cat
        ]
        if not sub:
            return None, None
        return humanness_stats(sub)

    sty_mean, sty_se = by_category("stylistic")
    ctx_mean, ctx_se = by_category("contextual")
    p_value = None
    if config != HUMAN_CONFIG and human_ratings:
        p_value = permutation_test(ratings, human_ratings)
    return MetricsRow(
        config=config, n=len(ratings),
        pass_pct=pct, pass_se=pse,
        humanness=mean, humanness_se=se,
        stylistic=sty_mean, stylistic_se=sty_se,
        contextual=ctx_mean, contextual_se=ctx_se,
        p_value=p_value,
    )


def build_report(records: list[dict]) -> Report:
    included = _included_records(records)
    by_config: dict[str, list[dict]] = {}
    for rec in included:
        by_config.setdefault(rec["interlocutor"], []).append(rec)

    human_ratings = [
        rec["verdict"]["rating"] for rec in by_config.get(HUMAN_CONFIG, [])
    ]
    configs = sorted(c for c in by_config if c != HUMAN_CONFIG)
    if HUMAN_CONFIG in by_config:
        configs.append(HUMAN_CONFIG)
    rows = tuple(_row(c, by_config[c], human_ratings) for c in configs)

    histogram = {
        reason: {"human": 0, "AI": 0} for reason in VERDICT_REASONS
    }
    for rec in included:
        guess = "human" if guessed_human(rec["verdict"]["rating"]) else "AI"
        for reason in rec["verdict"].get("reasons", []):
            if reason in histogram:
                histogram[reason][guess] += 1

    excluded = sum(1 for rec in records if rec.get("excluded"))
    return Report(rows=rows, reason_histogram=histogram, excluded=excluded)


def load_report(store_dir: str) -> Report:
    store = TrajectoryStore(store_dir)
    try:
        records = store.load_trajectories()
    except (json.JSONDecodeError, OSError) as exc:
        raise StoreCorrupt(f"cannot read trajectory store: {exc}") from exc
    return build_report(records)


def metadata_correlations(participants: list[dict], records: list[dict]) -> dict[str, float | None]:
    """Spearman rho between questionnaire fields and the ratings given.

    Pairs each included verdict's rating with its participant's field
    value; fields with missing answers or degenerate variance come back
    None.
    """
    by_participant = {p["participant"]: p for p in participants}
    out: dict[str, float | None] = {}
    for field_name in ("closeness", "text_frequency", "ai_familiarity"):
        xs: list[float] = []
        ys: list[float] = []
        for rec in _included_records(records):
            profile = by_participant.get(rec["participant"])
            if not profile or profile.get(field_name) is None:
                continue
            xs.append(float(profile[field_name]))
            ys.append(float(rec["verdict"]["rating"]))
        try:
            out[field_name] = spearman(xs, ys)
        except (LengthMismatch, DegenerateInput):
            out[field_name] = None
    return out


# --- rendering ----------------------------------------------------------------

def _pm(value: float | None, se: float | None) -> str:
    if value is None:
        return UNDEFINED
    if se is None:
        return f"{value:.2f} ±{UNDEFINED}"
    return f"{value:.2f} ±{se:.2f}"


def render_report(report: Report) -> str:
    headers = ["Setup", "Size", "Pass Rate (%)", "Humanness", "Styl.", "Cont.", "p-value"]
    table = [headers]
    for row in report.rows:
        table.append([
            row.config,
            str(row.n),
            _pm(row.pass_pct, row.pass_se),
            _pm(row.humanness, row.humanness_se),
            _pm(row.stylistic, row.stylistic_se),
            _pm(row.contextual, row.contextual_se),
            UNDEFINED if row.p_value is None else f"{row.p_value:.3f}",
        ])
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for i, row_cells in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row_cells, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append("")
    lines.append(f"excluded sessions: {report.excluded}")
    lines.append("reasons (guessed human / guessed AI):")
    for reason, counts in report.reason_histogram.items():
        lines.append(f"  {reason}: {counts['human']} / {counts['AI']}")
    return "\n".join(lines)


def write_csv(report: Report, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "config", "n", "pass_pct", "pass_se", "humanness", "humanness_se",
            "stylistic", "stylistic_se", "contextual", "contextual_se", "p_value",
        ])
        for row in report.rows:
            writer.writerow([
                row.config, row.n,
                f"{row.pass_pct:.4f}", f"{row.pass_se:.4f}",
                f"{row.humanness:.4f}",
                "" if row.humanness_se is None else f"{row.humanness_se:.4f}",
                "" if row.stylistic is None else f"{row.stylistic:.4f}",
                "" if row.stylistic_se is None else f"{row.stylistic_se:.4f}",
                "" if row.contextual is None else f"{row.contextual:.4f}",
                "" if row.contextual_se is None else f"{row.contextual_se:.4f}",
                "" if row.p_value is None else f"{row.p_value:.6f}",
            ])
