"""Descriptive tables over pipeline records, rubric scoring, and replay ablations."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .argumentation import EvidenceBundle, redact, select_answer
from .backends import ChatClient, ChatSession
from .errors import InvalidInputError
from .evidence import DEFAULT_SCORING, ScoringConfig
from .records import PipelineRecord
from .stats import holm_bonferroni, mcnemar_chi2, mcnemar_exact
from .unified import AgreementLevel

log = logging.getLogger(__name__)

OVERALL = "overall"


@dataclass(frozen=True, slots=True)
class Cell:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "correct": self.correct, "accuracy": round(self.accuracy, 4)}


def _scored(records: Iterable[PipelineRecord]) -> list[tuple[PipelineRecord, bool]]:
    out = []
    for r in records:
        ok = r.is_correct
        if ok is not None:
            out.append((r, ok))
    return out


def _tally(pairs: Iterable[tuple[str, bool]], order: Sequence[str]) -> dict[str, Cell]:
    n: dict[str, int] = {}
    k: dict[str, int] = {}
    for key, ok in pairs:
        n[key] = n.get(key, 0) + 1
        k[key] = k.get(key, 0) + int(ok)
    return {key: Cell(n[key], k[key]) for key in order if key in n}


def stratify_agreement(records: Iterable[PipelineRecord]) -> dict[str, Cell]:
    """Accuracy per source-agreement level plus an overall row; empty input gives {}."""
    scored = _scored(records)
    table = _tally(((r.agreement.value, ok) for r, ok in scored), [lvl.value for lvl in AgreementLevel])
    if scored:
        table[OVERALL] = Cell(len(scored), sum(ok for _, ok in scored))
    return table


CALIBRATION_BANDS: tuple[tuple[str, float, float], ...] = (
    (">=0.80", 0.80, float("inf")),
    ("0.60-0.79", 0.60, 0.80),
    ("0.40-0.59", 0.40, 0.60),
    ("<0.40", float("-inf"), 0.40),
)


def confidence_band(confidence: float) -> str:
    for label, lo, hi in CALIBRATION_BANDS:
        if lo <= confidence < hi:
            return label
    raise InvalidInputError(f"confidence {confidence} fits no band")


def calibration_buckets(records: Iterable[PipelineRecord]) -> dict[str, Cell]:
    pairs = ((confidence_band(r.decision.confidence), ok) for r, ok in _scored(records) if r.decision)
    return _tally(pairs, [b[0] for b in CALIBRATION_BANDS])


CORROBORATION_BANDS = ("0", "1-5", ">=6")


def corroboration_band(count: int) -> str:
    if count <= 0:
        return "0"
    return "1-5" if count <= 5 else ">=6"


def corroboration_stats(records: Iterable[PipelineRecord]) -> dict[str, Cell]:
    pairs = ((corroboration_band(r.corroborated_count), ok) for r, ok in _scored(records))
    return _tally(pairs, list(CORROBORATION_BANDS))


@dataclass(frozen=True, slots=True)
class OverrideStat:
    n_overridden: int
    n: int
    excluded: int = 0

    @property
    def fraction(self) -> float:
        return self.n_overridden / self.n if self.n else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_overridden": self.n_overridden,
            "n": self.n,
            "fraction": round(self.fraction, 4),
            "excluded": self.excluded,
        }


def override_rate(records: Iterable[PipelineRecord]) -> OverrideStat:
    """Final answers that differ from every recorded source prediction.

    Records with no predictions or no decision leave the denominator and are
    counted in ``excluded``.
    """
    hits = n = excluded = 0
    for r in records:
        preds = r.predictions
        if not preds or r.decision is None:
            excluded += 1
            continue
        n += 1
        hits += r.decision.chosen not in preds
    if excluded:
        log.info("override rate: %d records without predictions excluded", excluded)
    return OverrideStat(hits, n, excluded)


# --- rubrics -------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class RubricsJudgment:
    sample_id: str
    verdicts: tuple[bool, ...]
    answer_correct: bool

    def __post_init__(self) -> None:
        if not self.verdicts:
            raise InvalidInputError("a rubrics judgment needs at least one criterion verdict")


def rubrics_score(judgment: RubricsJudgment) -> float:
    """Fraction of satisfied criteria, or zero when the answer is wrong."""
    if not judgment.answer_correct:
        return 0.0
    return sum(bool(v) for v in judgment.verdicts) / len(judgment.verdicts)


# --- ablation ------------------------------------------------------------------


class EvidenceFilter(str, Enum):
    BOTH = "both"
    SOURCE_A_ONLY = "source_a_only"
    SOURCE_B_ONLY = "source_b_only"


def filter_bundle(bundle: EvidenceBundle, evidence_filter: EvidenceFilter) -> EvidenceBundle:
    """Keep both sources, or only the first/second in the record's source order."""
    if evidence_filter is EvidenceFilter.BOTH:
        return bundle
    index = 0 if evidence_filter is EvidenceFilter.SOURCE_A_ONLY else 1
    keep = bundle.sources[index : index + 1]
    return bundle.keep_sources(keep)


@dataclass(frozen=True, slots=True)
class AblationResult:
    label: str
    evidence_filter: EvidenceFilter
    n: int
    accuracy: float
    baseline_accuracy: float
    b: int
    c: int
    p_value: float
    significant: bool
    skipped: int = 0
    test: str = "exact"

    @property
    def n_discordant(self) -> int:
        return self.b + self.c

    @property
    def delta_pp(self) -> float:
        return (self.c - self.b) / self.n * 100 if self.n else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "evidence_filter": self.evidence_filter.value,
            "n": self.n,
            "accuracy": round(self.accuracy, 4),
            "baseline_accuracy": round(self.baseline_accuracy, 4),
            "delta_pp": round(self.delta_pp, 4),
            "b": self.b,
            "c": self.c,
            "n_discordant": self.n_discordant,
            "p_value": self.p_value,
            "significant": self.significant,
            "skipped": self.skipped,
            "test": self.test,
        }


def replay_choices(
    records: Sequence[PipelineRecord],
    evidence_filter: EvidenceFilter,
    client: ChatClient,
    endpoint: str = "reasoner",
    scoring: ScoringConfig = DEFAULT_SCORING,
    workers: int = 1,
) -> list[str]:
    """Re-run redaction and answer selection per record with the filtered bundle."""

    def one(rec: PipelineRecord) -> str:
        session = ChatSession(client, endpoint, clock=lambda: 0.0, sink=[])
        bundle = redact(filter_bundle(rec.bundle(), evidence_filter))
        return select_answer(rec.question, rec.choices, bundle, session, scoring).chosen

    if workers <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, records))


def _eligible(records: Iterable[PipelineRecord]) -> tuple[list[PipelineRecord], int]:
    kept, skipped = [], 0
    for r in records:
        if r.correct is None or not r.has_evidence or len(r.sources) < 2:
            skipped += 1
        else:
            kept.append(r)
    return kept, skipped


def replay_ablation(
    records: Iterable[PipelineRecord],
    evidence_filter: EvidenceFilter,
    client: ChatClient,
    endpoint: str = "reasoner",
    baseline: Sequence[str] | None = None,
    alpha: float = 0.05,
    exact: bool = True,
    scoring: ScoringConfig = DEFAULT_SCORING,
    workers: int = 1,
    label: str | None = None,
) -> AblationResult:
    """Variant accuracy against a baseline replay with both sources' evidence.

    ``b`` counts records the baseline gets right and the variant wrong, ``c``
    the reverse.  ``significant`` here is the unadjusted ``p < alpha``;
    :func:`run_ablations` applies Holm-Bonferroni across variants.
    """
    kept, skipped = _eligible(records)
    if skipped:
        log.warning("ablation: %d records skipped (missing evidence or gold answer)", skipped)
    if baseline is None:
        baseline = replay_choices(kept, EvidenceFilter.BOTH, client, endpoint, scoring, workers)
    if len(baseline) != len(kept):
        raise InvalidInputError("baseline choices must align with the eligible records")
    variant = (
        list(baseline)
        if evidence_filter is EvidenceFilter.BOTH
        else replay_choices(kept, evidence_filter, client, endpoint, scoring, workers)
    )
    b = c = base_ok = var_ok = 0
    for rec, x, y in zip(kept, baseline, variant):
        bx, vy = x == rec.correct, y == rec.correct
        base_ok += bx
        var_ok += vy
        b += bx and not vy
        c += vy and not bx
    p = mcnemar_exact(b, c) if exact else mcnemar_chi2(b, c)
    n = len(kept)
    return AblationResult(
        label=label or evidence_filter.value,
        evidence_filter=evidence_filter,
        n=n,
        accuracy=var_ok / n if n else 0.0,
        baseline_accuracy=base_ok / n if n else 0.0,
        b=b,
        c=c,
        p_value=p,
        significant=p < alpha,
        skipped=skipped,
        test="exact" if exact else "chi2",
    )


def run_ablations(
    records: Iterable[PipelineRecord],
    filters: Sequence[EvidenceFilter],
    client: ChatClient,
    endpoint: str = "reasoner",
    alpha: float = 0.05,
    exact: bool = True,
    scoring: ScoringConfig = DEFAULT_SCORING,
    workers: int = 1,
) -> tuple[AblationResult, list[AblationResult]]:
    """Baseline replay plus each variant, with Holm-Bonferroni over the variants."""
    records = list(records)
    kept, _ = _eligible(records)
    baseline = replay_choices(kept, EvidenceFilter.BOTH, client, endpoint, scoring, workers)
    base = replay_ablation(
        records,
        EvidenceFilter.BOTH,
        client,
        endpoint,
        baseline,
        alpha,
        exact,
        scoring,
        workers,
        label="baseline replay",
    )
    variants = [
        replay_ablation(records, f, client, endpoint, baseline, alpha, exact, scoring, workers)
        for f in filters
        if f is not EvidenceFilter.BOTH
    ]
    steps = holm_bonferroni([v.p_value for v in variants], alpha) if variants else []
    rejected = {s.index: s.rejected for s in steps}
    adjusted = [
        AblationResult(
            v.label,
            v.evidence_filter,
            v.n,
            v.accuracy,
            v.baseline_accuracy,
            v.b,
            v.c,
            v.p_value,
            rejected[i],
            v.skipped,
            v.test,
        )
        for i, v in enumerate(variants)
    ]
    return base, adjusted


def ablation_markdown(base: AblationResult, variants: Sequence[AblationResult]) -> str:
    lines = [
        "| Configuration | Accuracy | Δ (pp) | N_d | b | c | p | Significant |",
        "|---|---|---|---|---|---|---|---|",
        f"| {base.label} | {base.accuracy * 100:.1f}% | - | - | - | - | - | - |",
    ]
    for v in variants:
        lines.append(
            f"| {v.label} | {v.accuracy * 100:.1f}% | {v.delta_pp:+.1f} | {v.n_discordant} | {v.b} | "
            f"{v.c} | {_fmt_p(v.p_value)} | {'yes' if v.significant else 'no'} |"
        )
    return "\n".join(lines)


def _fmt_p(p: float) -> str:
    return "<.001" if p < 0.001 else f"{p:.3f}"


# --- rendering -----------------------------------------------------------------


def table_rows(table: Mapping[str, Cell]) -> list[list[str]]:
    return [[k, str(c.n), str(c.correct), f"{c.accuracy * 100:.1f}"] for k, c in table.items()]


def format_table(title: str, header: str, table: Mapping[str, Cell]) -> str:
    rows = [[header, "n", "correct", "accuracy %"], *table_rows(table)]
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = [title]
    for row in rows:
        lines.append(
            "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
        )
    return "\n".join(lines)


def table_csv(header: str, table: Mapping[str, Cell]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([header, "n", "correct", "accuracy"])
    for k, c in table.items():
        writer.writerow([k, c.n, c.correct, f"{c.accuracy:.4f}"])
    return buf.getvalue()


@dataclass(frozen=True, slots=True)
class AnalysisReport:
    agreement: dict[str, Cell]
    calibration: dict[str, Cell]
    corroboration: dict[str, Cell]
    override: OverrideStat

    def text(self) -> str:
        o = self.override
        return "\n\n".join(
            [
                format_table("Accuracy by source agreement", "agreement", self.agreement),
                format_table("Calibration by decision confidence", "confidence", self.calibration),
                format_table("Accuracy by corroborated-item count", "corroborated", self.corroboration),
                f"Override rate\n{o.n_overridden}/{o.n} = {o.fraction * 100:.1f}%"
                + (f" ({o.excluded} records without predictions excluded)" if o.excluded else ""),
            ]
        )

    def csv_files(self) -> dict[str, str]:
        o = self.override
        return {
            "agreement.csv": table_csv("agreement", self.agreement),
            "calibration.csv": table_csv("confidence", self.calibration),
            "corroboration.csv": table_csv("corroborated", self.corroboration),
            "override.csv": f"n_overridden,n,fraction,excluded\n{o.n_overridden},{o.n},{o.fraction:.4f},{o.excluded}\n",
        }


def analyze(records: Iterable[PipelineRecord]) -> AnalysisReport:
    records = list(records)
    return AnalysisReport(
        stratify_agreement(records),
        calibration_buckets(records),
        corroboration_stats(records),
        override_rate(records),
    )
