"""Dataset quality metrics: validity screening, dedup, corpus statistics,
distribution similarity (JSD, Pearson), ROUGE, efficiency, and Gwet-AC2.

All operations are pure functions over plain values.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .records import Triplet

REASON_TOKEN_FORMAT = "TokenFormatError"
REASON_UNFINISHED = "UnfinishedGeneration"
REASON_HIDDEN_CONTEXT = "HiddenContext"

CRITERIA = ("Accuracy", "Logic", "Clarity", "Detail", "Relevancy")

# Valid rating scale plus the "syntactically/semantically invalid" flag.
RATING_SCALE = (1, 2, 3)
INVALID_RATING = -1

# Annotation apparatus must never leak into a visual-prompt triplet's text.
DEFAULT_BANNED_PHRASES = (
    "bounding box",
    "rectangle",
    "red box",
    "highlighted",
    "marked region",
    "annotation",
)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_TERMINAL = ".!?"
_CLOSERS = "\"')]}’”"


class MetricError(Exception):
    pass


# ---------------------------------------------------------------------------
# validity


@dataclass(frozen=True)
class ValidityRules:
    require_question_mark: bool = True
    vip: bool = False
    banned_phrases: tuple[str, ...] = DEFAULT_BANNED_PHRASES
    dialect: str = "reasoned-answer"


def ends_sentence(text: str) -> bool:
    t = text.rstrip().rstrip(_CLOSERS)
    return bool(t) and t[-1] in _TERMINAL


def _has_marker(text: str) -> bool:
    depth_open = text.find("{")
    return depth_open != -1 and text.find("}", depth_open + 1) != -1


def validate_triplet(t: Triplet, rules: ValidityRules = ValidityRules()) -> Optional[str]:
    """First failing rule's reason, or None when the triplet is valid.

    Short answers are legitimately bare phrases ("Cow", "7"), so the
    unfinished-sentence check applies only to the question and explanation.
    """
    fields = {
        "question": t.question.strip(),
        "answer": t.answer.strip(),
        "explanation": t.explanation.strip(),
    }
    for value in fields.values():
        if not value:
            return REASON_TOKEN_FORMAT
    if not ends_sentence(fields["question"]):
        return REASON_UNFINISHED
    if not ends_sentence(fields["explanation"]):
        return REASON_UNFINISHED
    if rules.require_question_mark:
        if not fields["question"].rstrip(_CLOSERS).endswith("?"):
            return REASON_TOKEN_FORMAT
    if any(_has_marker(v) for v in fields.values()):
        return REASON_TOKEN_FORMAT
    if rules.vip:
        for value in fields.values():
            lowered = value.lower()
            if any(phrase in lowered for phrase in rules.banned_phrases):
                return REASON_HIDDEN_CONTEXT
    return None


# ---------------------------------------------------------------------------
# dedup and corpus statistics


def _normalize(text: str) -> str:
    return " ".join(text.split())


def dedup_triplets(triplets: Sequence[Triplet]) -> tuple[list[Triplet], int]:
    """Exact-match dedup on the normalized (q, a, e) triple.

    First occurrence wins; order is stable.  Returns (unique, duplicate count).
    """
    seen: set[tuple[str, str, str]] = set()
    unique: list[Triplet] = []
    for t in triplets:
        key = (_normalize(t.question), _normalize(t.answer), _normalize(t.explanation))
        if key in seen:
            continue
        seen.add(key)
        unique.append(t)
    return unique, len(triplets) - len(unique)


def clean_tokens(text: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def validity_accounting(expected: int, valid: int, unique: int) -> tuple[float, float]:
    """(valid %, unique %) with denominators expected and valid respectively."""
    if not (0 <= unique <= valid <= expected):
        raise MetricError(
            f"counts must satisfy unique <= valid <= expected, got {unique}/{valid}/{expected}"
        )
    valid_pct = 100.0 * valid / expected if expected else 0.0
    unique_pct = 100.0 * unique / valid if valid else 0.0
    return valid_pct, unique_pct


@dataclass
class CorpusStats:
    expected: int
    valid: int
    unique: int
    valid_pct: float
    unique_pct: float
    vocabulary: dict[str, int] = field(default_factory=dict)
    avg_length: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "expected": self.expected,
            "valid": self.valid,
            "unique": self.unique,
            "valid_pct": self.valid_pct,
            "unique_pct": self.unique_pct,
            "vocabulary": self.vocabulary,
            "avg_length": self.avg_length,
        }


def corpus_stats(triplets: Sequence[Triplet], expected: int) -> CorpusStats:
    """Vocabulary size and mean token length per component, plus counts.

    Statistics run over cleaned text (no punctuation, lowercased,
    whitespace-split).  ``expected`` is the number of generation slots the
    run was configured for.
    """
    valid = len(triplets)
    if expected < valid:
        raise MetricError(f"expected ({expected}) < valid ({valid})")
    unique, _ = dedup_triplets(triplets)
    valid_pct, unique_pct = validity_accounting(expected, valid, len(unique))

    vocabulary: dict[str, int] = {}
    avg_length: dict[str, float] = {}
    for component, getter in (
        ("q", lambda t: t.question),
        ("a", lambda t: t.answer),
        ("e", lambda t: t.explanation),
    ):
        vocab: set[str] = set()
        lengths: list[int] = []
        for t in triplets:
            tokens = clean_tokens(getter(t))
            vocab.update(tokens)
            lengths.append(len(tokens))
        vocabulary[component] = len(vocab)
        avg_length[component] = float(np.mean(lengths)) if lengths else 0.0

    return CorpusStats(
        expected=expected,
        valid=valid,
        unique=len(unique),
        valid_pct=valid_pct,
        unique_pct=unique_pct,
        vocabulary=vocabulary,
        avg_length=avg_length,
    )


# ---------------------------------------------------------------------------
# length-distribution similarity


def length_histogram(texts: Iterable[str]) -> dict[int, float]:
    """Token-length histogram normalized to probabilities."""
    lengths = [len(clean_tokens(t)) for t in texts]
    if not lengths:
        raise MetricError("cannot build a histogram from no texts")
    counts = Counter(lengths)
    total = len(lengths)
    return {k: counts[k] / total for k in sorted(counts)}


def align_histograms(
    p: dict[int, float], q: dict[int, float]
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad two histograms onto their union support, in bin order."""
    support = sorted(set(p) | set(q))
    return (
        np.array([p.get(k, 0.0) for k in support], dtype=float),
        np.array([q.get(k, 0.0) for k in support], dtype=float),
    )


def _check_distribution(v: np.ndarray, name: str) -> None:
    if np.any(v < 0):
        raise MetricError(f"{name} has negative mass")
    if abs(float(v.sum()) - 1.0) > 1e-9:
        raise MetricError(f"{name} does not sum to 1 (sum={v.sum()!r})")


def jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence with base-2 logs, so the range is [0, 1].

    JSD(p, q) = KL(p || m)/2 + KL(q || m)/2 with m = (p + q)/2 and the
    convention 0·log 0 = 0.  Inputs must already share a support and each
    sum to 1.
    """
    p_arr = np.asarray(p, dtype=float)
    q_arr = np.asarray(q, dtype=float)
    if p_arr.shape != q_arr.shape:
        raise MetricError("histograms are not aligned to a common support")
    _check_distribution(p_arr, "p")
    _check_distribution(q_arr, "q")
    m = (p_arr + q_arr) / 2.0

    def kl(a: np.ndarray) -> float:
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return 0.5 * kl(p_arr) + 0.5 * kl(q_arr)


def pearson_lengths(p: Sequence[float], q: Sequence[float]) -> float:
    """Pearson correlation between two aligned frequency vectors."""
    p_arr = np.asarray(p, dtype=float)
    q_arr = np.asarray(q, dtype=float)
    if p_arr.shape != q_arr.shape:
        raise MetricError("frequency vectors are not aligned")
    if p_arr.size < 2:
        raise MetricError("need at least 2 bins")
    if np.ptp(p_arr) == 0 or np.ptp(q_arr) == 0:
        raise MetricError("correlation is undefined for a constant vector")
    pc = p_arr - p_arr.mean()
    qc = q_arr - q_arr.mean()
    return float(np.dot(pc, qc) / np.sqrt(np.dot(pc, pc) * np.dot(qc, qc)))


@dataclass
class SimilarityReport:
    """Per-component JSD and Pearson against a reference length distribution."""

    jsd: dict[str, float] = field(default_factory=dict)
    pearson: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"jsd": self.jsd, "pearson": self.pearson}


def similarity_report(
    synthetic: Sequence[Triplet], reference: Sequence[Triplet]
) -> SimilarityReport:
    """Compare q/a/e token-length distributions between two corpora.

    Histograms are aligned to the union support per component; "avg" is the
    mean over the three components.
    """
    if not synthetic or not reference:
        raise MetricError("both corpora must be nonempty")
    report = SimilarityReport()
    for component, getter in (
        ("q", lambda t: t.question),
        ("a", lambda t: t.answer),
        ("e", lambda t: t.explanation),
    ):
        p, q = align_histograms(
            length_histogram(getter(t) for t in synthetic),
            length_histogram(getter(t) for t in reference),
        )
        report.jsd[component] = jsd(p, q)
        try:
            report.pearson[component] = pearson_lengths(p, q)
        except MetricError:
            report.pearson[component] = float("nan")
    report.jsd["avg"] = float(np.mean([report.jsd[c] for c in "qae"]))
    report.pearson["avg"] = float(np.mean([report.pearson[c] for c in "qae"]))
    return report


# ---------------------------------------------------------------------------
# efficiency


@dataclass(frozen=True)
class EfficiencyReport:
    total_seconds: float
    valid: int
    tbar: float
    baseline_tbar: Optional[float] = None
    speedup: Optional[float] = None

    @property
    def tbar_display(self) -> float:
        return round(self.tbar, 2)

    @property
    def speedup_display(self) -> Optional[float]:
        return None if self.speedup is None else round(self.speedup, 1)


def efficiency_report(
    total_seconds: float, valid: int, baseline_tbar: Optional[float] = None
) -> EfficiencyReport:
    """Mean seconds per valid triplet, and speedup against a baseline mean."""
    if valid <= 0:
        raise MetricError("no valid triplets; mean time per triplet is undefined")
    if total_seconds <= 0:
        raise MetricError("total time must be positive")
    tbar = total_seconds / valid
    speedup = baseline_tbar / tbar if baseline_tbar is not None else None
    return EfficiencyReport(
        total_seconds=total_seconds,
        valid=valid,
        tbar=tbar,
        baseline_tbar=baseline_tbar,
        speedup=speedup,
    )


# ---------------------------------------------------------------------------
# ROUGE


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """ROUGE-L over lowercased whitespace tokens.

    precision = LCS/|candidate|, recall = LCS/|reference|, F1 the harmonic
    mean.
    """
    cand = candidate.lower().split()
    ref = reference.lower().split()
    if not cand or not ref:
        raise MetricError("ROUGE is undefined for an empty side")
    lcs = _lcs_length(cand, ref)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return RougeScore(precision=precision, recall=recall, f1=_f1(precision, recall))


def rouge_1(candidate: str, reference: str) -> RougeScore:
    """Unigram-overlap ROUGE with clipped counts, same tokenization as ROUGE-L."""
    cand = candidate.lower().split()
    ref = reference.lower().split()
    if not cand or not ref:
        raise MetricError("ROUGE is undefined for an empty side")
    cand_counts, ref_counts = Counter(cand), Counter(ref)
    overlap = sum(min(c, ref_counts[tok]) for tok, c in cand_counts.items())
    precision = overlap / len(cand)
    recall = overlap / len(ref)
    return RougeScore(precision=precision, recall=recall, f1=_f1(precision, recall))


# ---------------------------------------------------------------------------
# inter-annotator agreement


def _linear_weight(k: int, l: int) -> float:
    return 1.0 - abs(k - l) / (len(RATING_SCALE) - 1)


def gwet_ac2(table: Sequence[Sequence[int]]) -> float:
    """Gwet's AC2 with linear ordinal weights over the 1-3 rating scale.

    ``table`` is items x raters.  Items containing the invalid flag (-1) are
    excluded.  With weights w(k,l) = 1 - |k-l|/2:

        p_a = mean over items and rater pairs of w(r1, r2)
        p_e = (T_w / (C·(C-1))) · Σ_k π_k·(1 - π_k)
        AC2 = (p_a - p_e) / (1 - p_e)

    where T_w is the sum of all weights, C the number of categories, and
    π_k the overall proportion of ratings in category k.
    """
    rows = [list(row) for row in table]
    if not rows:
        raise MetricError("empty rating table")
    n_raters = len(rows[0])
    if n_raters < 2:
        raise MetricError("need at least 2 raters")
    if any(len(row) != n_raters for row in rows):
        raise MetricError("ragged rating table")
    allowed = set(RATING_SCALE) | {INVALID_RATING}
    for row in rows:
        for cell in row:
            if cell not in allowed:
                raise MetricError(f"rating {cell!r} outside {sorted(allowed)}")

    usable = [row for row in rows if INVALID_RATING not in row]
    if not usable:
        raise MetricError("no items with a full set of valid ratings")

    pair_count = n_raters * (n_raters - 1) / 2
    item_means = []
    for row in usable:
        s = sum(
            _linear_weight(row[g], row[h])
            for g in range(n_raters)
            for h in range(g + 1, n_raters)
        )
        item_means.append(s / pair_count)
    p_a = float(np.mean(item_means))

    all_ratings = [cell for row in usable for cell in row]
    total = len(all_ratings)
    pi = {k: all_ratings.count(k) / total for k in RATING_SCALE}
    t_w = sum(_linear_weight(k, l) for k in RATING_SCALE for l in RATING_SCALE)
    c = len(RATING_SCALE)
    p_e = (t_w / (c * (c - 1))) * sum(pi[k] * (1 - pi[k]) for k in RATING_SCALE)

    return (p_a - p_e) / (1 - p_e)
