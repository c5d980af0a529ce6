"""Agreement metrics, ground-truth reference theories, and the MMD diagnostic.

Surrogate quality is measured two ways: against the black box it imitates
(fidelity, Precision_BB, Recall_BB) and against a reference theory built
from the user's own survey ratings (accuracy_GT, precision_GT,
recall_GT).  Both reduce to a ternary confusion matrix over the labels
(-1, 0, 1).  The MMD two-sample statistic diagnoses how far a sampled
training region drifts from a target region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .asp import Atom, Theory, WeakConstraint, classify_pair
from .dataset import Schema

CLASS_ORDER = (-1, 0, 1)


class MetricsError(ValueError):
    """Raised for malformed label sets or incomparable sample matrices."""


@dataclass(frozen=True)
class MetricsReport:
    """A ternary agreement summary of predictions against references.

    ``confusion`` rows follow ``CLASS_ORDER`` for the reference label,
    columns for the predicted label.  Per-class precision/recall that are
    undefined (no predictions / no references of that class) count as 0
    in the macro averages, and the affected classes are flagged.
    """

    fidelity: float
    precision: Mapping[int, float]
    recall: Mapping[int, float]
    macro_precision: float
    macro_recall: float
    confusion: tuple
    count: int
    empty_theory: bool = False
    undefined_precision_classes: tuple = ()
    undefined_recall_classes: tuple = ()

    def __post_init__(self) -> None:
        for fraction in (self.fidelity, self.macro_precision, self.macro_recall):
            if not 0.0 <= fraction <= 1.0:
                raise MetricsError(f"fraction {fraction} outside [0, 1]")


def agreement_report(
    predictions: Sequence[int],
    references: Sequence[int],
    empty_theory: bool = False,
) -> MetricsReport:
    """Confusion matrix, accuracy, and macro precision/recall."""
    if len(predictions) != len(references):
        raise MetricsError("predictions and references differ in length")
    if not predictions:
        raise MetricsError("cannot compute metrics of an empty pair set")
    index = {label: i for i, label in enumerate(CLASS_ORDER)}
    confusion = [[0, 0, 0] for _ in CLASS_ORDER]
    for predicted, reference in zip(predictions, references):
        if predicted not in index or reference not in index:
            raise MetricsError(f"labels must lie in {CLASS_ORDER}")
        confusion[index[reference]][index[predicted]] += 1
    total = len(predictions)
    diagonal = sum(confusion[i][i] for i in range(3))
    precision, recall = {}, {}
    undefined_precision, undefined_recall = [], []
    for i, label in enumerate(CLASS_ORDER):
        predicted_count = sum(confusion[r][i] for r in range(3))
        reference_count = sum(confusion[i])
        if predicted_count:
            precision[label] = confusion[i][i] / predicted_count
        else:
            precision[label] = 0.0
            undefined_precision.append(label)
        if reference_count:
            recall[label] = confusion[i][i] / reference_count
        else:
            recall[label] = 0.0
            undefined_recall.append(label)
    return MetricsReport(
        fidelity=diagonal / total,
        precision=precision,
        recall=recall,
        macro_precision=sum(precision.values()) / 3,
        macro_recall=sum(recall.values()) / 3,
        confusion=tuple(tuple(row) for row in confusion),
        count=total,
        empty_theory=empty_theory,
        undefined_precision_classes=tuple(undefined_precision),
        undefined_recall_classes=tuple(undefined_recall),
    )


def classify_pairs(theory: Theory, pairs, contexts: Mapping[int, tuple]) -> list:
    """The theory's label for each pair, resolving item ids to atom sets."""
    return [classify_pair(theory, contexts[p.first], contexts[p.second]) for p in pairs]


def fidelity_report(
    theory: Theory,
    pairs,
    oracle_labels: Sequence[int],
    contexts: Mapping[int, tuple],
) -> MetricsReport:
    """Agreement of a theory's labels with the black box's labels."""
    return agreement_report(
        classify_pairs(theory, pairs, contexts),
        list(oracle_labels),
        empty_theory=not theory.constraints,
    )


# ---------------------------------------------------------------------------
# Ground-truth theories from survey ratings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GtMapping:
    """How one 1-10 rating becomes a weak constraint."""

    rating: int
    g_bar: int
    m: int
    level: int
    weight: str


@dataclass(frozen=True)
class GtTheory:
    """A reference theory derived from ratings, one constraint per feature."""

    theory: Theory
    mappings: Mapping[str, GtMapping]
    skipped_features: tuple


def gt_map(rating: int) -> GtMapping:
    """Map a 1-10 rating to a signed priority level.

    The rating is recentred and negated (lower cost must mean more
    preferred), then shifted by one when non-positive so no constraint
    lands on the meaningless level 0: ratings below 5 yield positive
    weights (penalizing the feature), 5 and above yield negative weights
    (rewarding it), with the level growing with the rating's distance
    from the neutral midpoint.
    """
    if not 1 <= rating <= 10:
        raise MetricsError(f"rating must lie in [1, 10], got {rating}")
    g_bar = (rating - 5) * (-1)
    m = g_bar if g_bar > 0 else g_bar - 1
    return GtMapping(
        rating=rating,
        g_bar=g_bar,
        m=m,
        level=abs(m),
        weight="V1" if m > 0 else "-V1",
    )


def gt_constraint(feature: str, rating: int) -> WeakConstraint:
    mapping = gt_map(rating)
    return WeakConstraint(
        body=(Atom("value", (feature, "V1")),),
        weight=mapping.weight,
        level=mapping.level,
        terms=("V1",),
    )


def theory_value_features(theory: Theory) -> tuple:
    """Distinct feature names in ``value/2`` atoms, in first-use order."""
    seen = []
    for wc in theory.constraints:
        for atom in wc.body:
            if atom.predicate == "value" and atom.args and isinstance(atom.args[0], str):
                if atom.args[0] not in seen:
                    seen.append(atom.args[0])
    return tuple(seen)


def gt_theory(theory: Theory, ratings: Mapping[str, int]) -> GtTheory:
    """One rating-derived constraint per rated feature the theory mentions.

    Features without a rating are skipped and listed.  Category
    conditions are dropped: the reference is per-feature.
    """
    constraints = []
    mappings = {}
    skipped = []
    for feature in theory_value_features(theory):
        if feature in ratings:
            mappings[feature] = gt_map(ratings[feature])
            constraints.append(gt_constraint(feature, ratings[feature]))
        else:
            skipped.append(feature)
    built = Theory.of(constraints)
    return GtTheory(theory=built, mappings=mappings, skipped_features=tuple(skipped))


def ratings_from_schema(schema: Schema) -> dict:
    """The ``gt_rating`` annotations a schema carries, as a ratings map."""
    return {spec.name: spec.gt_rating for spec in schema if spec.gt_rating is not None}


def gt_report(
    theory: Theory,
    gt: GtTheory,
    pairs,
    contexts: Mapping[int, tuple],
) -> MetricsReport:
    """Agreement of a theory's labels with the rating-derived reference's."""
    return agreement_report(
        classify_pairs(theory, pairs, contexts),
        classify_pairs(gt.theory, pairs, contexts),
        empty_theory=not theory.constraints,
    )


# ---------------------------------------------------------------------------
# Maximum mean discrepancy
# ---------------------------------------------------------------------------

def median_bandwidth(a, b) -> float:
    """Median pairwise distance over the pooled samples (the usual heuristic)."""
    pooled = np.vstack([np.atleast_2d(a), np.atleast_2d(b)])
    deltas = pooled[:, None, :] - pooled[None, :, :]
    distances = np.sqrt((deltas**2).sum(axis=2))
    upper = distances[np.triu_indices(len(pooled), k=1)]
    value = float(np.median(upper))
    return value if value > 0 else 1.0


def mmd(a, b, bandwidth: Optional[float] = None) -> float:
    """Unbiased squared maximum mean discrepancy with a Gaussian kernel.

    The kernel is exp(-||x - y||^2 / (2 * bandwidth^2)); the default
    bandwidth is :func:`median_bandwidth`.  The unbiased estimate can dip
    below zero on similar samples, so it is clamped at 0.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise MetricsError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise MetricsError("both sample sets need at least 2 rows")
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
    if bandwidth <= 0:
        raise MetricsError(f"bandwidth must be positive, got {bandwidth}")

    def kernel(x, y):
        deltas = x[:, None, :] - y[None, :, :]
        sq = (deltas**2).sum(axis=2)
        return np.exp(-sq / (2.0 * bandwidth * bandwidth))

    kaa = kernel(a, a)
    kbb = kernel(b, b)
    kab = kernel(a, b)
    term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    term_ab = 2.0 * kab.mean()
    return max(0.0, float(term_a + term_b - term_ab))
