"""Distances between label distributions, RUS scores and the five-way
interaction categorisation.

Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import DataValidationError, DimensionError, NumericError

SUM_TOLERANCE = 1e-9


class InteractionCategory(str, enum.Enum):
    """The five non-overlapping interaction types, in report order."""

    AGREEMENT_REDUNDANCY = "agreement_redundancy"
    AGREEMENT_SYNERGY = "agreement_synergy"
    DISAGREEMENT_UNIQUE1 = "disagreement_unique1"
    DISAGREEMENT_UNIQUE2 = "disagreement_unique2"
    DISAGREEMENT_SYNERGY = "disagreement_synergy"

    @property
    def title(self) -> str:
        return _TITLES[self]

    @property
    def is_agreement(self) -> bool:
        return self.value.startswith("agreement")


_TITLES = {
    InteractionCategory.AGREEMENT_REDUNDANCY: "Agreement & Redundancy",
    InteractionCategory.AGREEMENT_SYNERGY: "Agreement & Synergy",
    InteractionCategory.DISAGREEMENT_UNIQUE1: "Disagreement & Unique [1]",
    InteractionCategory.DISAGREEMENT_UNIQUE2: "Disagreement & Unique [2]",
    InteractionCategory.DISAGREEMENT_SYNERGY: "Disagreement & Synergy",
}

CATEGORIES: tuple[InteractionCategory, ...] = tuple(InteractionCategory)


class Agreement(str, enum.Enum):
    AGREEMENT = "agreement"
    DISAGREEMENT = "disagreement"


class Strategy(str, enum.Enum):
    THRESHOLD = "threshold"
    ARGMAX = "argmax"


@dataclass(frozen=True)
class LabelDistribution:
    """A point on the probability simplex over the label set."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) < 2:
            raise DimensionError(f"a label distribution needs at least 2 entries, got {len(probs)}")
        if not all(math.isfinite(p) for p in probs):
            raise NumericError(f"non-finite probability in {list(probs)}")
        if min(probs) < 0:
            raise DataValidationError(f"negative probability in {list(probs)}")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise DataValidationError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def renormalized(cls, values: Iterable[float], tolerance: float = 1e-6) -> "LabelDistribution":
        """Build a distribution from values summing to 1 within ``tolerance``,
        dividing out the observed sum."""
        values = [float(v) for v in values]
        if not all(math.isfinite(v) for v in values):
            raise NumericError(f"non-finite probability in {values}")
        if values and min(values) < 0:
            raise DataValidationError(f"negative probability in {values}")
        total = math.fsum(values)
        # small slack so a sum of exactly 1 +/- tolerance survives float rounding
        if abs(total - 1.0) > tolerance * (1 + 1e-9):
            raise DataValidationError(f"probabilities sum to {total!r}, outside 1 +/- {tolerance:g}")
        return cls(tuple(v / total for v in values))

    def __len__(self) -> int:
        return len(self.probs)

    def __iter__(self):
        return iter(self.probs)

    def __getitem__(self, i):
        return self.probs[i]


def _probs(x) -> Sequence[float]:
    return x.probs if isinstance(x, LabelDistribution) else tuple(x)


def l1_distance(a, b) -> float:
    """Sum of absolute elementwise differences between two distributions."""
    pa, pb = _probs(a), _probs(b)
    if len(pa) != len(pb):
        raise DimensionError(f"length mismatch: {len(pa)} vs {len(pb)}")
    return sum(abs(x - y) for x, y in zip(pa, pb))


@dataclass(frozen=True)
class PairwiseDistances:
    d12: float
    d1m: float
    d2m: float


def pairwise_distances(d1, d2, dm) -> PairwiseDistances:
    return PairwiseDistances(
        d12=l1_distance(d1, d2),
        d1m=l1_distance(d1, dm),
        d2m=l1_distance(d2, dm),
    )


@dataclass(frozen=True)
class RusScores:
    redundancy: float
    unique1: float
    unique2: float
    synergy: float
    distances: PairwiseDistances


def rus_scores(dist: PairwiseDistances) -> RusScores:
    """Redundancy, uniqueness and synergy scores from the three distances.

    Redundancy is the negated sum of all three distances, so it is never
    positive; synergy is how far the joint prediction sits from both
    unimodal ones.
    """
    d12, d1m, d2m = dist.d12, dist.d1m, dist.d2m
    return RusScores(
        redundancy=-(d1m + d12 + d2m),
        unique1=d2m + d12 - d1m,
        unique2=d1m + d12 - d2m,
        synergy=d1m + d2m,
        distances=dist,
    )


@dataclass(frozen=True)
class CategorizationConfig:
    """Thresholds for the agreement split (``gamma``) and for closeness of the
    joint prediction to a unimodal one (``tau``), both on L1 distance."""

    gamma: float = 0.5
    tau: float = 0.5
    strategy: Strategy = Strategy.THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        for name in ("gamma", "tau"):
            value = getattr(self, name)
            if not (0 < value < 2):
                raise ValueError(f"{name} must lie in (0, 2), got {value!r}")


def disagreement_classify(dist: PairwiseDistances, cfg: CategorizationConfig) -> Agreement:
    return Agreement.DISAGREEMENT if dist.d12 > cfg.gamma else Agreement.AGREEMENT


def _threshold_rule(dist: PairwiseDistances, cfg: CategorizationConfig) -> InteractionCategory:
    if dist.d12 <= cfg.gamma:
        if max(dist.d1m, dist.d2m) <= cfg.tau:
            return InteractionCategory.AGREEMENT_REDUNDANCY
        return InteractionCategory.AGREEMENT_SYNERGY
    if min(dist.d1m, dist.d2m) > cfg.tau:
        return InteractionCategory.DISAGREEMENT_SYNERGY
    if dist.d1m <= dist.d2m:
        return InteractionCategory.DISAGREEMENT_UNIQUE1
    return InteractionCategory.DISAGREEMENT_UNIQUE2


def _argmax_rule(scores: RusScores, cfg: CategorizationConfig) -> InteractionCategory:
    if scores.distances.d12 <= cfg.gamma:
        if scores.synergy > cfg.tau:
            return InteractionCategory.AGREEMENT_SYNERGY
        return InteractionCategory.AGREEMENT_REDUNDANCY
    candidates = (
        (scores.unique1, InteractionCategory.DISAGREEMENT_UNIQUE1),
        (scores.unique2, InteractionCategory.DISAGREEMENT_UNIQUE2),
        (scores.synergy * (cfg.tau / 2), InteractionCategory.DISAGREEMENT_SYNERGY),
    )
    best_value, best = candidates[0]
    for value, category in candidates[1:]:
        # strict comparison keeps the earlier entry on ties
        if value > best_value:
            best_value, best = value, category
    return best


@dataclass(frozen=True)
class Assessment:
    """Category of one datapoint together with the scores behind it."""

    category: InteractionCategory
    scores: RusScores

    @property
    def distances(self) -> PairwiseDistances:
        return self.scores.distances


def assess(dist: PairwiseDistances, cfg: CategorizationConfig | None = None) -> Assessment:
    cfg = cfg or CategorizationConfig()
    scores = rus_scores(dist)
    if cfg.strategy is Strategy.ARGMAX:
        category = _argmax_rule(scores, cfg)
    else:
        category = _threshold_rule(dist, cfg)
    return Assessment(category, scores)


def categorize(dist: PairwiseDistances, cfg: CategorizationConfig | None = None) -> InteractionCategory:
    return assess(dist, cfg).category


def assess_record(record, cfg: CategorizationConfig | None = None) -> Assessment:
    return assess(pairwise_distances(record.delta1, record.delta2, record.delta_m), cfg)


def categorize_record(record, cfg: CategorizationConfig | None = None) -> InteractionCategory:
    return assess_record(record, cfg).category


def empty_partition() -> dict[InteractionCategory, list[str]]:
    return {c: [] for c in CATEGORIES}


def partition_dataset(records, cfg: CategorizationConfig | None = None) -> dict[InteractionCategory, list[str]]:
    """Bucket record ids by interaction category, keeping input order.

    Every one of the five categories is present in the result, possibly
    empty. A record whose label cardinality differs from the first record's
    aborts the whole partition.
    """
    buckets = empty_partition()
    cardinality = None
    for record in records:
        n = len(record.delta1)
        if cardinality is None:
            cardinality = n
        if not (len(record.delta1) == len(record.delta2) == len(record.delta_m) == cardinality):
            raise DimensionError(
                f"record {record.id!r}: label cardinality differs from the dataset's {cardinality}"
            )
        buckets[categorize_record(record, cfg)].append(record.id)
    return buckets


def partition_counts(partition: Mapping[InteractionCategory, Sequence[str]]) -> dict[InteractionCategory, int]:
    return {c: len(partition.get(c, ())) for c in CATEGORIES}
