"""Synthetic datasets with planted interaction categories, and an independent
brute-force categoriser to check the main one against.

The oracle below deliberately re-derives distances and decision rules with
plain loops instead of calling :mod:`mmoe.interaction`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GenerationError
from .ingest import DataPointRecord, ModalityPayload, argmax_label
from .interaction import CategorizationConfig, InteractionCategory, LabelDistribution, Strategy
from .routing import MAX_CONFIDENCE, MockExpert

MAX_ATTEMPTS = 10_000

_SHORT = {
    InteractionCategory.AGREEMENT_REDUNDANCY: "ar",
    InteractionCategory.AGREEMENT_SYNERGY: "as",
    InteractionCategory.DISAGREEMENT_UNIQUE1: "du1",
    InteractionCategory.DISAGREEMENT_UNIQUE2: "du2",
    InteractionCategory.DISAGREEMENT_SYNERGY: "ds",
}

# which earlier point each proposal is pulled towards: (delta_2 anchor, delta_m anchor)
_ANCHORS = {
    InteractionCategory.AGREEMENT_REDUNDANCY: (1, 1),
    InteractionCategory.AGREEMENT_SYNERGY: (1, None),
    InteractionCategory.DISAGREEMENT_UNIQUE1: (None, 1),
    InteractionCategory.DISAGREEMENT_UNIQUE2: (None, 2),
    InteractionCategory.DISAGREEMENT_SYNERGY: (None, None),
}


@dataclass(frozen=True)
class PlantedSpec:
    category: InteractionCategory
    count: int
    margin: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "category", InteractionCategory(self.category))
        if self.count < 0:
            raise GenerationError(f"{self}: count must be >= 0")
        if not self.margin > 0:
            raise GenerationError(f"{self}: margin must be > 0")


def _naive_l1(p, q):
    total = 0.0
    for i in range(len(p)):
        total += abs(p[i] - q[i])
    return total


def _satisfies(category, d12, d1m, d2m, gamma, tau, m):
    if category is InteractionCategory.AGREEMENT_REDUNDANCY:
        return d12 <= gamma - m and d1m <= tau - m and d2m <= tau - m
    if category is InteractionCategory.AGREEMENT_SYNERGY:
        return d12 <= gamma - m and d1m >= tau + m and d2m >= tau + m
    if category is InteractionCategory.DISAGREEMENT_UNIQUE1:
        return d12 >= gamma + m and d1m <= tau - m and d2m >= d1m + m
    if category is InteractionCategory.DISAGREEMENT_UNIQUE2:
        return d12 >= gamma + m and d2m <= tau - m and d1m >= d2m + m
    return d12 >= gamma + m and d1m >= tau + m and d2m >= tau + m


def check_feasible(spec: PlantedSpec, cfg: CategorizationConfig, label_cardinality: int) -> None:
    """Raise GenerationError when the spec's constraints cannot all hold."""
    g, t, m = cfg.gamma, cfg.tau, spec.margin
    c = spec.category
    ok = True
    if c in (InteractionCategory.AGREEMENT_REDUNDANCY, InteractionCategory.AGREEMENT_SYNERGY):
        ok = g - m >= 0
    else:
        ok = g + m <= 2
    if c is InteractionCategory.AGREEMENT_REDUNDANCY:
        ok = ok and t - m >= 0
    elif c is InteractionCategory.AGREEMENT_SYNERGY:
        ok = ok and t + m <= 2
    elif c in (InteractionCategory.DISAGREEMENT_UNIQUE1, InteractionCategory.DISAGREEMENT_UNIQUE2):
        ok = ok and t - m >= 0
    else:
        # two labels: delta_m either sits between the unimodal points or outside both
        if label_cardinality == 2:
            ok = ok and (t + m <= 1 or g + t + 2 * m <= 2)
        else:
            ok = ok and t + m <= 2
    if not ok:
        raise GenerationError(
            f"infeasible spec {spec.category.value} (count={spec.count}, margin={m}) "
            f"for gamma={g}, tau={t}, {label_cardinality} labels"
        )


def payload_for(record_id: str, gold: int) -> ModalityPayload:
    return ModalityPayload(
        f"record {record_id}: modality-1 cue for label {gold}",
        f"record {record_id}: modality-2 cue for label {gold}",
    )


def _draw(rng, k, anchor):
    point = rng.dirichlet(np.ones(k))
    if anchor is not None:
        lam = rng.uniform()
        point = (1 - lam) * anchor + lam * point
    point = np.clip(point, 0.0, None)
    return point / point.sum()


def _generate_one(spec: PlantedSpec, cfg: CategorizationConfig, k: int):
    rng = np.random.default_rng(spec.seed)
    a2, am = _ANCHORS[spec.category]
    out = []
    for i in range(spec.count):
        for _ in range(MAX_ATTEMPTS):
            p1 = _draw(rng, k, None)
            p2 = _draw(rng, k, p1 if a2 == 1 else None)
            pm = _draw(rng, k, {1: p1, 2: p2}.get(am))
            p1, p2, pm = (tuple(float(x) for x in p) for p in (p1, p2, pm))
            d12, d1m, d2m = _naive_l1(p1, p2), _naive_l1(p1, pm), _naive_l1(p2, pm)
            if _satisfies(spec.category, d12, d1m, d2m, cfg.gamma, cfg.tau, spec.margin):
                break
        else:
            raise GenerationError(
                f"spec {spec.category.value} (seed={spec.seed}, margin={spec.margin}): "
                f"no sample after {MAX_ATTEMPTS} attempts"
            )
        rid = f"{_SHORT[spec.category]}-s{spec.seed}-{i:04d}"
        gold = argmax_label(pm)
        out.append(DataPointRecord(
            rid, LabelDistribution(p1), LabelDistribution(p2), LabelDistribution(pm),
            gold_label=gold, payload=payload_for(rid, gold),
        ))
    return out


def generate_planted(specs: Sequence[PlantedSpec], cfg: CategorizationConfig | None = None,
                     label_cardinality: int = 2) -> list[tuple[DataPointRecord, InteractionCategory]]:
    """Records paired with the category they were planted in, in spec order."""
    cfg = cfg or CategorizationConfig()
    if label_cardinality < 2:
        raise GenerationError("label cardinality must be >= 2")
    for spec in specs:
        check_feasible(spec, cfg, label_cardinality)
    pairs = []
    for spec in specs:
        pairs.extend((r, spec.category) for r in _generate_one(spec, cfg, label_cardinality))
    ids = [r.id for r, _ in pairs]
    if len(set(ids)) != len(ids):
        raise GenerationError("two specs share a category and seed; their record ids collide")
    return pairs


def generate(specs: Sequence[PlantedSpec], cfg: CategorizationConfig | None = None,
             label_cardinality: int = 2) -> list[DataPointRecord]:
    return [r for r, _ in generate_planted(specs, cfg, label_cardinality)]


def oracle_categorize(record, cfg: CategorizationConfig | None = None) -> InteractionCategory:
    """Threshold-rule category recomputed from scratch with explicit loops."""
    cfg = cfg or CategorizationConfig()
    if cfg.strategy is not Strategy.THRESHOLD:
        raise ValueError("the oracle only implements the threshold rule")
    p1, p2, pm = record.delta1.probs, record.delta2.probs, record.delta_m.probs
    d12 = d1m = d2m = 0.0
    for i in range(len(p1)):
        d12 += abs(p1[i] - p2[i])
    for i in range(len(p1)):
        d1m += abs(p1[i] - pm[i])
    for i in range(len(p2)):
        d2m += abs(p2[i] - pm[i])

    agree = not (d12 > cfg.gamma)
    if agree:
        far1 = d1m > cfg.tau
        far2 = d2m > cfg.tau
        if far1 or far2:
            return InteractionCategory.AGREEMENT_SYNERGY
        return InteractionCategory.AGREEMENT_REDUNDANCY
    if d1m > cfg.tau and d2m > cfg.tau:
        return InteractionCategory.DISAGREEMENT_SYNERGY
    if d2m < d1m:
        return InteractionCategory.DISAGREEMENT_UNIQUE2
    return InteractionCategory.DISAGREEMENT_UNIQUE1


def planted_mock_experts(planted: Sequence[tuple[DataPointRecord, InteractionCategory]], *,
                         seed: int = 0, off_category_accuracy: float = 0.5,
                         confidence: float = MAX_CONFIDENCE) -> dict[InteractionCategory, MockExpert]:
    """Mock experts that are always right on their own planted category and
    right with probability ``off_category_accuracy`` on every other record.

    The coin for each (expert, record) pair is seeded, so the behaviour maps
    are reproducible.
    """
    experts = {}
    for category in InteractionCategory:
        behavior = {}
        for record, planted_as in planted:
            gold = record.gold_label
            k = record.label_cardinality
            correct = planted_as is category or (
                random.Random(f"{seed}:{category.value}:{record.id}").random() < off_category_accuracy
            )
            label = gold if correct else (gold + 1) % k
            behavior[f"record {record.id}:"] = (label, confidence)
        experts[category] = MockExpert(behavior, default=(0, 0.0), match="target")
    return experts
