"""Precision / recall / F1 overall and per interaction category."""

from __future__ import annotations

import json
import os
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EvaluationError
from .interaction import CATEGORIES, InteractionCategory

MAX_CONFIDENCE = 5.0


@dataclass(frozen=True)
class ConfusionCounts:
    """Count matrix indexed ``[gold][predicted]``.

    ``positive_label`` selects the class for binary metrics; ``None`` means
    macro-averaging over all labels.
    """

    matrix: tuple[tuple[int, ...], ...]
    positive_label: int | None = 1

    @classmethod
    def zeros(cls, k: int, positive_label: int | None = 1) -> "ConfusionCounts":
        return cls(tuple((0,) * k for _ in range(k)), positive_label)

    @property
    def label_cardinality(self) -> int:
        return len(self.matrix)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.matrix)

    def _pos(self):
        if self.positive_label is None:
            raise ValueError("binary counts need a positive label")
        return self.positive_label

    def tp_for(self, k):
        return self.matrix[k][k]

    def fp_for(self, k):
        return sum(self.matrix[g][k] for g in range(self.label_cardinality)) - self.matrix[k][k]

    def fn_for(self, k):
        return sum(self.matrix[k]) - self.matrix[k][k]

    @property
    def tp(self):
        return self.tp_for(self._pos())

    @property
    def fp(self):
        return self.fp_for(self._pos())

    @property
    def fn(self):
        return self.fn_for(self._pos())

    @property
    def tn(self):
        return self.total - self.tp - self.fp - self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if self.label_cardinality != other.label_cardinality:
            raise ValueError("cannot add confusion matrices of different size")
        return ConfusionCounts(
            tuple(tuple(a + b for a, b in zip(r1, r2)) for r1, r2 in zip(self.matrix, other.matrix)),
            self.positive_label,
        )


def binary_counts(tp: int, fp: int, fn: int, tn: int = 0) -> ConfusionCounts:
    """A two-label matrix with label 1 as the positive class."""
    return ConfusionCounts(((tn, fp), (fn, tp)), positive_label=1)


def _index_records(records):
    index = {}
    for r in records:
        index[r.id] = r
    return index


def confusion(predictions, records, positive_label: int | None = 1,
              label_cardinality: int | None = None) -> ConfusionCounts:
    """Tally predictions against the gold labels of the matching records."""
    index = _index_records(records)
    predictions = list(predictions)
    if label_cardinality is None:
        label_cardinality = next(iter(index.values())).label_cardinality if index else 2
    k = label_cardinality
    counts = [[0] * k for _ in range(k)]
    for p in predictions:
        record = index.get(p.id)
        if record is None:
            raise EvaluationError(f"prediction for unknown id {p.id!r}")
        if record.gold_label is None:
            raise EvaluationError(f"record {p.id!r} has no gold label")
        if not 0 <= p.predicted_label < k:
            raise EvaluationError(f"prediction for {p.id!r} has label {p.predicted_label} outside [0, {k})")
        counts[record.gold_label][p.predicted_label] += 1
    return ConfusionCounts(tuple(tuple(row) for row in counts), positive_label)


def _ratio(num, den):
    return num / den if den else 0.0


def _prf(tp, fp, fn):
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return p, r, _ratio(2 * p * r, p + r)


def prf1(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall and F1; any zero denominator yields 0."""
    if c.positive_label is not None:
        return _prf(c.tp, c.fp, c.fn)
    per_label = [_prf(c.tp_for(k), c.fp_for(k), c.fn_for(k)) for k in range(c.label_cardinality)]
    n = len(per_label)
    return tuple(sum(m[i] for m in per_label) / n for i in range(3))


@dataclass(frozen=True)
class CategoryReport:
    category: InteractionCategory
    example_count: int
    precision: float
    recall: float
    f1: float
    mean_confidence: float
    confusion: ConfusionCounts | None = None
    # sample standard deviations across repeated runs, when aggregated
    std: Mapping[str, float] | None = None

    @property
    def present(self) -> bool:
        return self.example_count > 0


@dataclass(frozen=True)
class OverallReport:
    count: int
    precision: float
    recall: float
    f1: float
    mean_confidence: float
    confusion: ConfusionCounts | None = None
    std: Mapping[str, float] | None = None


@dataclass(frozen=True)
class EvaluationReport:
    overall: OverallReport
    per_category: Mapping[InteractionCategory, CategoryReport]
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        total = sum(r.example_count for r in self.per_category.values())
        if total != self.overall.count:
            raise EvaluationError(
                f"per-category counts sum to {total}, overall count is {self.overall.count}"
            )


def _mean_conf(preds):
    if not preds:
        return 0.0
    return sum(min(max(p.confidence, 0.0), MAX_CONFIDENCE) for p in preds) / len(preds)


def per_category_report(predictions, records, partition: Mapping[InteractionCategory, Sequence[str]],
                        positive_label: int | None = 1, metadata: Mapping | None = None,
                        label_cardinality: int | None = None) -> EvaluationReport:
    """Score predictions within each partition bucket and overall.

    The partition must cover exactly the predicted ids.
    """
    predictions = list(predictions)
    by_id = {}
    for p in predictions:
        if p.id in by_id:
            raise EvaluationError(f"duplicate prediction for id {p.id!r}")
        by_id[p.id] = p
    owner = {}
    for category in CATEGORIES:
        for rid in partition.get(category, ()):
            if rid in owner:
                raise EvaluationError(f"id {rid!r} appears in more than one partition bucket")
            owner[rid] = category
    missing = [i for i in by_id if i not in owner]
    extra = [i for i in owner if i not in by_id]
    if missing or extra:
        raise EvaluationError(
            "partition and predictions disagree: "
            f"{len(missing)} predicted ids not partitioned (e.g. {missing[:3]}), "
            f"{len(extra)} partitioned ids without prediction (e.g. {extra[:3]})"
        )
    records = list(records)
    if label_cardinality is None and records:
        label_cardinality = records[0].label_cardinality
    per_category = {}
    for category in CATEGORIES:
        bucket = [by_id[rid] for rid in partition.get(category, ())]
        c = confusion(bucket, records, positive_label, label_cardinality)
        p, r, f = prf1(c)
        per_category[category] = CategoryReport(category, len(bucket), p, r, f, _mean_conf(bucket), c)
    overall_c = confusion(predictions, records, positive_label, label_cardinality)
    p, r, f = prf1(overall_c)
    overall = OverallReport(len(predictions), p, r, f, _mean_conf(predictions), overall_c)
    return EvaluationReport(overall, per_category, dict(metadata or {}))


_METRICS = ("precision", "recall", "f1", "mean_confidence")


def _mean_std(values):
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def aggregate_reports(reports: Sequence[EvaluationReport]) -> EvaluationReport:
    """Mean and sample standard deviation of each metric over repeated runs."""
    if not reports:
        raise ValueError("nothing to aggregate")
    per_category = {}
    for category in CATEGORIES:
        rows = [rep.per_category[category] for rep in reports]
        counts = {row.example_count for row in rows}
        if len(counts) != 1:
            raise EvaluationError(f"{category.value}: runs disagree on the bucket size")
        means, stds = {}, {}
        for m in _METRICS:
            means[m], stds[m] = _mean_std([getattr(row, m) for row in rows])
        per_category[category] = CategoryReport(category, counts.pop(), **means, std=stds)
    means, stds = {}, {}
    for m in _METRICS:
        means[m], stds[m] = _mean_std([getattr(rep.overall, m) for rep in reports])
    overall = OverallReport(reports[0].overall.count, **means, std=stds)
    metadata = dict(reports[0].metadata)
    metadata["repeat"] = len(reports)
    metadata["seeds"] = [rep.metadata.get("seed") for rep in reports]
    return EvaluationReport(overall, per_category, metadata)


@dataclass(frozen=True)
class ImprovementRow:
    category: InteractionCategory
    example_count: int
    single_f1: float
    expert_f1: float
    improvement: float | None

    @property
    def improvement_text(self) -> str:
        return format_improvement(self.improvement)


def relative_improvement(single: float, expert: float) -> float | None:
    """Relative change in percent, or None when the baseline is zero."""
    if single == 0:
        return None
    return (expert - single) / single * 100.0


def format_improvement(value: float | None) -> str:
    if value is None:
        return "n/a"
    return f"{value + 0.0:+.2f}%"


def compare_runs(baseline: EvaluationReport, experts: EvaluationReport) -> list[ImprovementRow]:
    rows = []
    for category in CATEGORIES:
        b, e = baseline.per_category[category], experts.per_category[category]
        if b.example_count != e.example_count:
            raise EvaluationError(
                f"{category.value}: baseline has {b.example_count} examples, experts {e.example_count}"
            )
        rows.append(ImprovementRow(category, b.example_count, b.f1, e.f1, relative_improvement(b.f1, e.f1)))
    return rows


# -- rendering ----------------------------------------------------------------

def _pct(value, std=None):
    text = f"{value * 100:.2f}"
    if std is not None:
        text += f"±{std * 100:.2f}"
    return text


def _table(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        cells = [str(row[0]).ljust(widths[0])] + [str(x).rjust(w) for x, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines)


def render_report(report: EvaluationReport) -> str:
    header = ("Category", "#Example", "Precision", "Recall", "F1", "Confidence")
    rows = []
    for category in CATEGORIES:
        r = report.per_category[category]
        if not r.present:
            rows.append((category.title, 0, "-", "-", "-", "-"))
            continue
        s = r.std or {}
        rows.append((
            category.title, r.example_count,
            _pct(r.precision, s.get("precision")), _pct(r.recall, s.get("recall")), _pct(r.f1, s.get("f1")),
            f"{r.mean_confidence:.2f}" + (f"±{s['mean_confidence']:.2f}" if "mean_confidence" in s else ""),
        ))
    o = report.overall
    s = o.std or {}
    rows.append((
        "Overall", o.count, _pct(o.precision, s.get("precision")), _pct(o.recall, s.get("recall")),
        _pct(o.f1, s.get("f1")),
        f"{o.mean_confidence:.2f}" + (f"±{s['mean_confidence']:.2f}" if "mean_confidence" in s else ""),
    ))
    return _table(header, rows)


def render_comparison(rows: Sequence[ImprovementRow]) -> str:
    header = ("Category", "#Example", "F1 (Single Model)", "F1 (Expert Model)", "Improvement (%)")
    body = [
        (r.category.title, r.example_count, _pct(r.single_f1), _pct(r.expert_f1), r.improvement_text)
        for r in rows
    ]
    return _table(header, body)


# -- serialisation ------------------------------------------------------------

def _confusion_to_obj(c):
    if c is None:
        return None
    return {"matrix": [list(row) for row in c.matrix], "positive_label": c.positive_label}


def _confusion_from_obj(obj):
    if obj is None:
        return None
    return ConfusionCounts(tuple(tuple(int(x) for x in row) for row in obj["matrix"]), obj["positive_label"])


def report_to_lines(report: EvaluationReport) -> list[dict]:
    lines = [{"kind": "metadata", **report.metadata}]
    o = report.overall
    lines.append({
        "kind": "overall", "count": o.count, "precision": o.precision, "recall": o.recall, "f1": o.f1,
        "mean_confidence": o.mean_confidence, "confusion": _confusion_to_obj(o.confusion),
        "std": dict(o.std) if o.std else None,
    })
    for category in CATEGORIES:
        r = report.per_category[category]
        lines.append({
            "kind": "category", "category": category.value, "example_count": r.example_count,
            "present": r.present, "precision": r.precision, "recall": r.recall, "f1": r.f1,
            "mean_confidence": r.mean_confidence, "confusion": _confusion_to_obj(r.confusion),
            "std": dict(r.std) if r.std else None,
        })
    return lines


def report_from_lines(lines: Iterable[dict]) -> EvaluationReport:
    metadata, overall, per_category = {}, None, {}
    for obj in lines:
        kind = obj.get("kind")
        if kind == "metadata":
            metadata = {k: v for k, v in obj.items() if k != "kind"}
        elif kind == "overall":
            overall = OverallReport(
                obj["count"], obj["precision"], obj["recall"], obj["f1"], obj["mean_confidence"],
                _confusion_from_obj(obj.get("confusion")), obj.get("std"),
            )
        elif kind == "category":
            c = InteractionCategory(obj["category"])
            per_category[c] = CategoryReport(
                c, obj["example_count"], obj["precision"], obj["recall"], obj["f1"], obj["mean_confidence"],
                _confusion_from_obj(obj.get("confusion")), obj.get("std"),
            )
    if overall is None or set(per_category) != set(CATEGORIES):
        raise EvaluationError("report is missing its overall line or a category line")
    return EvaluationReport(overall, per_category, metadata)


def write_report(report: EvaluationReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in report_to_lines(report):
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_report(path) -> EvaluationReport:
    """Read a report file, or the ``report.jsonl`` inside an evaluate output directory."""
    if os.path.isdir(path):
        path = os.path.join(path, "report.jsonl")
    with open(path, encoding="utf-8") as fh:
        try:
            return report_from_lines(json.loads(line) for line in fh if line.strip())
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise EvaluationError(f"{os.fspath(path)} is not a report file: {exc}") from None


def comparison_to_lines(rows: Sequence[ImprovementRow]) -> list[dict]:
    return [
        {"kind": "improvement", "category": r.category.value, "example_count": r.example_count,
         "single_f1": r.single_f1, "expert_f1": r.expert_f1, "improvement_pct": r.improvement}
        for r in rows
    ]
