"""Reading and writing line-delimited prediction datasets."""

from __future__ import annotations

import enum
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .errors import (
    DataValidationError,
    DatasetParseError,
    DimensionError,
    DuplicateIdError,
    NumericError,
)
from .interaction import LabelDistribution


class DatasetFormat(str, enum.Enum):
    PROBS = "probs"
    LOGITS = "logits"


_FIELDS = {
    DatasetFormat.PROBS: ("delta_1", "delta_2", "delta_m"),
    DatasetFormat.LOGITS: ("logits_1", "logits_2", "logits_m"),
}


@dataclass(frozen=True)
class ModalityPayload:
    """Text projections of the two modalities."""

    text1: str = ""
    text2: str = ""


@dataclass(frozen=True)
class DataPointRecord:
    id: str
    delta1: LabelDistribution
    delta2: LabelDistribution
    delta_m: LabelDistribution
    gold_label: int | None = None
    payload: ModalityPayload = field(default_factory=ModalityPayload)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise DataValidationError(f"record id must be a non-empty string, got {self.id!r}")
        n1, n2, nm = len(self.delta1), len(self.delta2), len(self.delta_m)
        if not n1 == n2 == nm:
            raise DimensionError(
                f"record {self.id!r}: distribution lengths differ "
                f"(delta_1={n1}, delta_2={n2}, delta_m={nm})"
            )
        if self.gold_label is not None:
            if isinstance(self.gold_label, bool) or not isinstance(self.gold_label, int):
                raise DataValidationError(f"record {self.id!r}: label must be an integer")
            if not 0 <= self.gold_label < n1:
                raise DataValidationError(
                    f"record {self.id!r}: label {self.gold_label} outside [0, {n1})"
                )

    @property
    def label_cardinality(self) -> int:
        return len(self.delta1)


def normalize_logits(logits: Sequence[float], temperature: float = 1.0) -> LabelDistribution:
    """Temperature-scaled exponential normalisation of raw classifier scores.

    The maximum is subtracted before exponentiating, so large logits do not
    overflow.
    """
    if not temperature > 0 or not math.isfinite(temperature):
        raise ValueError(f"temperature must be a positive finite number, got {temperature!r}")
    values = [float(x) for x in logits]
    if len(values) < 2:
        raise DimensionError(f"need at least 2 logits, got {len(values)}")
    if not all(math.isfinite(x) for x in values):
        raise NumericError(f"non-finite logit in {values}")
    top = max(values)
    weights = [math.exp((x - top) / temperature) for x in values]
    total = math.fsum(weights)
    return LabelDistribution(tuple(w / total for w in weights))


def argmax_label(d) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    probs = d.probs if isinstance(d, LabelDistribution) else tuple(d)
    best = 0
    for i, p in enumerate(probs):
        if p > probs[best]:
            best = i
    return best


def _number_list(obj, name):
    if not isinstance(obj, list) or not obj:
        raise DataValidationError(f"field {name!r} must be a non-empty array of numbers")
    out = []
    for x in obj:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise DataValidationError(f"field {name!r} contains a non-number: {x!r}")
        out.append(float(x))
    return out


def record_from_dict(obj: dict, fmt: DatasetFormat | str = DatasetFormat.PROBS,
                     temperature: float = 1.0) -> DataPointRecord:
    fmt = DatasetFormat(fmt)
    if not isinstance(obj, dict):
        raise DataValidationError("each line must be a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise DataValidationError("missing or empty string field 'id'")
    dists = []
    for name in _FIELDS[fmt]:
        if name not in obj or obj[name] is None:
            raise DataValidationError(f"record {rid!r}: missing field {name!r}")
        values = _number_list(obj[name], name)
        if fmt is DatasetFormat.LOGITS:
            dists.append(normalize_logits(values, temperature))
        else:
            if len(values) < 2:
                raise DimensionError(f"record {rid!r}: field {name!r} needs at least 2 entries")
            dists.append(LabelDistribution.renormalized(values))
    lengths = [len(d) for d in dists]
    if len(set(lengths)) != 1:
        raise DimensionError(
            f"record {rid!r}: distribution lengths differ "
            + ", ".join(f"{n}={k}" for n, k in zip(_FIELDS[fmt], lengths))
        )
    label = obj.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise DataValidationError(f"record {rid!r}: label must be an integer, got {label!r}")
    payload = obj.get("payload") or {}
    if not isinstance(payload, dict):
        raise DataValidationError(f"record {rid!r}: payload must be an object")
    text1, text2 = payload.get("text_1", ""), payload.get("text_2", "")
    if not isinstance(text1, str) or not isinstance(text2, str):
        raise DataValidationError(f"record {rid!r}: payload texts must be strings")
    return DataPointRecord(rid, *dists, gold_label=label, payload=ModalityPayload(text1, text2))


def record_to_dict(record: DataPointRecord) -> dict:
    out = {
        "id": record.id,
        "delta_1": list(record.delta1.probs),
        "delta_2": list(record.delta2.probs),
        "delta_m": list(record.delta_m.probs),
    }
    if record.gold_label is not None:
        out["label"] = record.gold_label
    out["payload"] = {"text_1": record.payload.text1, "text_2": record.payload.text2}
    return out


def _loc(source, lineno):
    return f"{source}:{lineno}" if source else f"line {lineno}"


def parse_lines(lines: Iterable[str], fmt: DatasetFormat | str = DatasetFormat.PROBS,
                temperature: float = 1.0, source: str | None = None) -> list[DataPointRecord]:
    """Parse dataset lines. Blank lines and ``#`` comment lines are skipped.

    All errors carry the 1-based line number they were found on.
    """
    fmt = DatasetFormat(fmt)
    records: list[DataPointRecord] = []
    seen: dict[str, int] = {}
    cardinality = None
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"malformed JSON: {exc.msg}", line=lineno, source=source) from None
        try:
            record = record_from_dict(obj, fmt, temperature)
        except DimensionError as exc:
            raise DimensionError(f"{_loc(source, lineno)}: {exc}") from None
        except DataValidationError as exc:
            raise DatasetParseError(str(exc), line=lineno, source=source) from None
        if record.id in seen:
            raise DuplicateIdError(
                f"{_loc(source, lineno)}: duplicate id {record.id!r} "
                f"(first seen on line {seen[record.id]})"
            )
        if cardinality is None:
            cardinality = record.label_cardinality
        elif record.label_cardinality != cardinality:
            raise DimensionError(
                f"{_loc(source, lineno)}: record {record.id!r} has "
                f"{record.label_cardinality} labels, dataset has {cardinality}"
            )
        seen[record.id] = lineno
        records.append(record)
    return records


def parse_dataset(path, fmt: DatasetFormat | str = DatasetFormat.PROBS,
                  temperature: float = 1.0) -> list[DataPointRecord]:
    """Read a dataset file into records, in file order."""
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, fmt, temperature, source=os.fspath(path))


def dump_records(records: Iterable[DataPointRecord], stream: IO[str]) -> None:
    for record in records:
        stream.write(json.dumps(record_to_dict(record), ensure_ascii=False) + "\n")


def write_dataset(records: Iterable[DataPointRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_records(records, fh)


def serialize_dataset(records: Iterable[DataPointRecord]) -> str:
    buf = io.StringIO()
    dump_records(records, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class DatasetSummary:
    count: int
    label_cardinality: int | None
    gold_label_coverage: float
    # (delta_1, delta_2, delta_m) means; None for an empty dataset
    marginals: tuple[LabelDistribution, LabelDistribution, LabelDistribution] | None

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "label_cardinality": self.label_cardinality,
            "gold_label_coverage": self.gold_label_coverage,
            "marginals": None if self.marginals is None else {
                name: list(d.probs) for name, d in zip(("delta_1", "delta_2", "delta_m"), self.marginals)
            },
        }


def _mean_distribution(dists: Sequence[LabelDistribution]) -> LabelDistribution:
    n = len(dists)
    k = len(dists[0])
    means = [math.fsum(d.probs[i] for d in dists) / n for i in range(k)]
    total = math.fsum(means)
    return LabelDistribution(tuple(m / total for m in means))


def summarize(records: Sequence[DataPointRecord]) -> DatasetSummary:
    records = list(records)
    if not records:
        return DatasetSummary(0, None, 0.0, None)
    labelled = sum(r.gold_label is not None for r in records)
    return DatasetSummary(
        count=len(records),
        label_cardinality=records[0].label_cardinality,
        gold_label_coverage=labelled / len(records),
        marginals=(
            _mean_distribution([r.delta1 for r in records]),
            _mean_distribution([r.delta2 for r in records]),
            _mean_distribution([r.delta_m for r in records]),
        ),
    )
