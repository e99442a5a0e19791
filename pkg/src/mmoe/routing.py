"""Routing datapoints to interaction-specific experts.

Each interaction category has one expert, reached over a small JSON-over-HTTP
protocol or, for the ``"mock"`` endpoint, an in-process callable. Prompts are
assembled from few-shot examples drawn from the same category.
"""

from __future__ import annotations

import json
import logging
import math
import random
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import ConfigError, DatasetParseError, ProtocolError, RoutingError
from .ingest import DataPointRecord, ModalityPayload
from .interaction import (
    CATEGORIES,
    CategorizationConfig,
    InteractionCategory,
    categorize_record,
)

log = logging.getLogger(__name__)

MOCK_ENDPOINT = "mock"
DEFAULT_KEY = "default"
MAX_CONFIDENCE = 5.0


class TransportError(Exception):
    """The request never produced an HTTP response (refused, timed out...)."""


@dataclass(frozen=True)
class ExpertSpec:
    category: InteractionCategory
    endpoint: str = MOCK_ENDPOINT
    shot_count: int = 0
    instruction: str = ""
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    # in-process expert used when endpoint == "mock"; prompt -> wire response dict
    mock: Callable[[str], Mapping[str, Any]] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "category", InteractionCategory(self.category))
        if self.shot_count < 0:
            raise ConfigError(f"{self.category.value}: shot_count must be >= 0")
        if not self.timeout > 0:
            raise ConfigError(f"{self.category.value}: timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigError(f"{self.category.value}: max_retries must be >= 0")
        if self.backoff_base < 0 or self.backoff_factor < 1:
            raise ConfigError(f"{self.category.value}: invalid backoff parameters")


@dataclass(frozen=True)
class RoutingTable:
    experts: Mapping[InteractionCategory, ExpertSpec]
    max_in_flight: int = 4

    def __post_init__(self):
        missing = [c.value for c in CATEGORIES if c not in self.experts]
        if missing:
            raise ConfigError(f"routing table has no expert for: {', '.join(missing)}")
        if len(self.experts) != len(CATEGORIES):
            raise ConfigError("routing table must hold exactly five experts")
        for category, spec in self.experts.items():
            if spec.category is not category:
                raise ConfigError(f"expert filed under {category.value} is for {spec.category.value}")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")

    def __getitem__(self, category) -> ExpertSpec:
        return self.experts[InteractionCategory(category)]

    def with_endpoint(self, endpoint: str) -> "RoutingTable":
        experts = {}
        for c, s in self.experts.items():
            experts[c] = ExpertSpec(
                c, endpoint, s.shot_count, s.instruction, s.timeout, s.max_retries,
                s.backoff_base, s.backoff_factor, s.mock,
            )
        return RoutingTable(experts, self.max_in_flight)


# -- mock experts -------------------------------------------------------------

def target_block(prompt: str) -> str:
    """The trailing, unanswered block of an assembled prompt."""
    i = prompt.rfind("Modality1: ")
    return prompt[i:] if i >= 0 else prompt


def mock_expert(prompt: str, behavior: Mapping[str, tuple[int, float]],
                default: tuple[int, float] | None = None) -> dict:
    """Answer with the first behaviour key contained in ``prompt``.

    The fallback is ``default`` if given, otherwise the ``"default"`` entry of
    ``behavior`` (which is never matched as a substring).
    """
    if default is None:
        if DEFAULT_KEY not in behavior:
            raise ValueError("mock behaviour needs a default entry")
        default = behavior[DEFAULT_KEY]
    for key, (label, confidence) in behavior.items():
        if key == DEFAULT_KEY:
            continue
        if key in prompt:
            return {"label": int(label), "confidence": float(confidence), "raw": f"matched {key!r}"}
    label, confidence = default
    return {"label": int(label), "confidence": float(confidence), "raw": "default"}


@dataclass(frozen=True)
class MockExpert:
    behavior: Mapping[str, tuple[int, float]]
    default: tuple[int, float] = (0, 0.0)
    # "prompt" searches the whole prompt, "target" only the unanswered block
    match: str = "prompt"

    def __post_init__(self):
        if self.match not in ("prompt", "target"):
            raise ConfigError(f"mock match must be 'prompt' or 'target', got {self.match!r}")

    def __call__(self, prompt: str) -> dict:
        text = target_block(prompt) if self.match == "target" else prompt
        return mock_expert(text, self.behavior, self.default)

    def to_dict(self) -> dict:
        return {
            "behavior": {k: [int(v[0]), float(v[1])] for k, v in self.behavior.items()},
            "default": [int(self.default[0]), float(self.default[1])],
            "match": self.match,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "MockExpert":
        behavior = {str(k): (int(v[0]), float(v[1])) for k, v in (obj.get("behavior") or {}).items()}
        default = obj.get("default", (0, 0.0))
        return cls(behavior, (int(default[0]), float(default[1])), obj.get("match", "prompt"))


def cue_mock(label_cardinality: int) -> MockExpert:
    """Mock that reads the ``cue for label k`` marker of synthetic payloads."""
    return MockExpert(
        {f"cue for label {k}": (k, MAX_CONFIDENCE) for k in range(label_cardinality)},
        default=(0, 0.0),
        match="target",
    )


# -- routing config -----------------------------------------------------------

def routing_table_from_dict(doc: Mapping) -> RoutingTable:
    if not isinstance(doc, Mapping) or "experts" not in doc:
        raise ConfigError("routing config must be an object with an 'experts' list")
    experts: dict[InteractionCategory, ExpertSpec] = {}
    for entry in doc["experts"]:
        try:
            category = InteractionCategory(entry["category"])
        except (KeyError, ValueError):
            raise ConfigError(f"bad expert category in {entry!r}") from None
        if category in experts:
            raise ConfigError(f"duplicate expert for {category.value}")
        mock = entry.get("mock")
        try:
            experts[category] = ExpertSpec(
                category=category,
                endpoint=str(entry.get("endpoint", MOCK_ENDPOINT)),
                shot_count=int(entry.get("shot_count", 0)),
                instruction=str(entry.get("instruction", "")),
                timeout=float(entry.get("timeout_s", 30.0)),
                max_retries=int(entry.get("max_retries", 3)),
                backoff_base=float(entry.get("backoff_base_s", 1.0)),
                backoff_factor=float(entry.get("backoff_factor", 2.0)),
                mock=MockExpert.from_dict(mock) if mock else None,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{category.value}: {exc}") from None
    return RoutingTable(experts, int(doc.get("max_in_flight", 4)))


def routing_table_to_dict(table: RoutingTable) -> dict:
    entries = []
    for c in CATEGORIES:
        s = table.experts[c]
        entry = {
            "category": c.value,
            "endpoint": s.endpoint,
            "shot_count": s.shot_count,
            "instruction": s.instruction,
            "timeout_s": s.timeout,
            "max_retries": s.max_retries,
            "backoff_base_s": s.backoff_base,
            "backoff_factor": s.backoff_factor,
        }
        if isinstance(s.mock, MockExpert):
            entry["mock"] = s.mock.to_dict()
        entries.append(entry)
    return {"max_in_flight": table.max_in_flight, "experts": entries}


def load_routing_config(path) -> RoutingTable:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read routing config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return routing_table_from_dict(doc)


def default_routing_table(*, shot_count: int = 0, max_in_flight: int = 4, instruction: str = "") -> RoutingTable:
    return RoutingTable(
        {c: ExpertSpec(c, MOCK_ENDPOINT, shot_count, instruction) for c in CATEGORIES},
        max_in_flight,
    )


# -- few-shot pools and prompts -------------------------------------------------

@dataclass(frozen=True)
class FewShotExample:
    payload: ModalityPayload
    gold_label: int
    source_id: str | None = None


@dataclass(frozen=True)
class FewShotPool:
    category: InteractionCategory
    examples: tuple[FewShotExample, ...] = ()

    def __len__(self):
        return len(self.examples)

    def without(self, record_id: str) -> "FewShotPool":
        kept = tuple(e for e in self.examples if e.source_id != record_id)
        return self if len(kept) == len(self.examples) else FewShotPool(self.category, kept)


def build_pools(labeled_records: Iterable[DataPointRecord], cfg: CategorizationConfig | None = None,
                shuffle_seed: int | None = None) -> dict[InteractionCategory, FewShotPool]:
    """Group labelled records into per-category few-shot pools.

    Pools keep input order unless ``shuffle_seed`` is given, in which case
    each pool is shuffled by its own seeded generator.
    """
    grouped: dict[InteractionCategory, list[FewShotExample]] = {c: [] for c in CATEGORIES}
    for record in labeled_records:
        if record.gold_label is None:
            raise ValueError(f"record {record.id!r} has no gold label and cannot seed a few-shot pool")
        grouped[categorize_record(record, cfg)].append(
            FewShotExample(record.payload, record.gold_label, record.id)
        )
    if shuffle_seed is not None:
        for i, c in enumerate(CATEGORIES):
            random.Random(shuffle_seed * 31 + i).shuffle(grouped[c])
    return {c: FewShotPool(c, tuple(grouped[c])) for c in CATEGORIES}


def _render(payload: ModalityPayload, answer: str) -> str:
    return f"Modality1: {payload.text1}\nModality2: {payload.text2}\nAnswer:{answer}"


def assemble_prompt(target: ModalityPayload, spec: ExpertSpec, pool: FewShotPool) -> str:
    if pool.category is not spec.category:
        raise ValueError(f"pool for {pool.category.value} given to the {spec.category.value} expert")
    blocks = [spec.instruction] if spec.instruction else []
    for example in pool.examples[: spec.shot_count]:
        blocks.append(_render(example.payload, f" {example.gold_label}"))
    blocks.append(_render(target, ""))
    return "\n\n".join(blocks)


# -- wire protocol ------------------------------------------------------------

@dataclass(frozen=True)
class ExpertPrediction:
    id: str
    predicted_label: int
    confidence: float
    raw_response: str
    expert_category: InteractionCategory
    attempts: int = 1


@dataclass(frozen=True)
class RoutingFailure:
    id: str
    expert_category: InteractionCategory
    error: str
    attempts: int


def request_body(prompt: str, label_cardinality: int) -> dict:
    return {"prompt": prompt, "label_cardinality": label_cardinality}


def parse_wire_response(body: str, label_cardinality: int) -> tuple[int, float, str]:
    """Decode a 200 response into (label, clamped confidence, raw text)."""
    try:
        obj = json.loads(body)
    except (json.JSONDecodeError, TypeError):
        raise ProtocolError("expert response is not JSON", raw=str(body)) from None
    if not isinstance(obj, dict):
        raise ProtocolError("expert response is not an object", raw=body)
    label = obj.get("label")
    if isinstance(label, bool) or not isinstance(label, int):
        raise ProtocolError(f"expert label {label!r} is not an integer", raw=body)
    if not 0 <= label < label_cardinality:
        raise ProtocolError(f"expert label {label} outside [0, {label_cardinality})", raw=body)
    confidence = obj.get("confidence")
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)) or not math.isfinite(confidence):
        raise ProtocolError(f"expert confidence {confidence!r} is not a finite number", raw=body)
    raw = obj.get("raw", "")
    if not isinstance(raw, str):
        raw = json.dumps(raw)
    return label, min(max(float(confidence), 0.0), MAX_CONFIDENCE), raw


def http_transport(endpoint: str, body: Mapping, timeout: float) -> tuple[int, str]:
    data = json.dumps(body).encode("utf-8")
    req = urllib.request.Request(
        endpoint, data=data, method="POST", headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read().decode("utf-8", errors="replace")
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read().decode("utf-8", errors="replace")
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(str(getattr(exc, "reason", exc))) from None


# -- dispatch -----------------------------------------------------------------

def scrambled(category: InteractionCategory) -> InteractionCategory:
    """The next category in report order; deliberately wrong routing for tests."""
    return CATEGORIES[(CATEGORIES.index(category) + 1) % len(CATEGORIES)]


class ExpertRouter:
    """Sends datapoints to experts with retries and bounded parallelism."""

    def __init__(self, table: RoutingTable, pools: Mapping[InteractionCategory, FewShotPool] | None = None,
                 *, transport: Callable[[str, Mapping, float], tuple[int, str]] = http_transport,
                 sleep: Callable[[float], None] = time.sleep, seed: int | None = None,
                 exclude_self: bool = True):
        self.table = table
        self.pools = pools if pools is not None else {c: FewShotPool(c) for c in CATEGORIES}
        self.transport = transport
        self.sleep = sleep
        self.exclude_self = exclude_self
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()

    def _backoff(self, spec: ExpertSpec, retry_index: int) -> float:
        cap = spec.backoff_base * spec.backoff_factor ** retry_index
        with self._rng_lock:
            return self._rng.uniform(0, cap)

    def _send(self, spec: ExpertSpec, body: dict) -> tuple[int, str]:
        if spec.endpoint == MOCK_ENDPOINT:
            expert = spec.mock or cue_mock(body["label_cardinality"])
            return 200, json.dumps(expert(body["prompt"]))
        return self.transport(spec.endpoint, body, spec.timeout)

    def prompt_for(self, record: DataPointRecord, category: InteractionCategory) -> str:
        spec = self.table[category]
        pool = self.pools.get(category, FewShotPool(category))
        if self.exclude_self:
            pool = pool.without(record.id)
        return assemble_prompt(record.payload, spec, pool)

    def dispatch(self, record: DataPointRecord, category: InteractionCategory) -> ExpertPrediction:
        category = InteractionCategory(category)
        spec = self.table[category]
        k = record.label_cardinality
        body = request_body(self.prompt_for(record, category), k)
        last_error = "no attempt made"
        for attempt in range(spec.max_retries + 1):
            try:
                status, text = self._send(spec, body)
            except TransportError as exc:
                last_error = f"transport failure: {exc}"
            else:
                if status == 200:
                    try:
                        label, confidence, raw = parse_wire_response(text, k)
                    except ProtocolError as exc:
                        raise ProtocolError(
                            f"record {record.id!r} ({category.value}): {exc}",
                            raw=exc.raw, record_id=record.id, category=category, attempts=attempt + 1,
                        ) from None
                    return ExpertPrediction(record.id, label, confidence, raw, category, attempt + 1)
                last_error = f"HTTP {status}"
            if attempt < spec.max_retries:
                delay = self._backoff(spec, attempt)
                log.debug("retrying %s after %s (%.3fs)", record.id, last_error, delay)
                self.sleep(delay)
        attempts = spec.max_retries + 1
        raise RoutingError(
            f"record {record.id!r} ({category.value}): giving up after {attempts} attempts: {last_error}",
            record_id=record.id, category=category, attempts=attempts,
        )

    def route(self, records: Sequence[DataPointRecord], cfg: CategorizationConfig | None = None,
              *, fail_fast: bool = False, scramble: bool = False) -> list[ExpertPrediction | RoutingFailure]:
        """Dispatch every record; results come back in input order."""
        records = list(records)
        targets = []
        for record in records:
            category = categorize_record(record, cfg)
            targets.append(scrambled(category) if scramble else category)
        results: list[ExpertPrediction | RoutingFailure | None] = [None] * len(records)

        def work(i):
            try:
                results[i] = self.dispatch(records[i], targets[i])
            except RoutingError as exc:
                if fail_fast:
                    raise
                results[i] = RoutingFailure(records[i].id, targets[i], str(exc), exc.attempts)

        with ThreadPoolExecutor(max_workers=self.table.max_in_flight) as pool:
            futures = [pool.submit(work, i) for i in range(len(records))]
            done, _ = wait(futures, return_when=FIRST_EXCEPTION)
            for f in futures:
                if f in done and f.exception() is not None:
                    for g in futures:
                        g.cancel()
                    raise f.exception()
        return results


def dispatch(record: DataPointRecord, category: InteractionCategory, table: RoutingTable,
             pools: Mapping[InteractionCategory, FewShotPool] | None = None, **kwargs) -> ExpertPrediction:
    return ExpertRouter(table, pools, **kwargs).dispatch(record, category)


def route_dataset(records: Sequence[DataPointRecord], cfg: CategorizationConfig | None, table: RoutingTable,
                  pools: Mapping[InteractionCategory, FewShotPool] | None = None, *, fail_fast: bool = False,
                  scramble: bool = False, **kwargs) -> list[ExpertPrediction | RoutingFailure]:
    return ExpertRouter(table, pools, **kwargs).route(records, cfg, fail_fast=fail_fast, scramble=scramble)


# -- prediction files ---------------------------------------------------------

def result_to_dict(result: ExpertPrediction | RoutingFailure, **extra) -> dict:
    if isinstance(result, ExpertPrediction):
        out = {
            "id": result.id,
            "label": result.predicted_label,
            "confidence": result.confidence,
            "raw": result.raw_response,
            "expert_category": result.expert_category.value,
            "attempts": result.attempts,
        }
    else:
        out = {
            "id": result.id,
            "error": result.error,
            "expert_category": result.expert_category.value,
            "attempts": result.attempts,
        }
    out.update({k: (v.value if isinstance(v, InteractionCategory) else v) for k, v in extra.items()})
    return out


def result_from_dict(obj: Mapping) -> ExpertPrediction | RoutingFailure:
    category = InteractionCategory(obj["expert_category"])
    if "error" in obj:
        return RoutingFailure(obj["id"], category, obj["error"], int(obj["attempts"]))
    return ExpertPrediction(
        obj["id"], int(obj["label"]), float(obj["confidence"]), obj.get("raw", ""),
        category, int(obj.get("attempts", 1)),
    )


@dataclass
class PredictionFile:
    metadata: dict
    results: list[ExpertPrediction | RoutingFailure]
    # per-id extras carried on each line when the router knew them
    categories: dict[str, InteractionCategory]
    gold_labels: dict[str, int]

    @property
    def predictions(self) -> list[ExpertPrediction]:
        return [r for r in self.results if isinstance(r, ExpertPrediction)]

    @property
    def failures(self) -> list[RoutingFailure]:
        return [r for r in self.results if isinstance(r, RoutingFailure)]


def write_predictions(stream, results: Sequence[ExpertPrediction | RoutingFailure],
                      records: Sequence[DataPointRecord] | None = None,
                      categories: Sequence[InteractionCategory] | None = None,
                      metadata: Mapping | None = None) -> None:
    """One line per result, preceded by a ``#`` metadata header line."""
    stream.write("# " + json.dumps(dict(metadata or {}), sort_keys=True) + "\n")
    for i, result in enumerate(results):
        extra = {}
        if categories is not None:
            extra["category"] = categories[i]
        if records is not None and records[i].gold_label is not None:
            extra["gold_label"] = records[i].gold_label
        stream.write(json.dumps(result_to_dict(result, **extra), ensure_ascii=False) + "\n")


def read_predictions(lines: Iterable[str]) -> PredictionFile:
    metadata: dict = {}
    results = []
    categories: dict[str, InteractionCategory] = {}
    gold: dict[str, int] = {}
    for lineno, line in enumerate(lines, 1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            if not results and not metadata:
                try:
                    metadata = json.loads(text[1:])
                except json.JSONDecodeError:
                    metadata = {}
            continue
        try:
            obj = json.loads(text)
            result = result_from_dict(obj)
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetParseError(f"bad prediction line: {exc}", line=lineno) from None
        if "category" in obj:
            categories[result.id] = InteractionCategory(obj["category"])
        if obj.get("gold_label") is not None:
            gold[result.id] = int(obj["gold_label"])
        results.append(result)
    return PredictionFile(metadata, results, categories, gold)


# -- loopback mock server -----------------------------------------------------

class MockExpertServer:
    """Serve an in-process expert over HTTP on the loopback interface.

    ``failures`` makes the first N requests answer 503, to exercise retries.
    """

    def __init__(self, expert: Callable[[str], Mapping], *, host: str = "127.0.0.1", port: int = 0,
                 failures: int = 0):
        self.expert = expert
        self.requests = 0
        self._failures = failures
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                with outer._lock:
                    outer.requests += 1
                    fail = outer.requests <= outer._failures
                if fail:
                    self._reply(503, {"error": "unavailable"})
                    return
                try:
                    body = json.loads(self.rfile.read(length))
                    answer = outer.expert(body["prompt"])
                except (json.JSONDecodeError, KeyError, TypeError):
                    self._reply(400, {"error": "bad request"})
                    return
                self._reply(200, dict(answer))

            def _reply(self, status, obj):
                data = json.dumps(obj).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()
