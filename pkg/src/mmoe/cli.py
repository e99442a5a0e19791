"""Command-line entry point: ``mmoe synth | categorize | route | evaluate | summarize``.

Exit codes: 0 success, 1 usage or configuration error, 2 data validation
error, 3 routing failure in ``--fail-fast`` mode.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, DataValidationError, EvaluationError, GenerationError, RoutingError
from .evaluation import (
    aggregate_reports,
    compare_runs,
    comparison_to_lines,
    per_category_report,
    read_report,
    render_comparison,
    render_report,
    write_report,
)
from .ingest import parse_dataset, parse_lines, record_to_dict, summarize
from .interaction import (
    CATEGORIES,
    CategorizationConfig,
    InteractionCategory,
    Strategy,
    assess_record,
    empty_partition,
    partition_counts,
)
from .routing import (
    ExpertRouter,
    ExpertSpec,
    RoutingTable,
    build_pools,
    default_routing_table,
    load_routing_config,
    read_predictions,
    routing_table_to_dict,
    write_predictions,
)
from .synth import PlantedSpec, generate_planted, planted_mock_experts

log = logging.getLogger("mmoe")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ROUTING = 0, 1, 2, 3


@dataclass
class RunConfig:
    gamma: float = 0.5
    tau: float = 0.5
    strategy: str = "threshold"
    routing: str | None = None
    dataset: str | None = None
    pools: str | None = None
    output: str | None = None
    seed: int = 0
    repeat: int = 1
    format: str = "probs"
    temperature: float = 1.0
    max_in_flight: int | None = None

    @property
    def categorization(self) -> CategorizationConfig:
        try:
            return CategorizationConfig(self.gamma, self.tau, Strategy(self.strategy))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags override the config file, which overrides defaults."""
    cfg = RunConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {args.config}: {exc}") from None
        known = {f.name for f in fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {', '.join(sorted(unknown))}")
        for key, value in doc.items():
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_categorization(p):
    p.add_argument("--gamma", type=float, help="agreement threshold on d(delta_1, delta_2) (default 0.5)")
    p.add_argument("--tau", type=float, help="closeness threshold on d(delta_i, delta_m) (default 0.5)")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])


def _add_ingest(p):
    p.add_argument("--format", choices=["probs", "logits"])
    p.add_argument("--temperature", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmoe", description="Multimodal interaction categorisation and expert routing.")
    parser.add_argument("--config", help="run config file (JSON)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a dataset with planted interaction categories")
    p.add_argument("--per-category", type=int, default=40)
    p.add_argument("--count", action="append", default=[], metavar="CATEGORY=N",
                   help="override the record count of one category")
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    p.add_argument("--labels", type=int, default=2, help="label cardinality")
    p.add_argument("-o", "--output")
    p.add_argument("--mock-routing", help="also write a routing config with planted mock experts")
    p.add_argument("--off-category-accuracy", type=float, default=0.5)
    p.add_argument("--shot-count", type=int, default=0)
    _add_categorization(p)

    p = sub.add_parser("categorize", help="score and categorise every record")
    p.add_argument("dataset", nargs="?", help="dataset file, '-' for stdin")
    p.add_argument("--scores", default="-", help="per-record score file (default stdout)")
    p.add_argument("--partition", help="partition file to write")
    _add_categorization(p)
    _add_ingest(p)

    p = sub.add_parser("route", help="send every record to its category's expert")
    p.add_argument("dataset", nargs="?", help="dataset file, '-' for stdin")
    p.add_argument("--pools", help="labelled dataset for few-shot pools (default: the input dataset)")
    p.add_argument("--routing", help="routing config file")
    p.add_argument("--mock", action="store_true", help="force every expert onto the in-process mock")
    p.add_argument("--max-in-flight", type=int, dest="max_in_flight")
    p.add_argument("--fail-fast", action="store_true")
    p.add_argument("--scramble-routing", action="store_true",
                   help="test hook: send each record to the next category's expert")
    p.add_argument("--shuffle-seed", type=int, help="shuffle few-shot pools with this seed")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeat", type=int)
    p.add_argument("--timestamp", help="run timestamp to record ('now' for the current UTC time)")
    p.add_argument("-o", "--output")
    _add_categorization(p)
    _add_ingest(p)

    p = sub.add_parser("evaluate", help="precision/recall/F1 per interaction category")
    p.add_argument("predictions", nargs="+",
                   help="prediction files ('-' for stdin); several files are treated as repeats")
    p.add_argument("--dataset", help="dataset with gold labels (default: labels carried by the predictions)")
    p.add_argument("--partition", help="partition file (default: categories carried by the predictions)")
    p.add_argument("--positive-label", default="1", help="positive class, or 'macro'")
    p.add_argument("--compare", help="baseline report to compute the improvement column against")
    p.add_argument("--skip-failed", action="store_true", help="drop records whose routing failed")
    p.add_argument("--timestamp")
    p.add_argument("-o", "--output", help="directory for report.jsonl and report.txt")
    _add_categorization(p)
    _add_ingest(p)

    p = sub.add_parser("summarize", help="dataset summary statistics")
    p.add_argument("dataset", nargs="?")
    _add_ingest(p)
    return parser


@contextlib.contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _load_records(path, cfg: RunConfig):
    path = path or cfg.dataset or "-"
    try:
        if path == "-":
            return parse_lines(sys.stdin, cfg.format, cfg.temperature, source="<stdin>")
        return parse_dataset(path, cfg.format, cfg.temperature)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from None


def _timestamp(value):
    if value == "now":
        return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return value


def _metadata(cfg: RunConfig, **extra):
    meta = {"gamma": cfg.gamma, "tau": cfg.tau, "strategy": cfg.strategy, "seed": cfg.seed}
    meta.update({k: v for k, v in extra.items() if v is not None})
    return meta


# -- partition files ----------------------------------------------------------

def write_partition(partition, stream) -> None:
    for category in CATEGORIES:
        ids = list(partition.get(category, ()))
        stream.write(json.dumps({"category": category.value, "count": len(ids), "ids": ids}) + "\n")


def read_partition(path) -> dict[InteractionCategory, list[str]]:
    partition = empty_partition()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                partition[InteractionCategory(obj["category"])] = [str(i) for i in obj["ids"]]
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataValidationError(f"{path}:{lineno}: bad partition line: {exc}") from None
    return partition


def score_line(record, assessment) -> dict:
    s, d = assessment.scores, assessment.distances
    out = {"id": record.id, "d12": d.d12, "d1m": d.d1m, "d2m": d.d2m,
           "R": s.redundancy, "U1": s.unique1, "U2": s.unique2, "S": s.synergy,
           "category": assessment.category.value}
    # carry the record along so the score stream is itself a valid dataset
    out.update({k: v for k, v in record_to_dict(record).items() if k != "id"})
    return out


def _summary_text(counts) -> str:
    width = max(len(c.title) for c in CATEGORIES)
    lines = [f"{c.title.ljust(width)}  {counts[c]:>6d}" for c in CATEGORIES]
    lines.append(f"{'Total'.ljust(width)}  {sum(counts.values()):>6d}")
    return "\n".join(lines)


# -- commands -----------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    counts = {c: args.per_category for c in CATEGORIES}
    for item in args.count:
        name, _, n = item.partition("=")
        try:
            counts[InteractionCategory(name)] = int(n)
        except ValueError:
            raise ConfigError(f"bad --count {item!r}; expected CATEGORY=N") from None
    specs = [PlantedSpec(c, counts[c], args.margin, cfg.seed) for c in CATEGORIES]
    planted = generate_planted(specs, cfg.categorization, args.labels)
    with _open_out(args.output or cfg.output) as out:
        for record, category in planted:
            out.write(json.dumps({**record_to_dict(record), "planted": category.value}) + "\n")
    if args.mock_routing:
        mocks = planted_mock_experts(planted, seed=cfg.seed, off_category_accuracy=args.off_category_accuracy)
        table = RoutingTable(
            {c: ExpertSpec(c, "mock", args.shot_count, mock=mocks[c]) for c in CATEGORIES},
            cfg.max_in_flight or 4,
        )
        with _open_out(args.mock_routing) as out:
            json.dump(routing_table_to_dict(table), out, indent=1)
            out.write("\n")
    return EXIT_OK


def cmd_categorize(args, cfg: RunConfig) -> int:
    records = _load_records(args.dataset, cfg)
    cat_cfg = cfg.categorization
    partition = empty_partition()
    with _open_out(args.scores) as out:
        for record in records:
            a = assess_record(record, cat_cfg)
            partition[a.category].append(record.id)
            out.write(json.dumps(score_line(record, a), ensure_ascii=False) + "\n")
    if args.partition:
        with _open_out(args.partition) as out:
            write_partition(partition, out)
    print(_summary_text(partition_counts(partition)), file=sys.stderr)
    return EXIT_OK


def _routing_table(args, cfg: RunConfig) -> RoutingTable:
    if cfg.routing:
        table = load_routing_config(cfg.routing)
    elif args.mock:
        table = default_routing_table()
    else:
        raise ConfigError("route needs --routing (or --mock for offline experts)")
    if args.mock:
        table = table.with_endpoint("mock")
    if cfg.max_in_flight is not None:
        table = RoutingTable(table.experts, cfg.max_in_flight)
    return table


def _repeat_path(path, i, n):
    if n == 1:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}.run{i + 1}{p.suffix}"))


def cmd_route(args, cfg: RunConfig) -> int:
    table = _routing_table(args, cfg)
    records = _load_records(args.dataset, cfg)
    cat_cfg = cfg.categorization
    pool_records = parse_dataset(cfg.pools, cfg.format, cfg.temperature) if cfg.pools else records
    pool_records = [r for r in pool_records if r.gold_label is not None]
    n = cfg.repeat
    if n < 1:
        raise ConfigError("--repeat must be >= 1")
    output = args.output or cfg.output
    if n > 1 and output in (None, "-"):
        raise ConfigError("--repeat > 1 needs an --output file")
    categories = [assess_record(r, cat_cfg).category for r in records]
    k = records[0].label_cardinality if records else None
    for i in range(n):
        seed = cfg.seed + i
        shuffle = None if args.shuffle_seed is None else args.shuffle_seed + i
        pools = build_pools(pool_records, cat_cfg, shuffle_seed=shuffle)
        router = ExpertRouter(table, pools, seed=seed)
        try:
            results = router.route(records, cat_cfg, fail_fast=args.fail_fast, scramble=args.scramble_routing)
        except RoutingError as exc:
            print(f"mmoe: routing failed: {exc}", file=sys.stderr)
            return EXIT_ROUTING
        meta = _metadata(cfg, seed=seed, label_cardinality=k, max_in_flight=table.max_in_flight,
                         scrambled=args.scramble_routing or None, shuffle_seed=shuffle,
                         timestamp=_timestamp(args.timestamp))
        with _open_out(_repeat_path(output, i, n) if output else None) as out:
            write_predictions(out, results, records, categories, meta)
        failed = sum(1 for r in results if not hasattr(r, "predicted_label"))
        if failed:
            print(f"mmoe: {failed} record(s) failed routing", file=sys.stderr)
    return EXIT_OK


@dataclass(frozen=True)
class _Gold:
    id: str
    gold_label: int
    label_cardinality: int


def cmd_evaluate(args, cfg: RunConfig) -> int:
    positive = None if args.positive_label == "macro" else int(args.positive_label)
    dataset = _load_records(args.dataset, cfg) if (args.dataset or cfg.dataset) else None
    reports = []
    for path in args.predictions:
        try:
            if path == "-":
                pf = read_predictions(sys.stdin)
            else:
                with open(path, encoding="utf-8") as fh:
                    pf = read_predictions(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read predictions {path}: {exc}") from None
        if pf.failures and not args.skip_failed:
            raise EvaluationError(
                f"{path}: {len(pf.failures)} record(s) failed routing; rerun or pass --skip-failed"
            )
        preds = pf.predictions
        kept = {p.id for p in preds}
        k = pf.metadata.get("label_cardinality")
        if dataset is not None:
            records = dataset
        else:
            missing = [p.id for p in preds if p.id not in pf.gold_labels]
            if missing:
                raise EvaluationError(f"{path}: no gold label for {missing[:3]}; pass --dataset")
            k = k or 2
            records = [_Gold(i, g, k) for i, g in pf.gold_labels.items()]
        if args.partition:
            partition = read_partition(args.partition)
        elif pf.categories:
            partition = empty_partition()
            for p in pf.results:
                partition[pf.categories[p.id]].append(p.id)
        elif dataset is not None:
            partition = empty_partition()
            for r in dataset:
                partition[assess_record(r, cfg.categorization).category].append(r.id)
        else:
            raise EvaluationError("no partition available; pass --partition or --dataset")
        if args.skip_failed:
            partition = {c: [i for i in ids if i in kept] for c, ids in partition.items()}
        meta = dict(pf.metadata)
        if args.timestamp:
            meta["timestamp"] = _timestamp(args.timestamp)
        reports.append(per_category_report(preds, records, partition, positive, meta, label_cardinality=k))
    report = reports[0] if len(reports) == 1 else aggregate_reports(reports)
    text = render_report(report)
    comparison = None
    if args.compare:
        try:
            baseline = read_report(args.compare)
        except OSError as exc:
            raise ConfigError(f"cannot read baseline report {args.compare}: {exc}") from None
        comparison = compare_runs(baseline, report)
        text += "\n\n" + render_comparison(comparison)
    output = args.output or cfg.output
    if output:
        out_dir = Path(output)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report(report, out_dir / "report.jsonl")
        (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
        if comparison is not None:
            with open(out_dir / "comparison.jsonl", "w", encoding="utf-8") as fh:
                for obj in comparison_to_lines(comparison):
                    fh.write(json.dumps(obj) + "\n")
    print(text)
    return EXIT_OK


def cmd_summarize(args, cfg: RunConfig) -> int:
    summary = summarize(_load_records(args.dataset, cfg))
    print(json.dumps(summary.to_dict(), indent=1))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "categorize": cmd_categorize,
    "route": cmd_route,
    "evaluate": cmd_evaluate,
    "summarize": cmd_summarize,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, GenerationError) as exc:
        print(f"mmoe: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataValidationError as exc:
        print(f"mmoe: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RoutingError as exc:
        print(f"mmoe: {exc}", file=sys.stderr)
        return EXIT_ROUTING


if __name__ == "__main__":
    sys.exit(main())
