"""Exit criteria for the toolkit, one test per criterion.

Each test logs a PASS/FAIL line that is repeated in the terminal summary.
"""

import contextlib
import io
import json
import time
from pathlib import Path

import numpy as np

from mmoe.cli import main, read_partition, write_partition
from mmoe.evaluation import (
    CategoryReport,
    EvaluationReport,
    OverallReport,
    compare_runs,
    confusion,
    per_category_report,
    prf1,
    binary_counts,
    read_report,
    report_from_lines,
    report_to_lines,
)
from mmoe.ingest import parse_lines, serialize_dataset
from mmoe.interaction import (
    CATEGORIES,
    CategorizationConfig,
    InteractionCategory as IC,
    PairwiseDistances,
    categorize,
    categorize_record,
    pairwise_distances,
    partition_dataset,
    rus_scores,
)
from mmoe.routing import (
    ExpertPrediction,
    ExpertSpec,
    RoutingFailure,
    RoutingTable,
    read_predictions,
    route_dataset,
    write_predictions,
)
from mmoe.synth import PlantedSpec, generate_planted, oracle_categorize

from conftest import ACCEPTANCE_RESULTS, make_record

DATA = Path(__file__).parent / "data"
CFG = CategorizationConfig(0.5, 0.5)
TOL = 1e-9


@contextlib.contextmanager
def criterion(name):
    detail = {"text": ""}
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE_RESULTS.append((name, False, f"{type(exc).__name__}: {exc}"[:200]))
        print(f"FAIL  {name}")
        raise
    ACCEPTANCE_RESULTS.append((name, True, detail["text"]))
    print(f"PASS  {name}  {detail['text']}")


def random_records(n, seed, cardinalities=(2, 3, 5, 10)):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = cardinalities[i % len(cardinalities)]
        out.append(make_record(f"q{i}", *(rng.dirichlet(np.ones(k)) for _ in range(3))))
    return out


def boundary_records():
    """Dyadic grids where distances land exactly on 0.5 thresholds, plus
    constructed ties."""
    out = []
    grid2 = [(i / 8, 1 - i / 8) for i in range(9)]
    for a in grid2:
        for b in grid2:
            for c in grid2:
                out.append((a, b, c))
    grid3 = [(i / 4, j / 4, 1 - i / 4 - j / 4) for i in range(5) for j in range(5 - i)]
    for a in grid3:
        for b in grid3:
            for c in grid3[::3]:
                out.append((a, b, c))
    return [make_record(f"b{i}", *t) for i, t in enumerate(out)]


def test_ac1_rus_identities():
    with criterion("AC1 RUS identity suite (10,000 triples, |Y| in {2,3,5,10}, tol 1e-9, < 5 s)") as d:
        start = time.perf_counter()
        records = random_records(10_000, seed=101)
        worst = 0.0
        for r in records:
            dist = pairwise_distances(r.delta1, r.delta2, r.delta_m)
            s = rus_scores(dist)
            worst = max(worst, abs(s.unique1 + s.unique2 - 2 * dist.d12), abs(s.redundancy + s.synergy + dist.d12))
            assert abs(s.unique1 + s.unique2 - 2 * dist.d12) <= TOL
            assert abs(s.redundancy + s.synergy + dist.d12) <= TOL
            assert s.unique1 >= -TOL and s.unique2 >= -TOL
            assert s.redundancy <= TOL and s.synergy >= 0
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0
        d["text"] = f"max identity residual {worst:.1e}, {elapsed:.2f} s"


def test_ac2_partition_totality():
    with criterion("AC2 partition totality on random and boundary inputs") as d:
        records = random_records(10_000, seed=202) + boundary_records()
        hits = {"d12=gamma": 0, "d1m=d2m": 0, "dm=tau": 0}
        for r in records:
            dist = pairwise_distances(r.delta1, r.delta2, r.delta_m)
            hits["d12=gamma"] += dist.d12 == CFG.gamma
            hits["d1m=d2m"] += dist.d1m == dist.d2m
            hits["dm=tau"] += CFG.tau in (dist.d1m, dist.d2m)
            assert categorize(dist, CFG) in CATEGORIES
        constructed = [PairwiseDistances(a, b, c) for a in (0.0, 0.5, 1.0, 2.0)
                       for b in (0.0, 0.5, 1.0) for c in (0.0, 0.5, 1.0)]
        for dist in constructed:
            assert categorize(dist, CFG) in CATEGORIES
        assert all(v > 0 for v in hits.values())
        groups = {}
        for r in records:
            groups.setdefault((r.label_cardinality, r.id[0]), []).append(r)
        for group in groups.values():
            by_id = {}
            for c, ids in partition_dataset(group, CFG).items():
                for i in ids:
                    assert i not in by_id
                    by_id[i] = c
            assert set(by_id) == {r.id for r in group}
        d["text"] = f"{len(records)} records; exact boundary hits {hits}"


def test_ac3_oracle_equivalence():
    with criterion("AC3 oracle equivalence (10,000 random + planted margin >= 0.05), 100%") as d:
        records = random_records(10_000, seed=303) + boundary_records()
        planted = []
        for k in (2, 3, 5, 10):
            for margin in (0.05, 0.1, 0.2):
                planted += [r for r, _ in generate_planted(
                    [PlantedSpec(c, 20, margin, seed=k * 100 + int(margin * 100)) for c in CATEGORIES], CFG, k)]
        mismatches = sum(oracle_categorize(r, CFG) is not categorize_record(r, CFG) for r in records + planted)
        assert mismatches == 0
        d["text"] = f"{len(records) + len(planted)} records, 0 mismatches"


def _run_cli(*argv):
    return main([str(a) for a in argv])


def test_ac4_planted_recovery(tmp_path):
    with criterion("AC4 planted-category recovery (200/category, margin 0.1), 100%") as d:
        data = tmp_path / "planted.jsonl"
        assert _run_cli("synth", "--per-category", 200, "--margin", 0.1, "--seed", 4, "--gamma", 0.5,
                        "--tau", 0.5, "-o", data) == 0
        assert _run_cli("categorize", data, "--gamma", 0.5, "--tau", 0.5, "--scores", tmp_path / "s.jsonl",
                        "--partition", tmp_path / "p.jsonl") == 0
        planted = {}
        for line in data.read_text().splitlines():
            obj = json.loads(line)
            planted[obj["id"]] = IC(obj["planted"])
        partition = read_partition(tmp_path / "p.jsonl")
        correct = sum(planted[i] is c for c, ids in partition.items() for i in ids)
        assert len(planted) == 1000 and correct == 1000
        d["text"] = f"{correct}/1000 recovered"


def test_ac5_metric_fixture():
    with criterion("AC5 prf1 on committed fixture (P 0.75, R 0.6, F1 0.6667 +/- 1e-4) and zero denominators") as d:
        rows = [json.loads(l) for l in (DATA / "prf1_fixture.jsonl").read_text().splitlines()]
        records = [make_record(r["id"], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], label=r["gold"]) for r in rows]
        preds = [ExpertPrediction(r["id"], r["pred"], 3.0, "", IC.AGREEMENT_REDUNDANCY) for r in rows]
        c = confusion(preds, records, positive_label=1)
        assert (c.tp, c.fp, c.fn) == (3, 1, 2)
        p, r, f = prf1(c)
        assert abs(p - 0.75) <= 1e-4 and abs(r - 0.6) <= 1e-4 and abs(f - 0.6667) <= 1e-4
        assert prf1(binary_counts(0, 0, 5)) == (0, 0, 0)
        assert prf1(binary_counts(0, 3, 0)) == (0, 0, 0)
        assert prf1(binary_counts(0, 0, 0)) == (0, 0, 0)
        d["text"] = f"P={p:.4f} R={r:.4f} F1={f:.4f}"


def _report(f1s):
    per = {c: CategoryReport(c, 10, f, f, f, 3.0) for c, f in zip(CATEGORIES, f1s)}
    return EvaluationReport(OverallReport(50, 0.5, 0.5, 0.5, 3.0), per)


def test_ac6_improvement_formula():
    with criterion("AC6 improvement formula (47.05 -> 57.78 = +22.81% +/- 0.01 pp)") as d:
        single = _report([0.8598, 0.1875, 0.6919, 0.5423, 0.4705])
        expert = _report([0.8533, 0.3030, 0.6919, 0.5352, 0.5778])
        rows = {r.category: r for r in compare_runs(single, expert)}
        ds = rows[IC.DISAGREEMENT_SYNERGY]
        assert abs(ds.improvement - 22.81) <= 0.01 and ds.improvement_text == "+22.81%"
        agr = rows[IC.AGREEMENT_SYNERGY]
        assert agr.improvement_text == "+61.60%"
        assert rows[IC.DISAGREEMENT_UNIQUE1].improvement_text == "+0.00%"
        d["text"] = f"D&S {ds.improvement_text}, A&S {agr.improvement_text}"


def _e2e(tmp_path, scramble):
    data, routing = tmp_path / "d.jsonl", tmp_path / "routing.json"
    assert _run_cli("synth", "--per-category", 40, "--seed", 7, "-o", data, "--mock-routing", routing,
                    "--off-category-accuracy", 0.5) == 0
    assert _run_cli("categorize", data, "--scores", tmp_path / "scores.jsonl", "--partition", tmp_path / "p.jsonl") == 0
    argv = ["route", tmp_path / "scores.jsonl", "--routing", routing, "--seed", 7, "-o", tmp_path / "preds.jsonl"]
    if scramble:
        argv.append("--scramble-routing")
    assert _run_cli(*argv) == 0
    with contextlib.redirect_stdout(io.StringIO()):
        assert _run_cli("evaluate", tmp_path / "preds.jsonl", "--dataset", data, "--partition", tmp_path / "p.jsonl",
                        "-o", tmp_path / "report") == 0
    return (tmp_path / "preds.jsonl").read_bytes(), read_report(tmp_path / "report" / "report.jsonl")


def test_ac7_end_to_end(tmp_path):
    with criterion("AC7 offline end-to-end: F1 = 1.0 per category, < 1.0 scrambled, deterministic, < 30 s") as d:
        start = time.perf_counter()
        with contextlib.redirect_stderr(io.StringIO()):
            preds_a, good = _e2e(tmp_path / "a", scramble=False)
            preds_b, again = _e2e(tmp_path / "b", scramble=False)
            _, bad = _e2e(tmp_path / "c", scramble=True)
        elapsed = time.perf_counter() - start
        assert all(good.per_category[c].f1 == 1.0 for c in CATEGORIES)
        assert all(good.per_category[c].example_count == 40 for c in CATEGORIES)
        assert all(bad.per_category[c].f1 < 1.0 for c in CATEGORIES)
        assert preds_a == preds_b and good == again
        assert elapsed < 30
        worst = max(bad.per_category[c].f1 for c in CATEGORIES)
        d["text"] = f"scrambled max per-category F1 {worst:.3f}, {elapsed:.1f} s"


class CountingMock:
    def __init__(self):
        import threading

        self.lock = threading.Lock()
        self.active = 0
        self.peak = 0

    def __call__(self, prompt):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.0005)
        with self.lock:
            self.active -= 1
        return {"label": 1, "confidence": 2.5, "raw": prompt[-20:]}


def test_ac8_concurrency_contract():
    with criterion("AC8 max_in_flight = 4: peak <= 4 and input order kept over 20 runs") as d:
        records = random_records(200, seed=808, cardinalities=(2,))
        peaks = []
        for _ in range(20):
            mock = CountingMock()
            table = RoutingTable({c: ExpertSpec(c, "mock", mock=mock) for c in CATEGORIES}, max_in_flight=4)
            out = route_dataset(records, CFG, table)
            assert [p.id for p in out] == [r.id for r in records]
            assert mock.peak <= 4
            peaks.append(mock.peak)
        d["text"] = f"observed peaks {min(peaks)}..{max(peaks)}"


def _close(a, b):
    if isinstance(a, float) or isinstance(b, float):
        return abs(a - b) <= 1e-12
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_close(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_close(x, y) for x, y in zip(a, b))
    return a == b


def test_ac9_round_trips(tmp_path):
    with criterion("AC9 dataset/partition/prediction/report round trips within 1e-12") as d:
        pairs = generate_planted([PlantedSpec(c, 20, 0.1, 9) for c in CATEGORIES], CFG, 3)
        records = [r for r, _ in pairs] + random_records(50, seed=909, cardinalities=(3,))
        text = serialize_dataset(records)
        again = parse_lines(text.splitlines())
        assert _close([json.loads(l) for l in text.splitlines()],
                      [json.loads(l) for l in serialize_dataset(again).splitlines()])

        partition = partition_dataset(records, CFG)
        buf = io.StringIO()
        write_partition(partition, buf)
        (tmp_path / "p.jsonl").write_text(buf.getvalue())
        assert read_partition(tmp_path / "p.jsonl") == partition

        labelled = [r for r, _ in pairs]
        results = route_dataset(labelled, CFG, RoutingTable({c: ExpertSpec(c) for c in CATEGORIES}))
        results[3] = RoutingFailure(results[3].id, results[3].expert_category, "boom", 2)
        buf = io.StringIO()
        write_predictions(buf, results, labelled, [categorize_record(r, CFG) for r in labelled], {"seed": 1})
        pf = read_predictions(buf.getvalue().splitlines())
        assert pf.results == results

        ok = [r for r in results if isinstance(r, ExpertPrediction)]
        part = {c: [i for i in ids if i in {p.id for p in ok}] for c, ids in partition_dataset(labelled, CFG).items()}
        report = per_category_report(ok, labelled, part, metadata={"gamma": 0.5, "timestamp": None})
        lines = [json.loads(json.dumps(x)) for x in report_to_lines(report)]
        assert report_from_lines(lines) == report
        d["text"] = f"{len(records)} records, {len(results)} predictions"
