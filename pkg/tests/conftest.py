import pytest

from mmoe.ingest import DataPointRecord, ModalityPayload
from mmoe.interaction import LabelDistribution

ACCEPTANCE_RESULTS = []


def make_record(rid, d1, d2, dm, label=None, text1="", text2=""):
    return DataPointRecord(
        rid,
        LabelDistribution(tuple(d1)),
        LabelDistribution(tuple(d2)),
        LabelDistribution(tuple(dm)),
        gold_label=label,
        payload=ModalityPayload(text1, text2),
    )


@pytest.fixture
def example_records():
    """The three worked categorisation examples: redundancy, agreement
    synergy and modality-1 uniqueness."""
    return [
        make_record("r1", [0.9, 0.1], [0.85, 0.15], [0.88, 0.12], label=0, text1="a", text2="b"),
        make_record("r2", [0.9, 0.1], [0.8, 0.2], [0.2, 0.8], label=1, text1="c", text2="d"),
        make_record("r3", [0.9, 0.1], [0.2, 0.8], [0.85, 0.15], label=0, text1="e", text2="f"),
    ]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
