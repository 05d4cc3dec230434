import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from corodb.bench.report import CSV_HEADER, RunReport, emit_report


def sample(**kw):
    base = dict(mode="two-level", workers=1, batch_size=8, theta=0.5, records=1000,
                ops_per_txn=10, throughput_tps=1234.5, mean_latency_us=10.25,
                p99_latency_us=40.0, abort_rate=0.1, resumes=100, suspensions=90,
                committed=9, aborted=1, attempted=10, mix={"read": 1.0},
                scheduler={"batches": 2}, epoch={"enters": 2})
    base.update(kw)
    return RunReport(**base)


def test_csv_header_is_fixed():
    assert CSV_HEADER == ("mode,workers,batch_size,theta,records,ops_per_txn,throughput_tps,"
                          "mean_latency_us,p99_latency_us,abort_rate,resumes,suspensions")
    out = emit_report([sample(), sample(mode="seq", batch_size=1)], "csv").decode()
    rows = list(csv.reader(io.StringIO(out)))
    assert ",".join(rows[0]) == CSV_HEADER
    assert rows[1][:3] == ["two-level", "1", "8"] and rows[2][0] == "seq"


def test_text_has_mode_and_batch_size():
    text = emit_report(sample(), "text").decode()
    assert "two-level" in text and "batch size     8" in text


@given(st.floats(0, 1e9, allow_nan=False), st.integers(0, 10**9), st.text(max_size=10))
def test_json_round_trip(tps, n, label):
    r = sample(throughput_tps=tps, resumes=n, mode=label)
    back = RunReport.from_dict(json.loads(emit_report(r, "json")))
    assert back == r


def test_serialization_is_deterministic():
    r = sample()
    for fmt in ("text", "csv", "json"):
        assert emit_report(r, fmt) == emit_report(sample(), fmt)
    with pytest.raises(ValueError):
        emit_report(r, "xml")
