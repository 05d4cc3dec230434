import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import audit, capture, extents, key, load
from corodb import Engine, Mode, Scheduler, SchedulerConfig
from corodb.wal import (LogBuffer, LogKind, LogRecord, LogSink, decode_records,
                        encode_record, seal, sink_path)

records = st.lists(st.builds(LogRecord, st.sampled_from(list(LogKind)),
                             st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1),
                             st.integers(0, 2**64 - 1), st.binary(max_size=64)), max_size=20)


@given(records)
def test_codec_round_trip(recs):
    data = b"".join(encode_record(r.kind, r.table, r.rid, r.commit_ts, r.payload) for r in recs)
    assert decode_records(data) == recs


def test_record_layout_is_fixed():
    raw = encode_record(LogKind.UPDATE, 1, 2, 3, b"ab")
    assert len(raw) == 4 + 25 + 2
    assert raw[:4] == (27).to_bytes(4, "little")
    assert raw[4] == 2
    assert raw[5:13] == (1).to_bytes(8, "little")
    assert raw[-2:] == b"ab"


def test_truncated_input_is_rejected():
    raw = encode_record(LogKind.INSERT, 1, 2, 3, b"abc")
    for cut in (3, 10, len(raw) - 1):
        with pytest.raises(ValueError):
            decode_records(raw[:cut])


def test_seal_stamps_in_append_order_and_only_once():
    buf = LogBuffer()
    sink = LogSink(0)
    buf.append(LogKind.INSERT, 1, 10, b"a")
    pos = buf.append(LogKind.UPDATE, 1, 11, b"b")
    buf.replace(pos, LogKind.DELETE, b"")
    ext = seal(buf, 42, sink)
    assert ext.records == 2 and ext.offset == 0 and ext.length == len(sink)
    assert sink.records() == [LogRecord(LogKind.INSERT, 1, 10, 42, b"a"),
                              LogRecord(LogKind.DELETE, 1, 11, 42, b"")]
    with pytest.raises(ValueError):
        seal(buf, 43, sink)


def test_file_sink_matches_memory(tmp_path):
    engine = Engine(log_dir=str(tmp_path))
    t = engine.create_table("t")
    w = engine.new_worker(1)

    def body(tx):
        yield from tx.insert(t, key(1), b"x")
    engine.execute(body, worker=w)
    w.sink.close()
    path = sink_path(str(tmp_path), w.worker_id)
    assert os.path.basename(path) == f"log-worker-{w.worker_id}.bin"
    with open(path, "rb") as f:
        assert f.read() == bytes(w.sink.data)


@pytest.mark.parametrize("mode", [Mode.TWO_LEVEL, Mode.FULLY_NESTED])
def test_log_audit_after_mixed_run(mode):
    import random
    engine = Engine(checks=True)
    t = engine.create_table("t")
    load(engine, t, 300)
    rng = random.Random(5)
    committed = {}

    def make(n):
        ops = [(rng.choice("ruudi"), rng.randrange(320)) for _ in range(6)]

        def body(tx):
            for op, i in ops:
                if op == "r":
                    yield from tx.read(t, key(i))
                elif op == "u":
                    yield from tx.update(t, key(i), b"u%d" % n)
                elif op == "d":
                    yield from tx.delete(t, key(i))
                else:
                    yield from tx.insert(t, key(i), b"i%d" % n)
        return body
    Scheduler(engine, SchedulerConfig(8, mode)).run(
        [make(n) for n in range(2000)], on_complete=capture(committed))
    assert committed
    # loads ran through engine.execute on another worker; include them
    loaded = {}
    for ext, rec in extents(engine.workers[0]):
        loaded.setdefault(ext.commit_ts, []).append((rec.table, rec.rid, rec.kind, rec.payload))
    assert audit(engine, {**loaded, **committed}) == []
