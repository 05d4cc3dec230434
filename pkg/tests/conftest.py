import pytest

from corodb import Engine, Mode, encode_key
from corodb.sched import COMMITTED, BatchState


def key(i):
    return encode_key(i)


def val(i, gen=0):
    return b"v%d.%d" % (i, gen)


def load(engine, table, n, chunk=500):
    for lo in range(0, n, chunk):
        def body(tx, lo=lo):
            for i in range(lo, min(n, lo + chunk)):
                yield from tx.insert(table, key(i), val(i))
        engine.execute(body)


@pytest.fixture
def engine():
    return Engine(checks=True)


@pytest.fixture
def table(engine):
    t = engine.create_table("t")
    load(engine, t, 200)
    return t


def batch(engine, size=2, mode=Mode.TWO_LEVEL):
    """Hand-driven batch for scripted interleavings."""
    return BatchState(engine.new_worker(size, mode))


def drive(b, schedule):
    """Resume slots in ``schedule`` order (skipping finished ones), then
    finish everything that is left in slot order."""
    for slot in schedule:
        if not b.tasks[slot].done:
            b.resume(slot)
    while not all(t.done for t in b.tasks[:b.admitted]):
        for t in b.tasks[:b.admitted]:
            if not t.done:
                b.resume(t.slot)


def audit(engine, committed):
    """Compare every worker's sink with the write sets captured at commit.

    Returns the list of discrepancies (empty when the log is exact)."""
    problems = []
    logged = {}
    for w in engine.workers:
        recs = w.sink.records()
        pos = 0
        for ext in w.sink.extents:
            chunk = recs[pos:pos + ext.records]
            pos += ext.records
            if any(r.commit_ts != ext.commit_ts for r in chunk):
                problems.append(("stamp", ext))
            if ext.commit_ts in logged:
                problems.append(("duplicate", ext.commit_ts))
            logged[ext.commit_ts] = sorted((r.table, r.rid, r.kind, r.payload) for r in chunk)
        if pos != len(recs):
            problems.append(("trailing", w.worker_id))
    if set(logged) != set(committed):
        problems.append(("commit set", set(logged) ^ set(committed)))
    for ts, writes in committed.items():
        if logged.get(ts) != sorted(writes):
            problems.append(("writes", ts))
    return problems


def capture(committed):
    def on_complete(task):
        ctx = task.ctx
        if task.outcome == COMMITTED and ctx.commit_ts is not None:
            writes = []
            for (table, rid, version), rec in zip(ctx.write_set, ctx.log.records):
                assert version.stamp == ctx.commit_ts
                writes.append((table.table_id, rid, rec[0], version.payload))
            committed[ctx.commit_ts] = writes
    return on_complete


def extents(worker):
    recs = worker.sink.records()
    pos = 0
    for ext in worker.sink.extents:
        for rec in recs[pos:pos + ext.records]:
            yield ext, rec
        pos += ext.records


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE = []


def verdict(number, title, ok, detail, gate="hard"):
    """Record one acceptance criterion outcome for the terminal summary."""
    status = "PASS" if ok else "FAIL"
    tag = "" if gate == "hard" else " [report-only]"
    line = f"criterion {number}{tag}: {status} {title}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
