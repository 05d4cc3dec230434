"""YCSB-style workload driver."""

import hashlib
import logging
import os
import random
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import ResourceError, UsageError
from ..index import encode_key
from ..sched import ABORTED, RunStats, Scheduler, SchedulerConfig
from ..suspend import Mode
from ..txn import Engine
from .report import RunReport
from .zipf import ZipfianGenerator

log = logging.getLogger(__name__)

OPS = ("read", "update", "rmw", "scan", "insert")
TABLE = "ycsb_main"
LOAD_BATCH = 1000
# rough per-record footprint of a loaded record in this engine
RECORD_OVERHEAD = 260


def parse_mix(text):
    """``"read=0.8,rmw=0.2"`` -> ``{"read": 0.8, "rmw": 0.2}``."""
    mix = {}
    for part in text.split(","):
        if not part.strip():
            continue
        name, _, frac = part.partition("=")
        name = name.strip()
        if name not in OPS:
            raise UsageError(f"unknown operation {name!r} in mix; expected one of {OPS}")
        mix[name] = float(frac)
    return mix


@dataclass
class WorkloadSpec:
    records: int = 1_000_000
    key_len: int = 8
    val_len: int = 8
    ops_per_txn: int = 10
    mix: dict = field(default_factory=lambda: {"read": 1.0})
    scan_len: int = 100
    theta: float = 0.0
    api: str = "single"
    duration: float = 5.0
    workers: int = 1
    mode: Mode = Mode.TWO_LEVEL
    batch_size: int = 8
    seed: int = 0
    txns: int = 0  # per-worker transaction budget; 0 means run for ``duration``
    retries: int = 0
    verify: bool = False
    log_dir: str = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.validate()

    def validate(self):
        if self.records < 1:
            raise UsageError("records must be positive")
        if self.ops_per_txn < 1:
            raise UsageError("ops per transaction must be positive")
        if any(k not in OPS for k in self.mix):
            raise UsageError(f"mix operations must be among {OPS}")
        if any(v < 0 for v in self.mix.values()) or abs(sum(self.mix.values()) - 1.0) > 1e-9:
            raise UsageError(f"mix fractions must be non-negative and sum to 1, got {self.mix}")
        if not 0 <= self.theta < 1:
            raise UsageError("theta must be in [0, 1)")
        if self.api not in ("single", "multi-get"):
            raise UsageError("api must be 'single' or 'multi-get'")
        if self.workers < 1 or self.batch_size < 1:
            raise UsageError("workers and batch size must be positive")
        if self.records > 256 ** self.key_len:
            raise UsageError(f"{self.records} records do not fit in {self.key_len}-byte keys")
        if self.txns <= 0 and self.duration <= 0:
            raise UsageError("need a positive duration or transaction budget")

    def op_counts(self):
        """Apportion ``ops_per_txn`` across the mix by largest remainder."""
        quotas = {k: v * self.ops_per_txn for k, v in self.mix.items() if v > 0}
        counts = {k: int(q) for k, q in quotas.items()}
        short = self.ops_per_txn - sum(counts.values())
        for k in sorted(quotas, key=lambda k: (counts[k] - quotas[k], k))[:short]:
            counts[k] += 1
        return counts


def load_database(spec: WorkloadSpec, engine=None):
    """Create and populate the workload table through committed inserts."""
    need = spec.records * (spec.key_len + spec.val_len + RECORD_OVERHEAD)
    try:
        avail = os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError):
        avail = None
    if avail is not None and need > 0.8 * avail:
        raise ResourceError(
            f"loading {spec.records} records needs about {need >> 20} MiB but only "
            f"{avail >> 20} MiB is free; lower --records")
    engine = engine or Engine(log_dir=spec.log_dir)
    table = engine.create_table(TABLE)
    rng = random.Random(spec.seed)
    vlen, klen = spec.val_len, spec.key_len

    def load(lo, hi):
        def body(tx):
            for i in range(lo, hi):
                yield from tx.insert(table, encode_key(i, klen), rng.randbytes(vlen))
        return body

    for lo in range(0, spec.records, LOAD_BATCH):
        engine.execute(load(lo, min(spec.records, lo + LOAD_BATCH)))
    n = len(table.index)
    if n != spec.records:
        raise RuntimeError(f"index holds {n} entries after loading {spec.records}")
    log.info("loaded %d records, index depth %d", n, table.index.depth())
    return engine, table


class _TxnFactory:
    """Deterministic per-worker stream of transaction bodies."""

    def __init__(self, spec, table, worker_index):
        self.spec = spec
        self.table = table
        seed = spec.seed * 1_000_003 + worker_index
        self.rng = random.Random(seed)
        self.keys = ZipfianGenerator(spec.records, spec.theta, seed=seed)
        self.plan = [op for op, n in sorted(spec.op_counts().items()) for _ in range(n)]
        self.worker_index = worker_index
        self.inserted = 0

    def _insert_key(self):
        spec = self.spec
        i = spec.records + self.inserted * spec.workers + self.worker_index
        self.inserted += 1
        return encode_key(i, spec.key_len)

    def make(self):
        spec, rng, table = self.spec, self.rng, self.table
        klen, vlen = spec.key_len, spec.val_len
        plan = self.plan[:]
        rng.shuffle(plan)
        ops = []
        for op in plan:
            if op == "insert":
                ops.append((op, self._insert_key(), rng.randbytes(vlen)))
            elif op in ("update", "rmw"):
                ops.append((op, encode_key(self.keys.next(), klen), rng.randbytes(vlen)))
            else:
                ops.append((op, encode_key(self.keys.next(), klen), None))
        return _make_body(table, ops, spec.api == "multi-get", spec.scan_len, spec.verify)


def _make_body(table, ops, multi_get, scan_len, verify):
    def body(tx):
        out = []
        prefetched = None
        if multi_get:
            read_keys = [key for op, key, _ in ops if op == "read"]
            if read_keys:
                prefetched = iter((yield from tx.multi_get(table, read_keys)))
        for op, key, arg in ops:
            if op == "read":
                if prefetched is not None:
                    value = next(prefetched)
                else:
                    value = yield from tx.read(table, key)
                out.append(value)
            elif op == "update":
                yield from tx.update(table, key, arg)
            elif op == "rmw":
                value = yield from tx.read(table, key)
                out.append(value)
                yield from tx.update(table, key, arg)
            elif op == "scan":
                rows = yield from tx.scan(table, key, scan_len)
                out.append(rows if verify else len(rows))
            else:
                yield from tx.insert(table, key, arg)
        return out if verify else None
    return body


def _pin_current_thread(cpu):
    if os.environ.get("CORODB_NUMA_PIN", "0") != "1" or not hasattr(os, "sched_setaffinity"):
        return
    cpus = sorted(os.sched_getaffinity(0))
    try:
        os.sched_setaffinity(threading.get_native_id(), {cpus[cpu % len(cpus)]})
    except OSError as exc:
        log.warning("could not pin worker to cpu %d: %s", cpu, exc)


def run_workload(engine: Engine, spec: WorkloadSpec, table=None, results=None) -> RunReport:
    """Run ``spec`` on ``engine`` with one scheduler per worker.

    In verify mode, pass a list as ``results`` to receive one list per
    worker of per-transaction outcomes in admission order.
    """
    table = table or engine.table(TABLE)
    config = SchedulerConfig(spec.batch_size, spec.mode)
    stop = threading.Event()
    before = engine.counters()
    epoch_before = engine.epochs.stats
    if results is None:
        results = []
    results[:] = [[] for _ in range(spec.workers)]
    stats = [None] * spec.workers
    failures = []

    def work(w):
        try:
            _pin_current_thread(w)
            factory = _TxnFactory(spec, table, w)
            retry_q = deque()
            attempts = {}

            def source():
                made = 0
                while not stop.is_set():
                    if retry_q:
                        yield retry_q.popleft()
                    elif spec.txns and made >= spec.txns:
                        return
                    else:
                        made += 1
                        yield factory.make()

            def done(task):
                if spec.verify:
                    results[w].append(task.result if task.outcome != ABORTED else task.reason)
                if task.outcome == ABORTED and spec.retries:
                    n = attempts.pop(id(task.body), 0)
                    if n < spec.retries:
                        attempts[id(task.body)] = n + 1
                        retry_q.append(task.body)

            sched = Scheduler(engine, config)
            stats[w] = sched.run(source(), stop, done)
        except BaseException as exc:  # surfaced in the report, never swallowed
            failures.append(exc)
            stop.set()

    timer = None
    if spec.duration > 0:
        timer = threading.Timer(spec.duration, stop.set)
        timer.daemon = True
        timer.start()
    try:
        if spec.workers == 1:
            work(0)
        else:
            threads = [threading.Thread(target=work, args=(w,), name=f"worker-{w}")
                       for w in range(spec.workers)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    finally:
        if timer is not None:
            timer.cancel()
    if failures:
        raise failures[0]

    total = RunStats()
    for s in stats:
        total.merge(s)
    after = engine.counters()
    epoch_after = engine.epochs.stats
    lat = np.asarray(total.latencies) * 1e6
    attempted = total.commits + total.aborts
    digest = ""
    if spec.verify:
        h = hashlib.sha256()
        for per_worker in results:
            for item in per_worker:
                h.update(repr(item).encode())
        digest = h.hexdigest()
    wall = total.wall_time or 1e-9
    return RunReport(
        mode=spec.mode.value,
        workers=spec.workers,
        batch_size=spec.batch_size,
        theta=spec.theta,
        records=spec.records,
        ops_per_txn=spec.ops_per_txn,
        throughput_tps=total.commits / wall,
        mean_latency_us=float(lat.mean()) if lat.size else 0.0,
        p99_latency_us=float(np.percentile(lat, 99)) if lat.size else 0.0,
        abort_rate=total.aborts / attempted if attempted else 0.0,
        resumes=total.resumes,
        suspensions=total.suspensions,
        committed=total.commits,
        aborted=total.aborts,
        attempted=attempted,
        duration_s=wall,
        api=spec.api,
        mix=dict(spec.mix),
        scheduler=total.summary(),
        epoch={k: getattr(epoch_after, k) - getattr(epoch_before, k)
               for k in ("enters", "exits", "epochs_advanced", "retired", "reclaimed",
                         "bytes_retired", "bytes_reclaimed")}
        | {"max_residency": epoch_after.max_residency,
           "enters_per_txn": ((epoch_after.enters - epoch_before.enters) / attempted)
           if attempted else 0.0},
        engine={"commits": after.commits - before.commits,
                "aborts": after.aborts - before.aborts,
                "aborts_by_reason": {k: v - before.aborts_by_reason.get(k, 0)
                                     for k, v in after.aborts_by_reason.items()},
                "committed_writes": after.committed_writes - before.committed_writes,
                "prefetch_hints": after.prefetch_hints - before.prefetch_hints},
        verify_digest=digest,
    )
