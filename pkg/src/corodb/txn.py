"""Snapshot-isolation transactions over the storage layer and index.

Every record access is a suspendable operation. In the flattened modes the
index descent and the version-chain walk are inlined into one generator per
engine call, so a suspension reaches the scheduler in a single hop. In
fully-nested mode the same work is split across nested coroutines (index
search -> node probe, chain walk -> version fetch) composed with
:func:`~corodb.suspend.nested`.

Timestamps: commits advance the global counter by two and stamp the new
(even) value; a transaction begins at the current value plus one. A version
is visible when its commit stamp is below the begin timestamp, so every
commit that finished before ``begin`` is visible and no commit stamp can
equal a begin stamp.
"""

import threading
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

from .epoch import DEFAULT_ADVANCE_BYTES, EpochManager
from .errors import TransactionAborted, UsageError
from .storage import RECLAIMED, Catalog, Owner, Version, reclaim_version
from .suspend import Mode, check_suspend, enter_task, in_task, leave_task, nested
from .wal import LogBuffer, LogKind, LogSink, seal, sink_path

VERSION_OVERHEAD = 64
SCRATCH_BYTES = 4096


class TxnState(Enum):
    IDLE = "idle"
    ACTIVE = "active"
    COMMITTED = "committed"
    ABORTED = "aborted"


IDLE, ACTIVE, COMMITTED, ABORTED = TxnState


class GlobalClock:
    def __init__(self):
        self.value = 0
        self._lock = threading.Lock()

    def begin_stamp(self):
        return self.value + 1

    def commit_stamp(self):
        with self._lock:
            self.value += 2
            return self.value


@dataclass
class WorkerCounters:
    commits: int = 0
    aborts: int = 0
    aborts_by_reason: dict = field(default_factory=dict)
    read_only_commits: int = 0
    committed_writes: int = 0
    prefetch_hints: int = 0
    multi_get_switches: int = 0
    use_after_reclaim: int = 0

    def merge(self, other):
        self.commits += other.commits
        self.aborts += other.aborts
        for k, v in other.aborts_by_reason.items():
            self.aborts_by_reason[k] = self.aborts_by_reason.get(k, 0) + v
        self.read_only_commits += other.read_only_commits
        self.committed_writes += other.committed_writes
        self.prefetch_hints += other.prefetch_hints
        self.multi_get_switches += other.multi_get_switches
        self.use_after_reclaim += other.use_after_reclaim
        return self

    def as_dict(self):
        return asdict(self)


def _fetch(version):
    # innermost nested coroutine of a chain walk
    yield 1
    return version


def _owner_stamp(owner):
    """Commit timestamp of another transaction's owner mark, or None."""
    while owner.committing and owner.commit_ts is None and not owner.aborted:
        # another thread is between drawing its timestamp and publishing it
        time.sleep(0)
    return owner.commit_ts


class TransactionContext:
    """Slot-local transaction state, reused by every transaction of a slot.

    Also the engine facade applications program against: ``read``,
    ``update``, ``insert``, ``delete``, ``scan`` and ``multi_get`` are
    suspendable (compose with ``yield from``); ``commit`` and ``abort``
    are plain calls.
    """

    def __init__(self, worker, slot):
        self.worker = worker
        self.engine = worker.engine
        self.slot = slot
        self.begin_ts = 0
        self.commit_ts = None
        self.state = IDLE
        self.owner = None
        self.write_set = []
        self._ws_pos = {}
        self.read_set = []
        self.log = LogBuffer()
        self.scratch = bytearray(SCRATCH_BYTES)
        self.counters = worker.counters
        mode = worker.mode
        self.suspend = mode.suspends
        self.prefetch = mode.prefetches
        self.nested = mode.nested
        self.checks = worker.engine.checks

    def __repr__(self):
        return f"Txn(w{self.worker.worker_id}/s{self.slot}, {self.state.value}, begin={self.begin_ts})"

    # -- lifecycle ----------------------------------------------------------

    def _begin(self, seq):
        if self.state is ACTIVE:
            raise UsageError(f"slot {self.slot} still runs an active transaction")
        self.write_set.clear()
        self._ws_pos.clear()
        self.read_set.clear()
        self.log.reset()
        self.commit_ts = None
        self.owner = Owner(self.worker.worker_id, self.slot, seq)
        self.begin_ts = self.engine.clock.begin_stamp()
        self.state = ACTIVE
        return self

    def _check_active(self):
        if self.state is not ACTIVE:
            raise UsageError(f"transaction is {self.state.value}")
        if self.checks and not in_task():
            raise UsageError("engine operations must run inside a transaction task")

    def commit(self):
        """Commit and return the commit timestamp (None if read-only)."""
        if self.state is not ACTIVE:
            raise UsageError(f"cannot commit a {self.state.value} transaction")
        counters = self.counters
        if not self.write_set:
            self.state = COMMITTED
            counters.commits += 1
            counters.read_only_commits += 1
            return None
        owner = self.owner
        owner.committing = True
        ts = self.engine.clock.commit_stamp()
        if ts <= self.begin_ts:
            raise AssertionError(f"commit stamp {ts} not after begin stamp {self.begin_ts}")
        seal(self.log, ts, self.worker.sink)
        owner.commit_ts = ts
        for _table, _rid, version in self.write_set:
            version.stamp = ts
        self.commit_ts = ts
        self.state = COMMITTED
        counters.commits += 1
        counters.committed_writes += len(self.write_set)
        return ts

    def abort(self, reason="user"):
        if self.state is not ACTIVE:
            raise UsageError(f"cannot abort a {self.state.value} transaction")
        self._rollback()
        counters = self.counters
        counters.aborts += 1
        counters.aborts_by_reason[reason] = counters.aborts_by_reason.get(reason, 0) + 1

    def _rollback(self):
        self.owner.aborted = True
        epochs = self.engine.epochs
        wid = self.worker.worker_id
        for table, rid, version in reversed(self.write_set):
            if not table.cas(rid, version, version.next):
                raise AssertionError(f"lost ownership of rid {rid} in {table.name}")
            epochs.retire(wid, version, reclaim_version, len(version.payload) + VERSION_OVERHEAD)
        self.write_set.clear()
        self._ws_pos.clear()
        self.log.reset()
        self.state = ABORTED

    def _fail(self, reason, detail=""):
        self.abort(reason)
        raise TransactionAborted(reason, detail)

    # -- visibility -----------------------------------------------------------

    def _visible(self, version):
        s = version.stamp
        if s.__class__ is int:
            return s < self.begin_ts
        if s is self.owner:
            return True
        if self.checks and s is RECLAIMED:
            self.counters.use_after_reclaim += 1
        ts = _owner_stamp(s)
        return ts is not None and ts < self.begin_ts

    def _result(self, version):
        if version is None:
            return None
        if self.checks:
            s = version.stamp
            if s.__class__ is not int and s is not self.owner and s.commit_ts is None:
                raise AssertionError(f"dirty read of {version!r}")
        if version.tombstone:
            return None
        return version.payload

    def _chain_find(self, table, rid):
        # fully-nested chain walk: one nested fetch per version
        v = table.head(rid)
        while v is not None:
            v = yield from nested(_fetch(v))
            if self._visible(v):
                return v
            v = v.next
        return None

    # -- point reads ------------------------------------------------------------

    def read(self, table, key):
        """Visible value of ``key`` in ``table``, or None."""
        self._check_active()
        if self.nested:
            return (yield from self._read_nested(table, key))
        return (yield from self._read_flat(table, key, self.suspend))

    def _read_flat(self, table, key, suspend):
        idx = table.index
        hints = 0
        nxt, rid, _ = idx.step(idx.root, key)
        while nxt is not None:
            hints += 1
            if suspend:
                yield 1
            nxt, rid, _ = idx.step(nxt, key)
        if rid is None:
            if self.prefetch:
                self.counters.prefetch_hints += hints
            return None
        self.read_set.append((table.table_id, rid))
        begin = self.begin_ts
        owner = self.owner
        v = table.head(rid)
        while v is not None:
            hints += 1
            if suspend:
                yield 1
            s = v.stamp
            if s.__class__ is int:
                if s < begin:
                    break
            elif s is owner or self._visible(v):
                break
            v = v.next
        if self.prefetch:
            self.counters.prefetch_hints += hints
        return self._result(v)

    def _read_nested(self, table, key):
        rid = yield from nested(table.index.search_nested(key))
        if rid is None:
            return None
        self.read_set.append((table.table_id, rid))
        v = yield from nested(self._chain_find(table, rid))
        return self._result(v)

    # -- writes --------------------------------------------------------------------

    def update(self, table, key, value):
        """Install a new version of an existing, visible record."""
        self._check_active()
        yield from self._write(table, key, bytes(value), False)

    def delete(self, table, key):
        """Install a tombstone over an existing, visible record."""
        self._check_active()
        yield from self._write(table, key, b"", True)

    def _write(self, table, key, value, tombstone):
        idx = table.index
        if self.nested:
            rid = yield from nested(idx.search_nested(key))
            if rid is None:
                self._fail("not-found", repr(key))
            yield from nested(_fetch(None))
        else:
            suspend = self.suspend
            hints = 1
            nxt, rid, _ = idx.step(idx.root, key)
            while nxt is not None:
                hints += 1
                if suspend:
                    yield 1
                nxt, rid, _ = idx.step(nxt, key)
            if rid is None:
                self._fail("not-found", repr(key))
            if suspend:
                yield 1
            if self.prefetch:
                self.counters.prefetch_hints += hints
        self._install(table, rid, value, tombstone)

    def _install(self, table, rid, value, tombstone):
        head = table.head(rid)
        if head is None:
            self._fail("not-found", f"rid {rid}")
        s = head.stamp
        if s is self.owner:
            if head.tombstone:
                self._fail("not-found", f"rid {rid} deleted by this transaction")
            self._replace_own(table, rid, head, value, tombstone)
            return
        ts = s if s.__class__ is int else _owner_stamp(s)
        if ts is None or ts >= self.begin_ts:
            self._fail("conflict", f"rid {rid} in {table.name}")
        if head.tombstone:
            self._fail("not-found", f"rid {rid} is deleted")
        new = Version(self.owner, head, value, tombstone)
        if not table.cas(rid, head, new):
            self._fail("conflict", f"lost install race on rid {rid}")
        self._record(table, rid, new, LogKind.DELETE if tombstone else LogKind.UPDATE)

    def _record(self, table, rid, version, kind):
        self._ws_pos[(table.table_id, rid)] = len(self.write_set)
        self.write_set.append((table, rid, version))
        self.log.append(kind, table.table_id, rid, version.payload)

    def _replace_own(self, table, rid, head, value, tombstone):
        # one owner version per record per transaction: swap it in place
        new = Version(self.owner, head.next, value, tombstone)
        if not table.cas(rid, head, new):
            raise AssertionError(f"lost ownership of rid {rid}")
        pos = self._ws_pos[(table.table_id, rid)]
        self.write_set[pos] = (table, rid, new)
        kind = self.log.records[pos][0]
        if tombstone:
            kind = LogKind.DELETE
        elif kind == LogKind.DELETE:
            kind = LogKind.UPDATE
        self.log.replace(pos, kind, value)
        self.engine.epochs.retire(self.worker.worker_id, head, reclaim_version,
                                  len(head.payload) + VERSION_OVERHEAD)

    def insert(self, table, key, value):
        """Insert a new record; aborts with ``duplicate`` if ``key`` exists."""
        self._check_active()
        value = bytes(value)
        rid = table.allocate_rid()
        version = Version(self.owner, None, value)
        table.cas(rid, None, version)
        self._record(table, rid, version, LogKind.INSERT)
        idx = table.index
        if self.nested:
            existing = yield from nested(idx.insert_or_get_nested(key, rid))
        else:
            suspend = self.suspend
            path = []
            node = idx.root
            nxt, _, _ = idx.step(node, key)
            while nxt is not None:
                if nxt.level != node.level:
                    path.append(node)
                if suspend:
                    yield 1
                node = nxt
                nxt, _, _ = idx.step(node, key)
            existing = idx.insert_at(node, key, rid, path)
        if existing is not None:
            self._insert_over(table, existing, rid, version, value)

    def _insert_over(self, table, existing, rid, version, value):
        # The key already maps to ``existing``. Drop the unreachable fresh
        # version, then reuse the old RID if its record is absent.
        table.cas(rid, version, None)
        self.write_set.pop()
        del self._ws_pos[(table.table_id, rid)]
        self.log.records.pop()
        head = table.head(existing)
        if head is None:
            new = Version(self.owner, None, value)
            if not table.cas(existing, None, new):
                self._fail("duplicate", "concurrent insert")
            self._record(table, existing, new, LogKind.INSERT)
            return
        s = head.stamp
        if s is self.owner:
            if not head.tombstone:
                self._fail("duplicate", f"rid {existing}")
            self._replace_own(table, existing, head, value, False)
            return
        ts = s if s.__class__ is int else _owner_stamp(s)
        if not head.tombstone or ts is None or ts >= self.begin_ts:
            self._fail("duplicate", f"rid {existing}")
        new = Version(self.owner, head, value)
        if not table.cas(existing, head, new):
            self._fail("duplicate", "concurrent insert")
        self._record(table, existing, new, LogKind.INSERT)

    # -- range and multi-key reads ------------------------------------------------

    def scan(self, table, start, count):
        """Up to ``count`` visible (key, value) pairs with key >= start."""
        self._check_active()
        if count < 1:
            raise UsageError("scan count must be positive")
        if self.nested:
            return (yield from self._scan_nested(table, start, count))
        return (yield from self._scan_flat(table, start, count))

    def _scan_flat(self, table, start, count):
        suspend = self.suspend
        idx = table.index
        node = idx.root
        nxt, _, _ = idx.step(node, start)
        while nxt is not None:
            if suspend:
                yield 1
            node = nxt
            nxt, _, _ = idx.step(node, start)
        out = []
        lo, inclusive = start, True
        while True:
            keys, rids, _ = idx.collect(node, lo, inclusive)
            for key, rid in zip(keys, rids):
                self.read_set.append((table.table_id, rid))
                v = table.head(rid)
                while v is not None:
                    if suspend:
                        yield 1
                    if self._visible(v):
                        break
                    v = v.next
                value = self._result(v)
                if value is not None:
                    out.append((key, value))
                    if len(out) == count:
                        return out
            if keys:
                lo, inclusive = keys[-1], False
            node = node.right
            if node is None:
                return out
            if suspend:
                yield 1

    def _scan_nested(self, table, start, count):
        idx = table.index
        out = []
        lo = start
        while True:
            need = count - len(out)
            pairs = yield from nested(idx.scan_nested(lo, need))
            for key, rid in pairs:
                self.read_set.append((table.table_id, rid))
                v = yield from nested(self._chain_find(table, rid))
                value = self._result(v)
                if value is not None:
                    out.append((key, value))
            if len(out) == count or len(pairs) < need:
                return out
            lo = pairs[-1][0] + b"\x00"

    def multi_get(self, table, keys):
        """Read ``keys`` by interleaving their lookups inside this transaction.

        Never suspends to the outer scheduler; values come back positionally.
        """
        self._check_active()
        if not keys:
            raise UsageError("multi_get needs at least one key")
        if self.nested:
            ops = [self._read_nested(table, k) for k in keys]
        else:
            ops = [self._read_flat(table, k, self.prefetch) for k in keys]
        results = [None] * len(ops)
        pending = range(len(ops))
        switches = 0
        while pending:
            alive = []
            for i in pending:
                try:
                    ops[i].send(None)
                except StopIteration as stop:
                    results[i] = stop.value
                else:
                    alive.append(i)
                    switches += 1
            pending = alive
        self.counters.multi_get_switches += switches
        return results
        yield  # a suspendable operation that never suspends

    # -- explicit suspension -----------------------------------------------------------

    def suspension_point(self, hint=None):
        """Application-level suspension point, honoring the worker's mode."""
        if self.checks:
            check_suspend()
        if self.prefetch:
            self.counters.prefetch_hints += 1
        if self.suspend:
            yield 1


class Worker:
    """Per-worker resources: slot-indexed contexts and the log sink."""

    def __init__(self, engine, worker_id, batch_size, mode, log_dir=None):
        if batch_size < 1:
            raise UsageError("batch_size must be at least 1")
        self.engine = engine
        self.worker_id = worker_id
        self.batch_size = batch_size
        self.mode = Mode(mode)
        self.counters = WorkerCounters()
        self.sink = LogSink(worker_id, sink_path(log_dir, worker_id) if log_dir else None)
        self.contexts = [TransactionContext(self, slot) for slot in range(batch_size)]
        self._seq = 0
        engine.epochs.register(worker_id)

    def __repr__(self):
        return f"Worker({self.worker_id}, batch={self.batch_size}, mode={self.mode.value})"

    def begin(self, slot) -> TransactionContext:
        if not 0 <= slot < self.batch_size:
            raise UsageError(f"slot {slot} outside batch of {self.batch_size}")
        self._seq += 1
        return self.contexts[slot]._begin(self._seq)


class Engine:
    def __init__(self, *, checks=False, advance_bytes=DEFAULT_ADVANCE_BYTES, log_dir=None):
        self.checks = checks
        self.log_dir = log_dir
        self.catalog = Catalog()
        self.clock = GlobalClock()
        self.epochs = EpochManager(advance_bytes)
        self.workers = []
        self._lock = threading.Lock()
        self._sync = threading.local()

    def create_table(self, name, max_records=1 << 40):
        return self.catalog.create(name, max_records)

    def drop_table(self, name):
        self.catalog.drop(name)

    def table(self, name):
        return self.catalog.get(name)

    def new_worker(self, batch_size=1, mode=Mode.SEQUENTIAL) -> Worker:
        with self._lock:
            worker = Worker(self, len(self.workers), batch_size, mode, self.log_dir)
            self.workers.append(worker)
        return worker

    def counters(self) -> WorkerCounters:
        total = WorkerCounters()
        for w in list(self.workers):
            total.merge(w.counters)
        return total

    def execute(self, body, worker=None):
        """Run one transaction body to completion on the calling thread.

        ``body(ctx)`` is a generator function; the transaction commits when
        it returns. Returns the body's result; raises TransactionAborted.
        """
        if worker is None:
            worker = getattr(self._sync, "worker", None)
            if worker is None:
                worker = self._sync.worker = self.new_worker(1, Mode.SEQUENTIAL)
        ctx = worker.begin(0)
        guard = self.epochs.enter(worker.worker_id)
        enter_task()
        try:
            op = body(ctx)
            try:
                while True:
                    op.send(None)
            except StopIteration as stop:
                result = stop.value
            except TransactionAborted:
                raise
            except BaseException:
                if ctx.state is ACTIVE:
                    ctx.abort("error")
                raise
            if ctx.state is ACTIVE:
                ctx.commit()
            return result
        finally:
            leave_task()
            self.epochs.exit(guard)
