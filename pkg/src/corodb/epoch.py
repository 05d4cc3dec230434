"""Epoch-based memory reclamation scoped to scheduler batches.

Workers announce the global epoch when a batch starts and go quiescent
when it ends. Retired resources wait in per-worker buckets keyed by the
epoch they were retired in; a bucket for epoch ``e`` is reclaimed once the
global epoch is at least ``e + 2`` and no worker is announced at ``e`` or
earlier. Reclamation runs on the retiring worker only.
"""

import threading
from collections import deque
from dataclasses import asdict, dataclass

from .errors import UsageError
from .suspend import in_task

DEFAULT_ADVANCE_BYTES = 16 << 20


@dataclass
class EpochStats:
    enters: int = 0
    exits: int = 0
    epochs_advanced: int = 0
    retired: int = 0
    reclaimed: int = 0
    bytes_retired: int = 0
    bytes_reclaimed: int = 0
    max_residency: int = 0

    def as_dict(self):
        return asdict(self)


class EpochGuard:
    __slots__ = ("worker", "epoch", "live")

    def __init__(self, worker, epoch):
        self.worker = worker
        self.epoch = epoch
        self.live = True

    def __repr__(self):
        return f"EpochGuard(worker={self.worker}, epoch={self.epoch})"


class _WorkerState:
    __slots__ = ("announced", "guard", "buckets", "pending_bytes", "resident", "stats")

    def __init__(self):
        self.announced = None
        self.guard = None
        self.buckets = deque()  # [epoch, [(resource, destructor)], bytes]
        self.pending_bytes = 0
        self.resident = 0
        # owner-written only; aggregated on demand
        self.stats = EpochStats()


class EpochManager:
    def __init__(self, advance_bytes=DEFAULT_ADVANCE_BYTES, grace=2):
        self.epoch = 1
        self.advance_bytes = advance_bytes
        self.grace = grace
        self._advanced = 0
        self._workers = {}
        self._lock = threading.Lock()

    def register(self, worker):
        with self._lock:
            if worker not in self._workers:
                self._workers[worker] = _WorkerState()

    def _state(self, worker):
        try:
            return self._workers[worker]
        except KeyError:
            self.register(worker)
            return self._workers[worker]

    def announced(self, worker):
        return self._state(worker).announced

    def enter(self, worker) -> EpochGuard:
        if in_task():
            raise UsageError("epochs are entered by the scheduler, not by transactions")
        st = self._state(worker)
        if st.guard is not None:
            raise UsageError(f"worker {worker} already holds {st.guard!r}")
        st.announced = self.epoch
        guard = st.guard = EpochGuard(worker, st.announced)
        st.stats.enters += 1
        return guard

    def exit(self, guard: EpochGuard):
        if not guard.live:
            raise UsageError("epoch guard already released")
        if in_task():
            raise UsageError("epochs are exited by the scheduler, not by transactions")
        st = self._workers[guard.worker]
        guard.live = False
        st.guard = None
        st.announced = None
        st.stats.exits += 1
        self.advance(guard.worker)
        self.try_reclaim(guard.worker)

    def retire(self, worker, resource, destructor, nbytes=0):
        """Queue ``destructor(resource)`` to run once no reader can hold it."""
        st = self._state(worker)
        epoch = self.epoch
        if st.buckets and st.buckets[-1][0] == epoch:
            bucket = st.buckets[-1]
        else:
            bucket = [epoch, [], 0]
            st.buckets.append(bucket)
        bucket[1].append((resource, destructor))
        bucket[2] += nbytes
        st.pending_bytes += nbytes
        st.resident += 1
        st.stats.retired += 1
        st.stats.bytes_retired += nbytes
        if st.resident > st.stats.max_residency:
            st.stats.max_residency = st.resident

    def advance(self, worker=None, force=False) -> bool:
        """Bump the global epoch if forced or if enough bytes were retired
        since the last advance (by ``worker``, or by anyone)."""
        with self._lock:
            if not force:
                states = [self._workers[worker]] if worker is not None else self._workers.values()
                if not any(s.pending_bytes >= self.advance_bytes for s in states):
                    return False
            for s in self._workers.values():
                s.pending_bytes = 0
            self.epoch += 1
            self._advanced += 1
            return True

    def safe_epoch(self):
        """Largest epoch whose retirees may be reclaimed now."""
        limit = self.epoch - self.grace
        for st in list(self._workers.values()):
            a = st.announced
            if a is not None and a - 1 < limit:
                limit = a - 1
        return limit

    def try_reclaim(self, worker) -> int:
        st = self._state(worker)
        limit = self.safe_epoch()
        freed = 0
        while st.buckets and st.buckets[0][0] <= limit:
            _epoch, items, nbytes = st.buckets.popleft()
            for resource, destructor in items:
                destructor(resource)
            freed += len(items)
            st.resident -= len(items)
            st.stats.bytes_reclaimed += nbytes
        st.stats.reclaimed += freed
        return freed

    @property
    def stats(self) -> EpochStats:
        total = EpochStats(epochs_advanced=self._advanced)
        for st in list(self._workers.values()):
            s = st.stats
            total.enters += s.enters
            total.exits += s.exits
            total.retired += s.retired
            total.reclaimed += s.reclaimed
            total.bytes_retired += s.bytes_retired
            total.bytes_reclaimed += s.bytes_reclaimed
            total.max_residency = max(total.max_residency, s.max_residency)
        return total

    def pending(self, worker=None):
        states = [self._state(worker)] if worker is not None else self._workers.values()
        return sum(s.resident for s in states)
