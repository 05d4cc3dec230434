"""Per-worker batch scheduler (coroutine-to-transaction).

A worker admits up to ``batch_size`` transaction bodies, enters an epoch,
and sweeps the slots in ascending order resuming every task that is not
done, recounting finished tasks on each sweep, until the whole batch is
done. Only then does it exit the epoch and admit the next batch.
"""

import inspect
import time
from dataclasses import dataclass, field

from .errors import TransactionAborted, UsageError
from .suspend import Mode, enter_task, latches_held, leave_task
from .txn import ACTIVE, Engine, TxnState


@dataclass(frozen=True)
class SchedulerConfig:
    batch_size: int = 8
    mode: Mode = Mode.TWO_LEVEL

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        object.__setattr__(self, "mode", Mode(self.mode))


COMMITTED = "committed"
ABORTED = "aborted"


class TransactionTask:
    """One admitted transaction body. Instances are pooled per slot."""

    __slots__ = ("slot", "body", "coro", "ctx", "done", "outcome", "reason",
                 "result", "error", "admitted_at", "finished_at", "resumes", "tag")

    def __init__(self, slot):
        self.slot = slot
        self._clear()

    def _clear(self):
        self.body = self.coro = self.ctx = None
        self.done = False
        self.outcome = self.reason = self.result = self.error = None
        self.admitted_at = self.finished_at = 0.0
        self.resumes = 0
        self.tag = None

    @property
    def latency(self):
        return self.finished_at - self.admitted_at

    def __repr__(self):
        return f"Task(slot={self.slot}, done={self.done}, outcome={self.outcome})"


@dataclass
class RunStats:
    batches: int = 0
    admitted: int = 0
    resumes: int = 0
    suspensions: int = 0
    hops: int = 0
    max_hops: int = 0
    commits: int = 0
    aborts: int = 0
    errors: list = field(default_factory=list)
    latencies: list = field(default_factory=list, repr=False)
    wall_time: float = 0.0

    def merge(self, other):
        self.batches += other.batches
        self.admitted += other.admitted
        self.resumes += other.resumes
        self.suspensions += other.suspensions
        self.hops += other.hops
        self.max_hops = max(self.max_hops, other.max_hops)
        self.commits += other.commits
        self.aborts += other.aborts
        self.errors.extend(other.errors)
        self.latencies.extend(other.latencies)
        self.wall_time = max(self.wall_time, other.wall_time)
        return self

    def summary(self):
        return {
            "batches": self.batches,
            "admitted": self.admitted,
            "resumes": self.resumes,
            "suspensions": self.suspensions,
            "mean_hops": self.hops / self.suspensions if self.suspensions else 0.0,
            "max_hops": self.max_hops,
            "commits": self.commits,
            "aborts": self.aborts,
            "errors": len(self.errors),
            "wall_time_s": self.wall_time,
        }


class BatchState:
    def __init__(self, worker, stats=None):
        self.worker = worker
        self.size = worker.batch_size
        self.tasks = [TransactionTask(i) for i in range(self.size)]
        self.admitted = 0
        self.stats = stats if stats is not None else RunStats()
        self.checks = worker.engine.checks
        self.hop_trace = None  # set to a list to record per-suspension hop counts

    def reset(self):
        for task in self.tasks[:self.admitted]:
            task._clear()
        self.admitted = 0

    def admit(self, body, tag=None) -> int:
        """Bind ``body`` to the next free slot and begin its transaction."""
        if self.admitted == self.size:
            raise UsageError(f"batch of {self.size} is full")
        slot = self.admitted
        task = self.tasks[slot]
        ctx = self.worker.begin(slot)
        coro = body(ctx)
        if not inspect.isgenerator(coro):
            ctx.abort("error")
            raise UsageError("transaction bodies must be generator functions")
        task.body, task.coro, task.ctx, task.tag = body, coro, ctx, tag
        task.admitted_at = time.perf_counter()
        self.admitted += 1
        self.stats.admitted += 1
        return slot

    def resume(self, slot):
        """Resume one task. Returns its hop count if it suspended, else None."""
        task = self.tasks[slot]
        if task.done:
            raise UsageError(f"task in slot {slot} already finished")
        stats = self.stats
        stats.resumes += 1
        task.resumes += 1
        if self.checks:
            enter_task()
        try:
            hops = task.coro.send(None)
        except StopIteration as stop:
            ctx = task.ctx
            if ctx.state is ACTIVE:
                ctx.commit()
                task.outcome = COMMITTED
            else:
                task.outcome = COMMITTED if ctx.state is TxnState.COMMITTED else ABORTED
            task.result = stop.value
            self._finish(task)
            return None
        except TransactionAborted as exc:
            task.outcome, task.reason = ABORTED, exc.reason
            self._finish(task)
            return None
        except Exception as exc:
            if task.ctx.state is ACTIVE:
                task.ctx.abort("error")
            task.outcome, task.reason, task.error = ABORTED, "error", exc
            stats.errors.append(f"slot {slot}: {exc!r}")
            self._finish(task)
            return None
        finally:
            if self.checks:
                leave_task()
        if self.checks and latches_held():
            raise UsageError("transaction suspended while holding a latch")
        stats.suspensions += 1
        stats.hops += hops
        if hops > stats.max_hops:
            stats.max_hops = hops
        if self.hop_trace is not None:
            self.hop_trace.append(hops)
        return hops

    def _finish(self, task):
        task.done = True
        task.finished_at = time.perf_counter()
        stats = self.stats
        if task.outcome == COMMITTED:
            stats.commits += 1
        else:
            stats.aborts += 1
        stats.latencies.append(task.finished_at - task.admitted_at)
        task.coro = None


class Scheduler:
    """Runs batches of transactions for one worker until the source drains
    or ``stop`` is set. Aborted transactions are not retried here."""

    def __init__(self, engine: Engine, config: SchedulerConfig = SchedulerConfig(), worker=None):
        self.engine = engine
        self.config = config
        self.worker = worker or engine.new_worker(config.batch_size, config.mode)
        if self.worker.batch_size != config.batch_size or self.worker.mode is not config.mode:
            raise UsageError("worker resources do not match the scheduler config")
        self.stats = RunStats()
        self.batch = BatchState(self.worker, self.stats)

    def run(self, source, stop=None, on_complete=None) -> RunStats:
        epochs = self.engine.epochs
        wid = self.worker.worker_id
        batch = self.batch
        tasks = batch.tasks
        size = self.config.batch_size
        source = iter(source)
        stats = self.stats
        started = time.perf_counter()
        drained = False
        while not drained and (stop is None or not stop.is_set()):
            batch.reset()
            for _ in range(size):
                body = next(source, None)
                if body is None:
                    drained = True
                    break
                batch.admit(body)
            admitted = batch.admitted
            if admitted == 0:
                break
            guard = epochs.enter(wid)
            done = 0
            while done < admitted:
                done = 0
                for i in range(admitted):
                    if tasks[i].done:
                        done += 1
                    else:
                        batch.resume(i)
            epochs.exit(guard)
            stats.batches += 1
            if on_complete is not None:
                for task in tasks[:admitted]:
                    on_complete(task)
        stats.wall_time += time.perf_counter() - started
        return stats
