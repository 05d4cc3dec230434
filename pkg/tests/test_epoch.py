import itertools
import random
import sys
import threading

import pytest

from corodb import EpochManager, UsageError


class Canary:
    __slots__ = ("reclaimed", "retired_by")

    def __init__(self):
        self.reclaimed = False
        self.retired_by = None


def kill(c):
    c.reclaimed = True


def test_retiree_waits_for_grace_and_quiescence():
    em = EpochManager(advance_bytes=1 << 30)
    g0 = em.enter(0)
    g1 = em.enter(1)
    c = Canary()
    em.retire(1, c, kill)
    em.exit(g1)
    assert not c.reclaimed
    em.advance(force=True)
    em.advance(force=True)
    assert em.try_reclaim(1) == 0  # worker 0 still announced at epoch 1
    em.exit(g0)
    assert em.try_reclaim(1) == 1 and c.reclaimed
    assert em.pending() == 0


def test_grace_period_without_readers():
    em = EpochManager(advance_bytes=1 << 30)
    c = Canary()
    em.retire(0, c, kill)
    em.advance(force=True)
    assert em.try_reclaim(0) == 0
    em.advance(force=True)
    assert em.try_reclaim(0) == 1


def test_exit_advances_after_byte_threshold():
    em = EpochManager(advance_bytes=100)
    g = em.enter(0)
    for _ in range(3):
        em.retire(0, Canary(), kill, nbytes=40)
    em.exit(g)
    assert em.epoch == 2
    st = em.stats
    assert st.bytes_retired == 120 and st.enters == st.exits == 1 and st.epochs_advanced == 1


def test_guard_misuse():
    em = EpochManager()
    g = em.enter(0)
    with pytest.raises(UsageError):
        em.enter(0)
    em.exit(g)
    with pytest.raises(UsageError):
        em.exit(g)


# -- exhaustive two-worker interleavings ---------------------------------------

PROGRAM = ("enter", "load", "swap", "advance", "use", "exit", "reclaim", "advance", "reclaim")


class BrokenManager(EpochManager):
    """Negative control: ignores announced workers."""

    def safe_epoch(self):
        return self.epoch - self.grace


def run_schedule(manager_cls, order):
    em = manager_cls(advance_bytes=1 << 30)
    shared = [Canary()]
    pc = [0, 0]
    guard = [None, None]
    ref = [None, None]
    violations = 0
    for w in order:
        step = PROGRAM[pc[w]]
        pc[w] += 1
        if step == "enter":
            guard[w] = em.enter(w)
        elif step == "load":
            ref[w] = shared[0]
        elif step == "swap":
            old, shared[0] = shared[0], Canary()
            em.retire(w, old, kill)
        elif step == "advance":
            em.advance(force=True)
        elif step == "use":
            violations += ref[w].reclaimed
        elif step == "exit":
            em.exit(guard[w])
            ref[w] = None
        else:
            em.try_reclaim(w)
    for _ in range(3):
        em.advance(force=True)
    em.try_reclaim(0)
    em.try_reclaim(1)
    return violations, em.pending()


def all_orders():
    n = len(PROGRAM)
    for picks in itertools.combinations(range(2 * n), n):
        chosen = set(picks)
        yield [0 if i in chosen else 1 for i in range(2 * n)]


def test_exhaustive_two_worker_schedules_never_reclaim_early():
    total = 0
    for order in all_orders():
        violations, leftover = run_schedule(EpochManager, order)
        assert violations == 0, order
        assert leftover == 0, order
        total += 1
    assert total == 48620


def test_negative_control_broken_manager_is_caught():
    bad = sum(run_schedule(BrokenManager, order)[0] > 0 for order in all_orders())
    assert bad > 0


# -- multi-threaded canary stress ----------------------------------------------

def canary_stress(manager_cls):
    em = manager_cls(advance_bytes=2048)
    slots = [Canary() for _ in range(64)]
    locks = [threading.Lock() for _ in slots]
    uses_after_reclaim = []
    retired = [0] * 8
    cross = [0]
    per_worker = 13_000

    def worker(w):
        rng = random.Random(w)
        done = 0
        while done < per_worker:
            g = em.enter(w)
            held = []
            for _ in range(16):
                # hold two records anyone may retire, then retire one
                held.append(slots[rng.randrange(len(slots))])
                held.append(slots[rng.randrange(len(slots))])
                i = rng.randrange(len(slots))
                with locks[i]:
                    old, slots[i] = slots[i], Canary()
                old.retired_by = w
                em.retire(w, old, kill, nbytes=64)
                done += 1
            for c in held:
                if c.retired_by not in (None, w):
                    cross[0] += 1
                if c.reclaimed:
                    uses_after_reclaim.append(c)
            em.exit(g)
        retired[w] = done

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(8)]
    # preempt often so workers really overlap inside their epoch sections
    interval = sys.getswitchinterval()
    sys.setswitchinterval(1e-5)
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        sys.setswitchinterval(interval)
    return em, sum(retired), cross[0], len(uses_after_reclaim)


def test_eight_worker_canary_stress():
    em, retired, cross, violations = canary_stress(EpochManager)
    assert retired >= 100_000
    assert violations == 0
    assert cross > 0
    st = em.stats
    assert st.retired == retired and st.epochs_advanced > 10
    assert 0 < st.reclaimed <= st.retired
    # liveness: with every worker quiescent, two advances free everything
    em.advance(force=True)
    em.advance(force=True)
    for w in range(8):
        em.try_reclaim(w)
    assert em.pending() == 0 and em.stats.reclaimed == retired


def test_canary_stress_catches_broken_manager():
    _, _, _, violations = canary_stress(BrokenManager)
    assert violations > 0
