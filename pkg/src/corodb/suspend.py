"""Generator-based suspendable operations.

A suspendable operation is a generator. Each ``yield`` is a suspension
point and yields the number of frames the suspension has passed through
on its way out; the operation's result is its return value. Callers that
belong to the same flattened level compose with ``yield from``; fully
nested callers compose with :func:`nested`, which counts one more frame
per level.
"""

import threading
from enum import Enum

from .errors import UsageError

_local = threading.local()


def nested(op):
    """Run ``op`` as a nested child coroutine of the calling one.

    Every suspension inside ``op`` is re-yielded one level up with its hop
    count incremented, and every resume is forwarded back down, mirroring
    level-by-level unwinding of nested stackless coroutines.
    """
    try:
        hops = op.send(None)
    except StopIteration as stop:
        return stop.value
    while True:
        yield hops + 1
        try:
            hops = op.send(None)
        except StopIteration as stop:
            return stop.value


def run_sync(op):
    """Drive a suspendable operation to completion, resuming it immediately
    after every suspension. Returns the operation's result."""
    enter_task()
    try:
        while True:
            op.send(None)
    except StopIteration as stop:
        return stop.value
    finally:
        leave_task()


def enter_task():
    _local.in_task = getattr(_local, "in_task", 0) + 1


def leave_task():
    _local.in_task -= 1


def in_task():
    return getattr(_local, "in_task", 0) > 0


def latches_held():
    return getattr(_local, "latches", 0)


def note_latch(delta):
    _local.latches = getattr(_local, "latches", 0) + delta


def check_suspend():
    """Validate a suspension point (checked builds only)."""
    if not in_task():
        raise UsageError("suspension point reached outside a transaction task")
    if latches_held():
        raise UsageError("suspension point reached while holding a node latch")


class Mode(str, Enum):
    """How a worker executes transactions.

    ``SEQUENTIAL`` never suspends and issues no hints; ``SEQUENTIAL_PREFETCH``
    issues hints but never suspends; ``TWO_LEVEL`` suspends straight back
    to the scheduler from flattened engine operations; ``FULLY_NESTED``
    suspends through a chain of nested engine coroutines.
    """

    SEQUENTIAL = "seq"
    SEQUENTIAL_PREFETCH = "seq-prefetch"
    TWO_LEVEL = "two-level"
    FULLY_NESTED = "fully-nested"

    @property
    def suspends(self):
        return self in (Mode.TWO_LEVEL, Mode.FULLY_NESTED)

    @property
    def prefetches(self):
        return self is not Mode.SEQUENTIAL

    @property
    def nested(self):
        return self is Mode.FULLY_NESTED
