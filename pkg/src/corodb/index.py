"""Ordered key -> RID index: a B-link tree with optimistic readers.

Readers take no latches. They read a node's version word, snapshot its
contents, and re-check the version; a concurrent writer bumps the word to
an odd value for the duration of its change, which forces a retry. Every
node carries a high key and a right-sibling link, so a reader that lands
on a node that split underneath it moves right instead of restarting.

Traversals are suspendable operations: before dereferencing a non-root
node they issue a prefetch hint and suspend. Writers latch a single node
for the in-node update and couple latches bottom-up during splits; none of
that code suspends.
"""

import threading
import time
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

from .errors import UsageError
from .suspend import nested, note_latch

FANOUT = 16
CACHE_LINE = 64


def encode_key(value: int, width: int = 8) -> bytes:
    """Big-endian fixed-width encoding, so byte order equals numeric order."""
    if value < 0:
        raise ValueError("keys are unsigned")
    return value.to_bytes(width, "big")


def decode_key(key: bytes) -> int:
    return int.from_bytes(key, "big")


class Node:
    __slots__ = ("leaf", "level", "entries", "high", "right", "version", "latch")

    def __init__(self, leaf, level, keys, vals, high=None, right=None):
        self.leaf = leaf
        self.level = level
        # (keys, vals) swapped as one reference so snapshots are never torn.
        # Leaves hold RIDs in vals; inner nodes hold len(keys) + 1 children.
        self.entries = (keys, vals)
        self.high = high
        self.right = right
        self.version = 0
        self.latch = threading.Lock()

    def __repr__(self):
        kind = "leaf" if self.leaf else f"inner@{self.level}"
        return f"Node({kind}, n={len(self.entries[0])}, high={self.high!r})"


@dataclass
class OpTrace:
    """Counters for one index operation, handed to the observer hook."""
    op: str
    nodes: int = 0
    suspensions: int = 0
    retries: int = 0


@dataclass
class IndexStats:
    searches: int = 0
    inserts: int = 0
    scans: int = 0
    nodes_visited: int = 0
    suspensions: int = 0
    retries: int = 0
    splits: int = 0
    prefetch_lines: int = 0
    observer: object = field(default=None, repr=False)

    def record(self, trace, lines_per_node):
        if trace.op == "search":
            self.searches += 1
        elif trace.op == "insert":
            self.inserts += 1
        else:
            self.scans += 1
        self.nodes_visited += trace.nodes
        self.suspensions += trace.suspensions
        self.retries += trace.retries
        self.prefetch_lines += trace.suspensions * lines_per_node
        if self.observer is not None:
            self.observer(trace)


class BLinkTree:
    def __init__(self, fanout=FANOUT, prefetch_lines=None):
        if fanout < 3:
            raise ValueError("fanout must be at least 3")
        self.fanout = fanout
        if prefetch_lines is None:
            # keys + child references + header, one hint per line
            prefetch_lines = -(-(fanout * 16 + 64) // CACHE_LINE)
        self.prefetch_lines = prefetch_lines
        self.root = Node(True, 0, [], [])
        self.stats = IndexStats()
        self._root_lock = threading.Lock()

    # -- optimistic single-node visit -------------------------------------

    def step(self, node, key):
        """Visit ``node`` for ``key`` without suspending.

        Returns ``(next_node, rid, retries)``. ``next_node`` is the child or
        right sibling to visit next; it is ``None`` once ``node`` is the leaf
        that covers ``key``, in which case ``rid`` is the lookup result.
        """
        retries = 0
        while True:
            v = node.version
            if v & 1:
                retries += 1
                time.sleep(0)
                continue
            keys, vals = node.entries
            high = node.high
            right = node.right
            if node.version != v:
                retries += 1
                continue
            if high is not None and key >= high:
                return right, None, retries
            if node.leaf:
                i = bisect_left(keys, key)
                if i < len(keys) and keys[i] == key:
                    return None, vals[i], retries
                return None, None, retries
            return vals[bisect_right(keys, key)], None, retries

    def _snapshot(self, node):
        while True:
            v = node.version
            if v & 1:
                time.sleep(0)
                continue
            keys, vals = node.entries
            high = node.high
            right = node.right
            if node.version == v:
                return keys, vals, high, right

    def collect(self, node, lo, inclusive):
        """Validated slice of a leaf: entries with key >= lo (or > lo)."""
        keys, vals, _high, right = self._snapshot(node)
        i = bisect_left(keys, lo) if inclusive else bisect_right(keys, lo)
        return keys[i:], vals[i:], right

    # -- suspendable operations, flattened ---------------------------------

    def search(self, key, suspend=True):
        trace = OpTrace("search", nodes=1)
        nxt, rid, r = self.step(self.root, key)
        trace.retries += r
        while nxt is not None:
            if suspend:
                trace.suspensions += 1
                yield 1
            trace.nodes += 1
            nxt, rid, r = self.step(nxt, key)
            trace.retries += r
        self.stats.record(trace, self.prefetch_lines)
        return rid

    def insert(self, key, rid, suspend=True):
        """Insert ``key -> rid``. Returns True iff the key was new."""
        existing = yield from self.insert_or_get(key, rid, suspend)
        return existing is None

    def insert_or_get(self, key, rid, suspend=True):
        """Like :meth:`insert` but returns the RID already mapped to ``key``,
        or None when the new mapping was added."""
        trace = OpTrace("insert", nodes=1)
        path = []
        node = self.root
        nxt, _, r = self.step(node, key)
        trace.retries += r
        while nxt is not None:
            if nxt.level != node.level:
                path.append(node)
            if suspend:
                trace.suspensions += 1
                yield 1
            trace.nodes += 1
            node = nxt
            nxt, _, r = self.step(node, key)
            trace.retries += r
        self.stats.record(trace, self.prefetch_lines)
        return self.insert_at(node, key, rid, path)

    def scan(self, start, count, suspend=True):
        """First ``count`` (key, rid) pairs with key >= start, ascending."""
        if count < 1:
            raise UsageError("scan count must be positive")
        trace = OpTrace("scan", nodes=1)
        node = self.root
        nxt, _, r = self.step(node, start)
        trace.retries += r
        while nxt is not None:
            if suspend:
                trace.suspensions += 1
                yield 1
            trace.nodes += 1
            node = nxt
            nxt, _, r = self.step(node, start)
            trace.retries += r
        out = []
        lo, inclusive = start, True
        while True:
            keys, vals, right = self.collect(node, lo, inclusive)
            for k, v in zip(keys, vals):
                out.append((k, v))
                if len(out) == count:
                    self.stats.record(trace, self.prefetch_lines)
                    return out
            if keys:
                lo, inclusive = keys[-1], False
            if right is None:
                self.stats.record(trace, self.prefetch_lines)
                return out
            if suspend:
                trace.suspensions += 1
                yield 1
            trace.nodes += 1
            node = right

    # -- suspendable operations, fully nested -------------------------------

    def probe(self, node, key):
        """Suspend before dereferencing ``node``, then visit it."""
        yield 1
        return self.step(node, key)

    def hop(self, node):
        yield 1
        return node

    def search_nested(self, key):
        trace = OpTrace("search", nodes=1)
        nxt, rid, r = self.step(self.root, key)
        trace.retries += r
        while nxt is not None:
            trace.suspensions += 1
            trace.nodes += 1
            nxt, rid, r = yield from nested(self.probe(nxt, key))
            trace.retries += r
        self.stats.record(trace, self.prefetch_lines)
        return rid

    def insert_or_get_nested(self, key, rid):
        trace = OpTrace("insert", nodes=1)
        path = []
        node = self.root
        nxt, _, r = self.step(node, key)
        trace.retries += r
        while nxt is not None:
            if nxt.level != node.level:
                path.append(node)
            trace.suspensions += 1
            trace.nodes += 1
            node = yield from nested(self.hop(nxt))
            nxt, _, r = self.step(node, key)
            trace.retries += r
        self.stats.record(trace, self.prefetch_lines)
        return self.insert_at(node, key, rid, path)

    def scan_nested(self, start, count):
        if count < 1:
            raise UsageError("scan count must be positive")
        trace = OpTrace("scan", nodes=1)
        node = self.root
        nxt, _, r = self.step(node, start)
        while nxt is not None:
            trace.suspensions += 1
            trace.nodes += 1
            node = yield from nested(self.hop(nxt))
            nxt, _, r = self.step(node, start)
        out = []
        lo, inclusive = start, True
        while True:
            keys, vals, right = self.collect(node, lo, inclusive)
            for k, v in zip(keys, vals):
                out.append((k, v))
                if len(out) == count:
                    self.stats.record(trace, self.prefetch_lines)
                    return out
            if keys:
                lo, inclusive = keys[-1], False
            if right is None:
                self.stats.record(trace, self.prefetch_lines)
                return out
            trace.suspensions += 1
            trace.nodes += 1
            node = yield from nested(self.hop(right))

    # -- writer side: never suspends ---------------------------------------

    @staticmethod
    def _latch(node):
        node.latch.acquire()
        note_latch(1)

    @staticmethod
    def _unlatch(node):
        note_latch(-1)
        node.latch.release()

    def _move_right(self, node, key):
        # node is latched; couple latches left to right
        while node.high is not None and key >= node.high:
            right = node.right
            self._latch(right)
            self._unlatch(node)
            node = right
        return node

    def insert_at(self, leaf, key, rid, path):
        """Finish an insert at the leaf an optimistic descent reached.

        ``path`` holds the inner nodes passed on the way down. Returns the
        RID already mapped to ``key``, or None after adding the mapping.
        """
        self._latch(leaf)
        leaf = self._move_right(leaf, key)
        keys, vals = leaf.entries
        i = bisect_left(keys, key)
        if i < len(keys) and keys[i] == key:
            self._unlatch(leaf)
            return vals[i]
        keys = keys[:i] + [key] + keys[i:]
        vals = vals[:i] + [rid] + vals[i:]
        if len(keys) <= self.fanout:
            leaf.version += 1
            leaf.entries = (keys, vals)
            leaf.version += 1
            self._unlatch(leaf)
            return None
        self._split(leaf, keys, vals, path)
        return None

    def _split(self, node, keys, vals, path):
        """Split the latched ``node`` whose pending contents overflow, then
        push the separator upward. Releases every latch it holds."""
        while True:
            mid = len(keys) // 2
            sep = keys[mid]
            if node.leaf:
                lk, lv, rk, rv = keys[:mid], vals[:mid], keys[mid:], vals[mid:]
            else:
                lk, lv = keys[:mid], vals[:mid + 1]
                rk, rv = keys[mid + 1:], vals[mid + 1:]
            sibling = Node(node.leaf, node.level, rk, rv, node.high, node.right)
            node.version += 1
            node.entries = (lk, lv)
            node.high = sep
            node.right = sibling
            node.version += 1
            self.stats.splits += 1

            parent = path.pop() if path else None
            if parent is None:
                with self._root_lock:
                    if self.root is node:
                        self.root = Node(False, node.level + 1, [sep], [node, sibling])
                        self._unlatch(node)
                        return
                parent = self._find_level(node.level + 1, sep)
            self._latch(parent)
            self._unlatch(node)
            parent = self._move_right(parent, sep)
            pk, pv = parent.entries
            i = bisect_right(pk, sep)
            pk = pk[:i] + [sep] + pk[i:]
            pv = pv[:i + 1] + [sibling] + pv[i + 1:]
            if len(pk) <= self.fanout:
                parent.version += 1
                parent.entries = (pk, pv)
                parent.version += 1
                self._unlatch(parent)
                return
            node, keys, vals = parent, pk, pv

    def _find_level(self, level, key):
        node = self.root
        while node.level > level:
            nxt, _, _ = self.step(node, key)
            node = nxt
        return node

    # -- synchronous conveniences and diagnostics -----------------------------

    def lookup(self, key):
        return _drain(self.search(key, suspend=False))

    def add(self, key, rid):
        return _drain(self.insert(key, rid, suspend=False))

    def range(self, start, count):
        return _drain(self.scan(start, count, suspend=False))

    def depth(self):
        return self.root.level + 1

    def __len__(self):
        return sum(len(n.entries[0]) for n in self.leaves())

    def leaves(self):
        node = self.root
        while not node.leaf:
            node = node.entries[1][0]
        while node is not None:
            yield node
            node = node.right

    def check(self):
        """Assert structural invariants at a quiescent point."""
        level_head = self.root
        while level_head is not None:
            node, prev_high = level_head, None
            while node is not None:
                keys, vals = node.entries
                assert keys == sorted(keys) and len(set(keys)) == len(keys), node
                if not node.leaf:
                    assert len(vals) == len(keys) + 1, node
                if prev_high is not None and keys:
                    assert keys[0] >= prev_high, node
                if node.high is not None and keys:
                    assert keys[-1] < node.high, node
                prev_high = node.high
                node = node.right
            level_head = None if level_head.leaf else level_head.entries[1][0]


def _drain(op):
    try:
        while True:
            op.send(None)
    except StopIteration as stop:
        return stop.value
