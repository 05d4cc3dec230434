"""Tables, logical record IDs, indirection arrays and version chains.

Each table maps a dense RID to the newest version of the record through a
segmented indirection array. Versions form a newest-first singly linked
chain. A version's stamp is either an ``int`` commit timestamp or an
:class:`Owner` mark naming the uncommitted transaction that created it.
"""

import threading
from typing import Optional, Union

from .errors import DuplicateNameError, ResourceError, UsageError

CHUNK_BITS = 12
CHUNK_SIZE = 1 << CHUNK_BITS
_CHUNK_MASK = CHUNK_SIZE - 1
_STRIPES = 64

Rid = int


class Owner:
    """Owner mark shared by every version one transaction creates.

    ``commit_ts`` is published once the owner has a commit timestamp, so a
    reader that meets the mark before the stamps are rewritten can still
    resolve visibility. ``committing`` is set before the timestamp is drawn.
    """

    __slots__ = ("worker", "slot", "seq", "commit_ts", "committing", "aborted")

    def __init__(self, worker, slot, seq):
        self.worker = worker
        self.slot = slot
        self.seq = seq
        self.commit_ts = None
        self.committing = False
        self.aborted = False

    def __repr__(self):
        return f"Owner(w{self.worker}/s{self.slot}/#{self.seq})"


# Stamp given to versions whose memory has been reclaimed; never visible.
RECLAIMED = Owner(-1, -1, -1)
RECLAIMED.aborted = True

VersionStamp = Union[int, Owner]


class Version:
    __slots__ = ("stamp", "next", "payload", "tombstone")

    def __init__(self, stamp: VersionStamp, next: "Optional[Version]",
                 payload: bytes = b"", tombstone: bool = False):
        self.stamp = stamp
        self.next = next
        self.payload = payload
        self.tombstone = tombstone

    @property
    def committed(self):
        return self.stamp.__class__ is int

    def __repr__(self):
        kind = "tomb" if self.tombstone else self.payload[:16]
        return f"Version({self.stamp!r}, {kind!r})"


def reclaim_version(version):
    """Destructor run by epoch reclamation."""
    version.stamp = RECLAIMED
    version.payload = b""
    version.next = None


class Table:
    def __init__(self, name, table_id, max_records=1 << 40):
        self.name = name
        self.table_id = table_id
        self.max_records = max_records
        self.live = True
        self._chunks = []
        self._next_rid = 0
        self._alloc_lock = threading.Lock()
        self._stripes = [threading.Lock() for _ in range(_STRIPES)]
        # imported here to keep storage free of index details at module load
        from .index import BLinkTree
        self.index = BLinkTree()

    def __repr__(self):
        return f"Table({self.name!r}, rids={self._next_rid})"

    def __len__(self):
        return self._next_rid

    @property
    def allocated(self):
        return self._next_rid

    def allocate_rid(self) -> Rid:
        if not self.live:
            raise UsageError(f"table {self.name!r} was dropped")
        with self._alloc_lock:
            rid = self._next_rid
            if rid >= self.max_records:
                raise ResourceError(
                    f"table {self.name!r} reached its capacity of {self.max_records} records")
            if rid >> CHUNK_BITS == len(self._chunks):
                self._chunks.append([None] * CHUNK_SIZE)
            self._next_rid = rid + 1
        return rid

    def _check_rid(self, rid):
        if not 0 <= rid < self._next_rid:
            raise UsageError(f"rid {rid} not allocated in table {self.name!r}")

    def read_head(self, rid: Rid) -> Optional[Version]:
        self._check_rid(rid)
        return self._chunks[rid >> CHUNK_BITS][rid & _CHUNK_MASK]

    def head(self, rid):
        # unchecked fast path for engine internals
        return self._chunks[rid >> CHUNK_BITS][rid & _CHUNK_MASK]

    def install(self, rid: Rid, expected: Optional[Version], new: Version) -> bool:
        """Atomically replace the head with ``new`` if it still is ``expected``."""
        self._check_rid(rid)
        if new.next is not expected:
            raise UsageError("new version must link to the expected head")
        if new.stamp.__class__ is not Owner:
            raise UsageError("installed versions must carry an owner mark")
        return self.cas(rid, expected, new)

    def cas(self, rid, expected, new):
        chunk = self._chunks[rid >> CHUNK_BITS]
        i = rid & _CHUNK_MASK
        with self._stripes[rid & (_STRIPES - 1)]:
            if chunk[i] is not expected:
                return False
            chunk[i] = new
            return True

    def chain(self, rid):
        """List the versions of ``rid`` newest first (diagnostics)."""
        out = []
        v = self.read_head(rid)
        while v is not None:
            out.append(v)
            v = v.next
        return out


class Catalog:
    def __init__(self):
        self._tables = {}
        self._next_id = 1
        self._lock = threading.Lock()

    def create(self, name, max_records=1 << 40) -> Table:
        with self._lock:
            if name in self._tables:
                raise DuplicateNameError(f"table {name!r} already exists")
            table = Table(name, self._next_id, max_records)
            self._next_id += 1
            self._tables[name] = table
        return table

    def drop(self, name):
        with self._lock:
            table = self._tables.pop(name, None)
        if table is None:
            raise UsageError(f"no table named {name!r}")
        table.live = False

    def get(self, name) -> Table:
        try:
            return self._tables[name]
        except KeyError:
            raise UsageError(f"no table named {name!r}") from None

    def by_id(self, table_id):
        for t in self._tables.values():
            if t.table_id == table_id:
                return t
        raise UsageError(f"no table with id {table_id}")

    def __iter__(self):
        return iter(list(self._tables.values()))
