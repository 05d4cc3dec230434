"""Transaction-local log buffers and per-worker log sinks.

Commit is asynchronous: sealing encodes the buffer, stamps every record
with the commit timestamp and appends the bytes to the worker's sink, and
returns without waiting for anything to persist.

Record layout, little-endian::

    u32 length   bytes that follow this field (25 + len(payload))
    u8  kind     1 insert, 2 update, 3 delete
    u64 table    table id
    u64 rid
    u64 commit_ts
    payload
"""

import os
import struct
from dataclasses import dataclass
from enum import IntEnum

_HEADER = struct.Struct("<IBQQQ")
_BODY_FIXED = _HEADER.size - 4


class LogKind(IntEnum):
    INSERT = 1
    UPDATE = 2
    DELETE = 3


@dataclass(frozen=True)
class LogRecord:
    kind: LogKind
    table: int
    rid: int
    commit_ts: int
    payload: bytes


def encode_record(kind, table, rid, commit_ts, payload) -> bytes:
    return _HEADER.pack(_BODY_FIXED + len(payload), kind, table, rid, commit_ts) + payload


def decode_records(data) -> list:
    out = []
    view = memoryview(data)
    pos = 0
    end = len(view)
    while pos < end:
        if end - pos < _HEADER.size:
            raise ValueError(f"truncated record header at offset {pos}")
        length, kind, table, rid, ts = _HEADER.unpack_from(view, pos)
        stop = pos + 4 + length
        if length < _BODY_FIXED or stop > end:
            raise ValueError(f"bad record length {length} at offset {pos}")
        payload = bytes(view[pos + _HEADER.size:stop])
        out.append(LogRecord(LogKind(kind), table, rid, ts, payload))
        pos = stop
    return out


class LogBuffer:
    """Slot-owned append buffer, reused across the transactions of a slot."""

    __slots__ = ("records", "sealed")

    def __init__(self):
        self.records = []
        self.sealed = False

    def append(self, kind, table, rid, payload):
        self.records.append([kind, table, rid, payload])
        return len(self.records) - 1

    def replace(self, pos, kind, payload):
        rec = self.records[pos]
        rec[0] = kind
        rec[3] = payload

    def reset(self):
        self.records.clear()
        self.sealed = False

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class Extent:
    commit_ts: int
    offset: int
    length: int
    records: int


class LogSink:
    """Single-writer append-only stream of sealed buffers for one worker.

    With ``path`` set, sealed bytes are also appended to that file; the
    in-memory copy is kept either way for audits.
    """

    def __init__(self, worker, path=None):
        self.worker = worker
        self.data = bytearray()
        self.extents = []
        self.path = path
        self._file = open(path, "ab") if path else None

    def append(self, commit_ts, payload, nrecords):
        ext = Extent(commit_ts, len(self.data), len(payload), nrecords)
        self.data += payload
        self.extents.append(ext)
        if self._file is not None:
            self._file.write(payload)
        return ext

    def flush(self):
        if self._file is not None:
            self._file.flush()

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None

    def records(self):
        return decode_records(self.data)

    def __len__(self):
        return len(self.data)


def seal(buffer: LogBuffer, commit_ts, sink: LogSink) -> Extent:
    """Stamp and hand ``buffer`` to ``sink``; does not wait for I/O."""
    if buffer.sealed:
        raise ValueError("log buffer already sealed")
    parts = [encode_record(kind, table, rid, commit_ts, payload)
             for kind, table, rid, payload in buffer.records]
    buffer.sealed = True
    return sink.append(commit_ts, b"".join(parts), len(parts))


def sink_path(directory, worker):
    return os.path.join(directory, f"log-worker-{worker}.bin")
