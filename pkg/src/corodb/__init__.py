"""Multi-version key-value engine that interleaves batches of transactions
per worker to hide memory stalls."""

from .epoch import EpochGuard, EpochManager
from .errors import (CoroDBError, DuplicateNameError, ResourceError,
                     TransactionAborted, UsageError)
from .index import BLinkTree, decode_key, encode_key
from .sched import BatchState, RunStats, Scheduler, SchedulerConfig, TransactionTask
from .storage import Owner, Table, Version
from .suspend import Mode, nested, run_sync
from .txn import Engine, TransactionContext, Worker

__all__ = [
    "BLinkTree", "BatchState", "CoroDBError", "DuplicateNameError", "Engine",
    "EpochGuard", "EpochManager", "Mode", "Owner", "ResourceError", "RunStats",
    "Scheduler", "SchedulerConfig", "Table", "TransactionAborted",
    "TransactionContext", "TransactionTask", "UsageError", "Version", "Worker",
    "decode_key", "encode_key", "nested", "run_sync",
]
__version__ = "0.1.0"
