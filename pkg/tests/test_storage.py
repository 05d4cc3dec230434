import threading

import pytest

from corodb import DuplicateNameError, Owner, ResourceError, UsageError, Version
from corodb.storage import RECLAIMED, Catalog, Table, reclaim_version


def test_allocate_is_dense_and_heads_start_empty():
    t = Table("t", 1)
    rids = [t.allocate_rid() for _ in range(5000)]
    assert rids == list(range(5000))
    assert t.read_head(4999) is None
    assert len(t) == 5000


def test_capacity_and_dropped_table():
    t = Table("t", 1, max_records=3)
    for _ in range(3):
        t.allocate_rid()
    with pytest.raises(ResourceError):
        t.allocate_rid()
    t.live = False
    with pytest.raises(UsageError):
        t.allocate_rid()


def test_unallocated_rid_is_usage_error():
    t = Table("t", 1)
    with pytest.raises(UsageError):
        t.read_head(0)


def test_install_links_new_head():
    t = Table("t", 1)
    rid = t.allocate_rid()
    o = Owner(0, 0, 1)
    v1 = Version(o, None, b"a")
    assert t.install(rid, None, v1)
    v2 = Version(o, v1, b"b")
    assert not t.install(rid, None, Version(o, None, b"x"))
    assert t.read_head(rid) is v1
    assert t.install(rid, v1, v2)
    assert t.chain(rid) == [v2, v1]


def test_install_validates_arguments():
    t = Table("t", 1)
    rid = t.allocate_rid()
    with pytest.raises(UsageError):
        t.install(rid, None, Version(5, None, b"x"))
    other = Version(Owner(0, 0, 1), None)
    with pytest.raises(UsageError):
        t.install(rid, None, Version(Owner(0, 0, 1), other))


def test_cas_single_winner_under_contention():
    t = Table("t", 1)
    rid = t.allocate_rid()
    wins = []
    go = threading.Barrier(8)

    def racer(i):
        go.wait()
        if t.cas(rid, None, Version(Owner(i, 0, 1), None)):
            wins.append(i)

    threads = [threading.Thread(target=racer, args=(i,)) for i in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert len(wins) == 1
    assert t.read_head(rid).stamp.worker == wins[0]


def test_concurrent_allocation_is_unique():
    t = Table("t", 1)
    out = [[] for _ in range(4)]

    def alloc(i):
        for _ in range(5000):
            out[i].append(t.allocate_rid())

    threads = [threading.Thread(target=alloc, args=(i,)) for i in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    flat = sorted(r for part in out for r in part)
    assert flat == list(range(20000))


def test_catalog():
    c = Catalog()
    a = c.create("a")
    b = c.create("b")
    assert a.table_id != b.table_id
    with pytest.raises(DuplicateNameError):
        c.create("a")
    assert c.get("a") is a and c.by_id(b.table_id) is b
    c.drop("a")
    assert not a.live
    with pytest.raises(UsageError):
        c.get("a")
    with pytest.raises(UsageError):
        c.drop("a")
    assert list(c) == [b]


def test_reclaimed_version_is_poisoned():
    v = Version(7, None, b"payload")
    reclaim_version(v)
    assert v.stamp is RECLAIMED and v.payload == b"" and not v.committed
