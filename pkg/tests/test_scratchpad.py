"""Bank pipeline semantics: two-cycle requests, bypass, priority, tag joins."""

import random

import pytest

from tagmesh.scratchpad import RowOutOfRange, ScratchpadBank, SpadRequest
from tagmesh.tags import MixingFault


def full_write(row, data, tag=0):
    return SpadRequest("write", row, data=tuple(data), mask=(1 << len(data)) - 1,
                       tag=tag)


def prime(bank, row, data, tag=0):
    """Commit one row synchronously (two steps)."""
    assert bank.request(full_write(row, data, tag))
    bank.step()
    resp = bank.step()
    assert resp.fault is None
    return bank


def test_write_then_read_bypass():
    # (a) a read issued the cycle after a write to the same row returns the
    # new data: the commit lands in the same step that latches the read
    b = ScratchpadBank(4, 8, elem_bits=8)
    prime(b, 3, [1, 1, 1, 1])
    assert b.request(full_write(3, [9, 8, 7, 6], tag=2))
    b.step()
    assert b.request(SpadRequest("read", 3))
    b.step()  # write commits here, read latches the committed value
    resp = b.step()
    assert resp.read_data.elems == (9, 8, 7, 6)
    assert resp.read_data.tag == 2


def test_bypass_suppressed_on_faulting_write():
    # (b) a write killed by the tag check must not leak through the bypass
    b = ScratchpadBank(4, 8, elem_bits=8)
    prime(b, 3, [1, 1, 1, 1], tag=1)
    bad = SpadRequest("write", 3, data=(5, 5, 5, 5), mask=0b0011, tag=2)
    assert b.request(bad)
    b.step()
    assert b.request(SpadRequest("read", 3))
    resp = b.step()
    assert resp.fault is not None and (resp.fault.a, resp.fault.b) == (1, 2)
    resp = b.step()
    assert resp.read_data.elems == (1, 1, 1, 1)  # old data, old tag
    assert resp.read_data.tag == 1
    assert b.fault is not None  # and the fault is sticky


def test_write_priority_over_read():
    # (c) same-cycle contention: the write goes through, the read is refused
    b = ScratchpadBank(4, 8, elem_bits=8)
    assert b.request(full_write(0, [1, 2, 3, 4]))
    assert not b.request(SpadRequest("read", 0))
    b.step()
    resp = b.step()
    assert resp.fault is None
    assert b.dump()[0] == ((1, 2, 3, 4), 0)


def test_full_rate_stream_completes_in_n_plus_one():
    # (d) one write per cycle, N writes visible after N+1 steps
    n = 17
    b = ScratchpadBank(2, 32, elem_bits=8)
    steps = 0
    for i in range(n):
        assert b.request(full_write(i, [i, i], tag=0))
        b.step()
        steps += 1
    b.step()
    steps += 1
    assert steps == n + 1
    assert not b.busy()
    for i in range(n):
        assert b.dump()[i] == ((i, i), 0)


def test_partial_write_tag_rules():
    # (e) merges join tags; a join across domains faults and suppresses
    b = ScratchpadBank(4, 8, elem_bits=8)
    prime(b, 0, [1, 2, 3, 4], tag=0)

    # public partial write onto a public row: plain merge
    b.request(SpadRequest("write", 0, data=(9, 9, 0, 0), mask=0b0011, tag=0))
    b.step(); b.step()
    assert b.dump()[0] == ((9, 9, 3, 4), 0)

    # tagged partial write claims the row for its domain
    b.request(SpadRequest("write", 0, data=(0, 0, 7, 7), mask=0b1100, tag=3))
    b.step(); b.step()
    assert b.dump()[0] == ((9, 9, 7, 7), 3)

    # public partial write into a tagged row stays tagged
    b.request(SpadRequest("write", 0, data=(5, 0, 0, 0), mask=0b0001, tag=0))
    b.step(); b.step()
    assert b.dump()[0] == ((5, 9, 7, 7), 3)

    # partial write from a different domain faults, changes nothing
    b.request(SpadRequest("write", 0, data=(6, 6, 6, 6), mask=0b0110, tag=4))
    b.step()
    resp = b.step()
    assert resp.fault is not None
    assert b.dump()[0] == ((5, 9, 7, 7), 3)

    # full overwrite replaces the tag unconditionally, even across domains
    b.request(full_write(0, [8, 8, 8, 8], tag=4))
    b.step(); b.step()
    assert b.dump()[0] == ((8, 8, 8, 8), 4)


def test_accumulate_joins_even_at_full_mask():
    acc = ScratchpadBank(4, 4, elem_bits=32, accumulate=True)
    prime(acc, 1, [10, 20, 30, 40], tag=1)
    req = SpadRequest("write", 1, data=(1, 1, 1, 1), mask=0xF, tag=0,
                      accumulate=True)
    acc.request(req)
    acc.step(); acc.step()
    assert acc.dump()[1] == ((11, 21, 31, 41), 1)
    # accumulating another domain on top is a mix
    acc.request(SpadRequest("write", 1, data=(1, 1, 1, 1), mask=0xF, tag=2,
                            accumulate=True))
    acc.step()
    assert acc.step().fault is not None
    assert acc.dump()[1] == ((11, 21, 31, 41), 1)


def test_accumulate_wraps_at_elem_width():
    acc = ScratchpadBank(1, 2, elem_bits=32, accumulate=True)
    prime(acc, 0, [2**31 - 1])
    acc.request(SpadRequest("write", 0, data=(1,), mask=1, accumulate=True))
    acc.step(); acc.step()
    assert acc.dump()[0] == ((-(2**31),), 0)


def test_request_validation():
    b = ScratchpadBank(2, 4, elem_bits=8)
    with pytest.raises(RowOutOfRange):
        b.request(SpadRequest("read", 4))
    with pytest.raises(ValueError):
        SpadRequest("write", 0)  # no data
    with pytest.raises(ValueError):
        b.request(SpadRequest("write", 0, data=(1,), mask=1))  # wrong width
    with pytest.raises(ValueError):
        b.request(SpadRequest("write", 0, data=(1, 2), mask=0))
    with pytest.raises(ValueError):
        SpadRequest("refresh", 0)
    b.request(SpadRequest("read", 0))
    with pytest.raises(RuntimeError):
        b.request(SpadRequest("read", 1))  # one read per cycle
    with pytest.raises(RuntimeError):
        b.request(full_write(1, [0, 0]))  # arbitration already answered


def test_random_write_stream_matches_replay_model():
    """Pipelining must not change what ends up committed, in order."""
    rng = random.Random(11)
    width, depth = 4, 8
    b = ScratchpadBank(width, depth, elem_bits=8)
    rows = [[0] * width for _ in range(depth)]
    tags = [0] * depth

    for _ in range(400):
        if rng.random() < 0.8:
            row = rng.randrange(depth)
            mask = rng.randint(1, 15)
            tag = rng.choice([0, 0, 1, 2])
            data = tuple(rng.randint(-128, 127) for _ in range(width))
            b.request(SpadRequest("write", row, data=data, mask=mask, tag=tag))
            # replay the commit rules directly
            if mask == (1 << width) - 1:
                new_tag = tag
            elif 0 in (tags[row], tag) or tags[row] == tag:
                new_tag = tags[row] or tag
            else:
                new_tag = None  # the bank suppresses this write
            if new_tag is not None:
                for lane in range(width):
                    if mask >> lane & 1:
                        rows[row][lane] = data[lane]
                tags[row] = new_tag
        b.step()
    b.step()
    assert b.dump() == [(tuple(r), t) for r, t in zip(rows, tags)]
