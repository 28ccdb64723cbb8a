"""Tagged main memory and the row-granularity DMA transfers against it.

Every 64-bit word carries an 8-bit tag. Row loads fold the word tags down to
one row tag (faulting if two domains meet); row stores replicate the row tag
back over every word written. All accesses land in an ordered trace so a
verifier can compare the full memory-visible behaviour of two runs.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

from .bits import pack_row, span_words, unpack_row
from .tags import TaggedRow, TaggedWord, check_tag, tag_fold


class OutOfRange(Exception):
    """Address arithmetic escaped the configured memory size."""


class TraceEntry(NamedTuple):
    cycle: int
    kind: str  # "R" or "W"
    addr: int
    length: int


class TaggedMemory:
    """Word-addressed memory; addresses are word indices, not bytes."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("memory size must be positive")
        self.size = size
        self._data = [0] * size
        self._tags = bytearray(size)
        self.trace: list[TraceEntry] = []

    def _check_span(self, addr: int, n: int) -> None:
        # never wraps around: a span must sit inside [0, size)
        if n < 1:
            raise OutOfRange(f"read/write of {n} words")
        if addr < 0 or addr + n > self.size:
            raise OutOfRange(f"[{addr}, {addr + n}) outside memory of {self.size} words")

    # -- raw word access (traced) ------------------------------------------

    def read(self, addr: int, n: int, cycle: int) -> list[TaggedWord]:
        self._check_span(addr, n)
        self.trace.append(TraceEntry(cycle, "R", addr, n))
        return [TaggedWord(self._data[a], self._tags[a]) for a in range(addr, addr + n)]

    def write(self, addr: int, words: Sequence[TaggedWord], cycle: int) -> None:
        self._check_span(addr, len(words))
        self.trace.append(TraceEntry(cycle, "W", addr, len(words)))
        for i, w in enumerate(words):
            self._data[addr + i] = w.data
            self._tags[addr + i] = w.tag

    # -- untraced debug/setup access ---------------------------------------

    def poke(self, addr: int, data: int, tag: int = 0) -> None:
        self._check_span(addr, 1)
        if not 0 <= data < (1 << 64):
            raise ValueError(f"word {data:#x} outside 64 bits")
        self._data[addr] = data
        self._tags[addr] = check_tag(tag)

    def peek(self, addr: int) -> TaggedWord:
        self._check_span(addr, 1)
        return TaggedWord(self._data[addr], self._tags[addr])

    # -- row transfers -------------------------------------------------------

    def dma_load_row(self, addr: int, n_elems: int, elem_bits: int, cycle: int) -> TaggedRow:
        """Load one row, folding the covered word tags into a single row tag."""
        n = span_words(n_elems, elem_bits)
        words = self.read(addr, n, cycle)
        tag = tag_fold(w.tag for w in words)
        return TaggedRow(unpack_row([w.data for w in words], n_elems, elem_bits), tag)

    def dma_store_row(self, addr: int, row: TaggedRow, elem_bits: int, cycle: int) -> None:
        """Store one row, replicating its tag over every word written."""
        words = [TaggedWord(w, row.tag) for w in pack_row(row.elems, elem_bits)]
        self.write(addr, words, cycle)

    # -- whole-image helpers -------------------------------------------------

    def load_image(self, records: Sequence[dict]) -> None:
        for rec in records:
            data = rec["data"]
            if isinstance(data, str):
                data = int(data, 16)
            self.poke(rec["addr"], data, rec.get("tag", 0))

    def image(self) -> list[dict]:
        out = []
        for a in range(self.size):
            if self._data[a] or self._tags[a]:
                out.append({"addr": a, "data": f"0x{self._data[a]:016x}", "tag": self._tags[a]})
        return out

    def tag_map(self) -> bytes:
        return bytes(self._tags)

    def public_words(self) -> dict[int, int]:
        """Data of every word whose tag is 0; blinded words never appear."""
        tags = self._tags
        data = self._data
        return {a: data[a] for a in range(self.size) if tags[a] == 0}

    def clone(self) -> "TaggedMemory":
        """Copy of data and tags with a fresh, empty trace."""
        m = TaggedMemory(self.size)
        m._data = list(self._data)
        m._tags = bytearray(self._tags)
        return m
