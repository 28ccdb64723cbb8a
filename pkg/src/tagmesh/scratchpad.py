"""Row-tagged scratchpad banks with a two-stage read-check-write pipeline.

Each bank stores one tag per row. Requests take two cycles: stage 1 issues
the underlying memory read (row data for reads, the current row tag for
writes), stage 2 delivers the read response or commits the write. A write
followed by a read of the same row would need a same-cycle read-over-write,
which the modelled SRAM cannot do, so the freshly committed value is bypassed
into the reader instead. The bypass only forwards data when the write
actually committed; a write suppressed by a tag fault leaves the reader
seeing the old row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .bits import wrap_signed
from .tags import MixingFault, TaggedRow, check_tag, tag_join


class RowOutOfRange(Exception):
    """Row index outside the bank."""


@dataclass(frozen=True)
class SpadRequest:
    """One read or masked write against a bank.

    mask is a per-lane write-enable bitmask (bit i covers element i); data
    must supply a value for every lane, masked-off lanes are ignored.
    accumulate asks for old+new instead of replacement and is honoured only
    by accumulator banks.
    """

    kind: str  # "read" | "write"
    row: int
    data: Optional[tuple[int, ...]] = None
    mask: int = 0
    tag: int = 0
    accumulate: bool = False

    def __post_init__(self):
        if self.kind not in ("read", "write"):
            raise ValueError(f"bad request kind {self.kind!r}")
        check_tag(self.tag)
        if self.kind == "write":
            if self.data is None:
                raise ValueError("write without data")
            object.__setattr__(self, "data", tuple(self.data))


@dataclass
class SpadResponse:
    """Per-cycle bank output: a read row, a fault, or neither."""

    read_data: Optional[TaggedRow] = None
    fault: Optional[MixingFault] = None


@dataclass
class _Stage:
    req: SpadRequest
    # snapshots latched by stage 1 (post-bypass), consumed by stage 2
    row_data: list[int] = field(default_factory=list)
    row_tag: int = 0


class ScratchpadBank:
    """One bank: `depth` rows of `width` elements, one tag per row."""

    def __init__(self, width: int, depth: int, elem_bits: int, accumulate: bool = False):
        if width < 1 or depth < 1:
            raise ValueError("bank dimensions must be positive")
        self.width = width
        self.depth = depth
        self.elem_bits = elem_bits
        self.accumulate = accumulate
        self.full_mask = (1 << width) - 1
        self.rows = [[0] * width for _ in range(depth)]
        self.tags = [0] * depth
        self.fault: Optional[MixingFault] = None  # sticky
        self._offer_read: Optional[SpadRequest] = None
        self._offer_write: Optional[SpadRequest] = None
        self._stage2: Optional[_Stage] = None

    # -- request interface ---------------------------------------------------

    def request(self, req: SpadRequest) -> bool:
        """Offer a request for this cycle. Writes win over reads.

        At most one read and one write may be offered per cycle, and the
        write must be offered first (the arbitration answer is returned
        immediately, so a later write cannot retract an accepted read).
        Returns False for a read refused by a competing write; the caller
        retries on a later cycle.
        """
        if not 0 <= req.row < self.depth:
            raise RowOutOfRange(f"row {req.row} outside bank of {self.depth}")
        if req.kind == "write":
            if self._offer_write is not None:
                raise RuntimeError("two writes offered in one cycle")
            if self._offer_read is not None:
                raise RuntimeError("write offered after read was accepted this cycle")
            if len(req.data) != self.width:
                raise ValueError(f"write data of {len(req.data)} lanes, bank width {self.width}")
            if req.mask & ~self.full_mask or req.mask == 0:
                raise ValueError(f"bad mask {req.mask:#x} for width {self.width}")
            self._offer_write = req
            return True
        if self._offer_write is not None:
            return False  # write has priority; caller retries
        if self._offer_read is not None:
            raise RuntimeError("two reads offered in one cycle")
        self._offer_read = req
        return True

    # -- cycle advance --------------------------------------------------------

    def step(self) -> SpadResponse:
        """Advance one cycle; returns this cycle's stage-2 output."""
        resp = SpadResponse()
        s2 = self._stage2

        # stage 2: commit the write / deliver the read latched last cycle
        if s2 is not None:
            req = s2.req
            if req.kind == "write":
                self._commit(s2, resp)
            else:
                resp.read_data = TaggedRow(tuple(s2.row_data), s2.row_tag)

        # stage 1: latch row state for the request accepted this cycle.
        # Committing before latching is what implements the bypass: a read
        # (or a write's tag check) issued in the same cycle as a commit to
        # the same row sees the committed value, and only then, because a
        # faulted commit left the row untouched.
        nxt = self._offer_write or self._offer_read
        if nxt is not None:
            self._stage2 = _Stage(nxt, list(self.rows[nxt.row]), self.tags[nxt.row])
        else:
            self._stage2 = None
        self._offer_read = None
        self._offer_write = None
        return resp

    def _commit(self, s2: _Stage, resp: SpadResponse) -> None:
        req = s2.req
        current_tag = s2.row_tag
        acc = self.accumulate and req.accumulate
        if acc or req.mask != self.full_mask:
            # partial writes and accumulations merge with resident data,
            # so the resident tag must be compatible
            try:
                new_tag = tag_join(current_tag, req.tag)
            except MixingFault as f:
                fault = MixingFault(f.a, f.b, f"write to row {req.row}")
                if self.fault is None:
                    self.fault = fault
                resp.fault = fault
                return  # write suppressed; row unchanged
        else:
            new_tag = req.tag  # full overwrite replaces the tag unconditionally
        row = self.rows[req.row]
        for lane in range(self.width):
            if req.mask >> lane & 1:
                v = req.data[lane]
                if acc:
                    v = s2.row_data[lane] + v
                row[lane] = wrap_signed(v, self.elem_bits)
        self.tags[req.row] = new_tag

    # -- inspection ------------------------------------------------------------

    def busy(self) -> bool:
        return self._stage2 is not None or self._offer_read is not None \
            or self._offer_write is not None

    def dump(self) -> list[tuple[tuple[int, ...], int]]:
        """Committed contents only; in-flight stages are not state yet."""
        return [(tuple(r), t) for r, t in zip(self.rows, self.tags)]
