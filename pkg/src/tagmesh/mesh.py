"""Cycle-stepped systolic array with row-granularity tag propagation.

Values move through the processing-element grid the way the skewed wavefront
does in hardware; tags never enter the grid at all. Each output row's tag
comes from a parallel delay queue whose depth equals the array's constant
output latency, so tag storage grows with rows + cols instead of rows * cols.

Two dataflows are modelled. Weight-stationary holds B in the grid and
streams (a_i, d_i) pairs; the stationary tag is the fold of B's row tags and
each output tag is fold(a_i, d_i, stationary). Output-stationary holds D in
the grid (keeping D's per-row tags), streams one A column plus one B row per
cycle, folds the streamed B tags as they arrive, and resolves output row i's
tag as fold(a_i, d_i, b_fold). Both reduce to the same per-row policy; only
the place where the B fold happens differs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .bits import wrap32
from .tags import MixingFault, TaggedRow, tag_fold, tag_join


class Dataflow(Enum):
    WEIGHT_STATIONARY = "weight_stationary"
    OUTPUT_STATIONARY = "output_stationary"


class Activation(Enum):
    NONE = "none"
    RELU = "relu"


@dataclass(frozen=True)
class MeshConfig:
    rows: int
    cols: int
    dataflow: Dataflow = Dataflow.WEIGHT_STATIONARY
    activation: Activation = Activation.NONE

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("mesh dimensions must be positive")

    @property
    def output_latency(self) -> int:
        # a pure function of the configuration; no data or tag ever moves it
        if self.dataflow is Dataflow.WEIGHT_STATIONARY:
            return self.rows + self.cols
        return 2 * self.rows + self.cols


def output_row_tag(a_tag: int, d_tag: int, stationary_tag: int) -> int:
    """Tag of one output row: the fold of everything that row depends on."""
    return tag_fold((a_tag, d_tag, stationary_tag))


@dataclass(frozen=True)
class Matrix:
    """Rows of TaggedRow; the unit the mesh and the oracles agree on."""

    rows: tuple[TaggedRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if self.rows:
            w = len(self.rows[0])
            if any(len(r) != w for r in self.rows):
                raise ValueError("ragged matrix")

    @classmethod
    def from_values(cls, values, tags=0) -> "Matrix":
        if isinstance(tags, int):
            tags = [tags] * len(values)
        return cls(tuple(TaggedRow(tuple(v), t) for v, t in zip(values, tags)))

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.rows[0]) if self.rows else 0)

    def values(self) -> list[list[int]]:
        return [list(r.elems) for r in self.rows]

    def row_tags(self) -> list[int]:
        return [r.tag for r in self.rows]


class Mesh:
    """One systolic array instance plus its tag delay queue."""

    def __init__(self, config: MeshConfig):
        self.config = config
        R, C = config.rows, config.cols
        self._ws = config.dataflow is Dataflow.WEIGHT_STATIONARY
        self._relu = config.activation is Activation.RELU
        self._b = np.zeros((R, C), dtype=np.int32)    # WS stationary operands
        self._acc = np.zeros((R, C), dtype=np.int32)  # OS per-PE accumulators
        # per-PE registers for the moving values: a flows right, v flows down
        # (v is the partial sum in WS, the streamed B value in OS)
        self._a_reg = np.zeros((R, C), dtype=np.int32)
        self._v_reg = np.zeros((R, C), dtype=np.int32)
        self._a_nxt = np.zeros((R, C), dtype=np.int32)
        self._v_nxt = np.zeros((R, C), dtype=np.int32)
        # input skew lines and (WS) output deskew lines
        self._left = [deque([0] * r) for r in range(R)]
        self._top = [deque([0] * c) for c in range(C)]
        self._deskew = [deque([0] * (C - c + 1)) for c in range(C)]
        self._tag_q: deque[Optional[int]] = deque([None] * config.output_latency)
        self._q_valid = 0
        self.fault: Optional[MixingFault] = None  # sticky
        self.cycle = 0
        self.rows_emitted = 0
        self._preloaded = False
        self._stationary_tag: Optional[int] = None      # WS
        self._d_row_tags: Optional[tuple[int, ...]] = None  # OS
        self._row_partials: Optional[tuple[int, ...]] = None
        self._b_running = 0
        self._feed_count = 0
        self._drain_idx = 0
        self._pending = None  # values injected this cycle: (a_vec, v_vec, tag)

    # -- loading stationary state ---------------------------------------------

    def preload(self, stationary: Sequence[TaggedRow]) -> None:
        """Latch the stationary matrix: B when weight-stationary, D otherwise.

        Weight-stationary folds the row tags into one stationary tag and
        faults right here if B itself mixes domains. Output-stationary keeps
        D's per-row tags because output row i only ever depends on d_i.
        """
        R, C = self.config.rows, self.config.cols
        if len(stationary) != R:
            raise ValueError(f"preload of {len(stationary)} rows into {R}-row mesh")
        if any(len(r) != C for r in stationary):
            raise ValueError("preload row width mismatch")
        if self._q_valid or self._pending is not None:
            raise RuntimeError("preload while rows are in flight")
        vals = [[wrap32(v) for v in r.elems] for r in stationary]
        if self._ws:
            try:
                tag = tag_fold(r.tag for r in stationary)
            except MixingFault as f:
                fault = MixingFault(f.a, f.b, "stationary preload")
                if self.fault is None:
                    self.fault = fault
                raise fault from None
            self._b[:] = vals
            self._stationary_tag = tag
        else:
            self._acc[:] = vals
            self._d_row_tags = tuple(r.tag for r in stationary)
        self._row_partials = None
        self._b_running = 0
        self._feed_count = 0
        self._drain_idx = 0
        self._preloaded = True

    # -- weight-stationary streaming -------------------------------------------

    def feed_row(self, a_row: TaggedRow, d_row: TaggedRow) -> None:
        """Inject one (a_i, d_i) pair; its output emerges output_latency later.

        The output tag is computed before any value enters the grid and
        parked in the delay queue; a mixing fault keeps the row out entirely.
        """
        if not self._ws:
            raise RuntimeError("feed_row on an output-stationary mesh")
        self._feed_checks(len(a_row), self.config.rows, len(d_row), self.config.cols)
        try:
            tag = output_row_tag(a_row.tag, d_row.tag, self._stationary_tag)
        except MixingFault as f:
            fault = MixingFault(f.a, f.b, f"feed of row {self._feed_count}")
            if self.fault is None:
                self.fault = fault
            raise fault from None
        a = [wrap32(v) for v in a_row.elems]
        d = [wrap32(v) for v in d_row.elems]
        self._pending = (a, d, tag)
        self._feed_count += 1

    # -- output-stationary streaming --------------------------------------------

    def start_rows(self, a_row_tags: Sequence[int]) -> None:
        """Register the A row tags for the coming stream (one per mesh row).

        Tags are known before values enter the array, so each row's
        a_i/d_i compatibility is checked now.
        """
        if self._ws:
            raise RuntimeError("start_rows on a weight-stationary mesh")
        if not self._preloaded:
            raise RuntimeError("start_rows before preload")
        if self.fault is not None:
            raise RuntimeError("mesh is faulted")
        if len(a_row_tags) != self.config.rows:
            raise ValueError("one A tag per mesh row required")
        try:
            partials = tuple(
                tag_join(a, d) for a, d in zip(a_row_tags, self._d_row_tags))
        except MixingFault as f:
            fault = MixingFault(f.a, f.b, "stream start")
            if self.fault is None:
                self.fault = fault
            raise fault from None
        self._row_partials = partials
        self._b_running = 0
        self._feed_count = 0
        self._drain_idx = 0

    def feed_stream(self, a_col: Sequence[int], b_row: TaggedRow) -> None:
        """Inject reduction step k: column k of A and row k of B.

        B tags fold into a running tag checked against every pending row's
        partial, so a mix faults at the feed that introduces it; the final
        output tags resolve when rows drain. Exactly `rows` steps make one
        stream (tiles are square along the reduction axis).
        """
        if self._ws:
            raise RuntimeError("feed_stream on a weight-stationary mesh")
        if self._row_partials is None:
            raise RuntimeError("feed_stream before start_rows")
        if self._feed_count >= self.config.rows:
            raise RuntimeError("stream already complete")
        self._feed_checks(len(a_col), self.config.rows, len(b_row), self.config.cols)
        try:
            nb = tag_join(self._b_running, b_row.tag)
            if nb != self._b_running:
                for p in self._row_partials:
                    tag_join(p, nb)
        except MixingFault as f:
            fault = MixingFault(f.a, f.b, f"feed of step {self._feed_count}")
            if self.fault is None:
                self.fault = fault
            raise fault from None
        self._b_running = nb
        a = [wrap32(v) for v in a_col]
        b = [wrap32(v) for v in b_row.elems]
        self._pending = (a, b, self._row_partials[self._feed_count])
        self._feed_count += 1

    def _feed_checks(self, got_a: int, want_a: int, got_v: int, want_v: int) -> None:
        if not self._preloaded:
            raise RuntimeError("feed before preload")
        if self.fault is not None:
            raise RuntimeError("mesh is faulted")
        if self._pending is not None:
            raise RuntimeError("two feeds in one cycle")
        if got_a != want_a or got_v != want_v:
            raise ValueError(
                f"feed of {got_a}x{got_v} into {want_a}x{want_v} mesh")

    # -- cycle advance -----------------------------------------------------------

    def step(self) -> Optional[TaggedRow]:
        """Advance one cycle; returns the row emerging this cycle, if any.

        A row fed at cycle t emerges at exactly t + output_latency. After a
        fault nothing is ever emitted again, including rows already in
        flight. Timing depends only on the feed schedule, never on values.
        """
        pending = self._pending
        self._pending = None
        if self._q_valid == 0 and pending is None:
            self.cycle += 1
            return None  # quiescent; grid holds only flushed-out zeros

        self._tag_q.append(pending[2] if pending else None)
        if pending:
            self._q_valid += 1
        out_tag = self._tag_q.popleft()
        if out_tag is not None:
            self._q_valid -= 1

        # edge injections for this cycle (zero bubbles when nothing was fed)
        a_edge = []
        for r, q in enumerate(self._left):
            q.append(pending[0][r] if pending else 0)
            a_edge.append(q.popleft())
        v_edge = []
        for c, q in enumerate(self._top):
            q.append(pending[1][c] if pending else 0)
            v_edge.append(q.popleft())

        # one grid cycle: everything latches simultaneously
        an, vn = self._a_nxt, self._v_nxt
        an[:, 0] = a_edge
        an[:, 1:] = self._a_reg[:, :-1]
        vn[0, :] = v_edge
        vn[1:, :] = self._v_reg[:-1, :]
        if self._ws:
            vn += an * self._b            # partial sums accumulate moving down
        else:
            self._acc += an * vn          # products accumulate in place
        self._a_reg, self._a_nxt = an, self._a_reg
        self._v_reg, self._v_nxt = vn, self._v_reg

        emit_vals = None
        if self._ws:
            bottom = self._v_reg[-1, :]
            outs = []
            for c, q in enumerate(self._deskew):
                q.append(int(bottom[c]))
                outs.append(q.popleft())
            if out_tag is not None:
                emit_vals = outs
        elif out_tag is not None:
            emit_vals = [int(v) for v in self._acc[self._drain_idx, :]]

        self.cycle += 1
        if out_tag is None or self.fault is not None:
            return None
        if self._ws:
            tag = out_tag
        else:
            tag = tag_join(out_tag, self._b_running)  # cannot fault: checked at feed
            self._drain_idx += 1
        if self._relu:
            emit_vals = [v if v > 0 else 0 for v in emit_vals]
        self.rows_emitted += 1
        return TaggedRow(tuple(emit_vals), tag)

    # -- instrumentation -----------------------------------------------------------

    @property
    def preloaded(self) -> bool:
        return self._preloaded

    def in_flight(self) -> int:
        return self._q_valid

    def tag_queue(self) -> tuple[Optional[int], ...]:
        return tuple(self._tag_q)

    def wavefront(self) -> tuple[int, ...]:
        """Ages (cycles since feed) of the rows currently inside the array."""
        depth = self.config.output_latency
        return tuple(depth - 1 - i for i, t in enumerate(self._tag_q) if t is not None)

    def tag_register_count(self) -> int:
        """Tag storage actually used: one delay-queue slot per latency cycle."""
        return self.config.output_latency

    def per_pe_register_count(self) -> int:
        """What per-PE tagging would have cost on the same array."""
        return self.config.rows * self.config.cols
