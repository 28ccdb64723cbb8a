"""Accelerator front end: command validation, sequencing, and the cycle loop.

Commands mirror a coprocessor interface: an opcode plus two 64-bit operand
registers, all three carrying tags. A command is accepted only if all three
tags are zero; a blinded operand could steer addresses or schedules, so it
is rejected before any state changes.

Execution is strictly in order and cycle-stepped. Every cycle the active
command's state machine offers scratchpad requests, the banks advance, read
responses route into mesh feeds or DMA stores, and the mesh advances. The
schedule depends only on the command stream and the static configuration,
never on data or tag values. The first fault from any stage halts the run;
memory keeps exactly the writes committed strictly before it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Optional, Sequence

from .bits import span_words
from .memory import OutOfRange, TaggedMemory, TraceEntry
from .mesh import Activation, Dataflow, Mesh, MeshConfig
from .scratchpad import RowOutOfRange, ScratchpadBank, SpadRequest
from .tags import MixingFault, TaggedRow, TaggedWord

# Scratchpad addressing: bit 15 selects the accumulator space; the low bits
# are a row index, global across the input banks. 0xffff is the "nothing
# here" sentinel: an all-zero D stream for compute, an all-zero preload.
ACC_SPACE = 1 << 15
NULL_ADDR = 0xFFFF

_U16 = 0xFFFF


class CommandKind(Enum):
    CONFIG = "config"
    MVIN = "mvin"
    MVOUT = "mvout"
    PRELOAD = "preload"
    COMPUTE = "compute"


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    rs1: TaggedWord = TaggedWord(0)
    rs2: TaggedWord = TaggedWord(0)
    inst_tag: int = 0


class FaultKind(Enum):
    COMMAND = "command"
    MIXING = "mixing"
    OUT_OF_RANGE = "out_of_range"


@dataclass(frozen=True)
class Fault:
    """What stopped the run and when; surfaced as a value, never swallowed."""

    kind: FaultKind
    cycle: int
    detail: str = ""


class CommandFault(Exception):
    """Command rejected at its turn; it caused no state change at all."""


class _Halt(Exception):
    def __init__(self, fault: Fault):
        self.fault = fault
        super().__init__(fault.detail)


@dataclass
class SimStats:
    total_cycles: int = 0
    mvin_count: int = 0
    mvout_count: int = 0
    preload_count: int = 0
    compute_count: int = 0
    compute_rows: int = 0
    tag_registers_used: int = 0
    per_pe_equivalent_registers: int = 0


@dataclass(frozen=True)
class SimObservation:
    """Everything an outside observer may legitimately see after a run.

    public_words maps address -> data for words whose final tag is 0; the
    data of blinded words never appears. tag_map is the final tag of every
    word in address order. The access trace and the cycle count come along
    whole: observation equality is deliberately stricter than the bare
    security property, so any traffic or timing divergence between paired
    runs is caught, not just a value leak.
    """

    public_words: dict[int, int]
    tag_map: bytes
    access_trace: tuple[TraceEntry, ...]
    total_cycles: int
    fault: Optional[Fault]


@dataclass(frozen=True)
class AccelConfig:
    """Static shape of one accelerator instance."""

    mesh_rows: int
    mesh_cols: int
    spad_depth: int = 128      # rows per input bank
    spad_banks: int = 2
    acc_depth: int = 64
    dataflow: Dataflow = Dataflow.WEIGHT_STATIONARY
    activation: Activation = Activation.NONE
    in_elem_bits: int = 8

    def __post_init__(self):
        if self.mesh_rows < 1 or self.mesh_cols < 1:
            raise ValueError("mesh dimensions must be positive")
        if self.in_elem_bits not in (8, 32):
            raise ValueError("input element width must be 8 or 32 bits")

    @property
    def spad_width(self) -> int:
        return max(self.mesh_rows, self.mesh_cols)

    @property
    def input_rows(self) -> int:
        return self.spad_banks * self.spad_depth


# -- operand packing -----------------------------------------------------------

_DATAFLOW_CODE = {Dataflow.WEIGHT_STATIONARY: 0, Dataflow.OUTPUT_STATIONARY: 1}
_ACTIVATION_CODE = {Activation.NONE: 0, Activation.RELU: 1}
_ELEM_CODE = {8: 0, 32: 1}

_CODE_DATAFLOW = {v: k for k, v in _DATAFLOW_CODE.items()}
_CODE_ACTIVATION = {v: k for k, v in _ACTIVATION_CODE.items()}
_CODE_ELEM = {v: k for k, v in _ELEM_CODE.items()}


def enc_config(dataflow: Dataflow, activation: Activation, in_elem_bits: int,
               k: int = 0, n: int = 0, m: int = 0) -> tuple[int, int]:
    rs1 = (_DATAFLOW_CODE[dataflow]
           | _ACTIVATION_CODE[activation] << 2
           | _ELEM_CODE[in_elem_bits] << 4)
    rs2 = (k & _U16) | (n & _U16) << 16 | (m & _U16) << 32
    return rs1, rs2


def enc_move(mem_addr: int, spad_addr: int, cols: int = 0) -> tuple[int, int]:
    """MVIN/MVOUT operands; cols = element count, 0 meaning the bank width."""
    return mem_addr, (spad_addr & _U16) | (cols & 0xFF) << 16


def enc_preload(spad_addr: int, count: int) -> tuple[int, int]:
    return spad_addr & _U16, count & _U16


def enc_compute(a_addr: int, second_addr: int, rows: int,
                dest_row: int, accumulate: bool = False) -> tuple[int, int]:
    """second_addr: D rows when weight-stationary, B rows otherwise."""
    rs1 = (a_addr & _U16) | (second_addr & _U16) << 16 | (rows & _U16) << 32
    rs2 = (dest_row & _U16) | int(accumulate) << 16
    return rs1, rs2


def make_command(kind: CommandKind, rs1: int = 0, rs2: int = 0, inst_tag: int = 0,
                 rs1_tag: int = 0, rs2_tag: int = 0) -> Command:
    return Command(kind, TaggedWord(rs1, rs1_tag), TaggedWord(rs2, rs2_tag), inst_tag)


def decode_fields(cmd: Command) -> dict:
    """Unpack a command's operand fields; CommandFault on undefined codes."""
    r1, r2 = cmd.rs1.data, cmd.rs2.data
    if cmd.kind is CommandKind.CONFIG:
        if (r1 & 3) not in _CODE_DATAFLOW or (r1 >> 2 & 3) not in _CODE_ACTIVATION:
            raise CommandFault(f"bad config word {r1:#x}")
        return {
            "dataflow": _CODE_DATAFLOW[r1 & 3],
            "activation": _CODE_ACTIVATION[r1 >> 2 & 3],
            "in_elem_bits": _CODE_ELEM[r1 >> 4 & 1],
            "k": r2 & _U16, "n": r2 >> 16 & _U16, "m": r2 >> 32 & _U16,
        }
    if cmd.kind in (CommandKind.MVIN, CommandKind.MVOUT):
        return {"mem_addr": r1, "spad_addr": r2 & _U16, "cols": r2 >> 16 & 0xFF}
    if cmd.kind is CommandKind.PRELOAD:
        return {"spad_addr": r1 & _U16, "count": r2 & _U16}
    return {"a_addr": r1 & _U16, "second_addr": r1 >> 16 & _U16,
            "rows": r1 >> 32 & _U16, "dest_row": r2 & _U16,
            "accumulate": bool(r2 >> 16 & 1)}


# -- the controller ------------------------------------------------------------

# machines yield, per cycle, a tuple of (bank index, request, route key)
_Offer = tuple[int, SpadRequest, Optional[tuple]]


class Controller:
    """One accelerator wired to one memory; run() may be called exactly once."""

    def __init__(self, config: AccelConfig, mem: TaggedMemory,
                 trace_hook: Optional[Callable[[str], None]] = None):
        self.config = config
        self.mem = mem
        self.cycle = 0
        self.stats = SimStats()
        self.fault: Optional[Fault] = None
        self._trace = trace_hook
        self.ibanks = [
            ScratchpadBank(config.spad_width, config.spad_depth, elem_bits=8)
            for _ in range(config.spad_banks)
        ]
        # accumulator width equals the mesh width so result writes are
        # full-row and never trip the partial-write tag join by accident
        self.abank = ScratchpadBank(config.mesh_cols, config.acc_depth,
                                    elem_bits=32, accumulate=True)
        self._banks: list[ScratchpadBank] = [*self.ibanks, self.abank]
        self._acc_bank = len(self.ibanks)
        self._routes: list[deque] = [deque() for _ in self._banks]
        self._dataflow = config.dataflow
        self._activation = config.activation
        self._in_elem_bits = config.in_elem_bits
        self.mesh = Mesh(MeshConfig(config.mesh_rows, config.mesh_cols, self._dataflow))
        self._queue: list[Command] = []
        self._ran = False
        self._label = ""
        # per-command plumbing shared between machines and response dispatch
        self._pend_emit: Optional[SpadRequest] = None
        self._emit_base = 0
        self._emit_acc = False
        self._emit_idx = 0
        self._feed_parts: dict[int, dict] = {}
        self._feed_next = 0
        self._feed_zero_d = False
        self._preload_buf: list[TaggedRow] = []
        self._stage_a: list[Optional[TaggedRow]] = []
        self._stage_got = 0
        self._mvout_row: Optional[TaggedRow] = None

    # -- address plumbing --------------------------------------------------------

    def _locate(self, spad_addr: int) -> tuple[int, int]:
        """Map a scratchpad address to (bank index, local row)."""
        if spad_addr & ACC_SPACE:
            return self._acc_bank, spad_addr & ~ACC_SPACE & _U16
        bank, row = divmod(spad_addr, self.config.spad_depth)
        if bank >= len(self.ibanks):
            raise RowOutOfRange(f"spad row {spad_addr} beyond the input banks")
        return bank, row

    def _read_offer(self, spad_addr: int, route: tuple) -> _Offer:
        bank, row = self._locate(spad_addr)
        return bank, SpadRequest("read", row), route

    # -- command issue / run -------------------------------------------------------

    @staticmethod
    def _check_tags(cmd: Command) -> None:
        if cmd.inst_tag or cmd.rs1.tag or cmd.rs2.tag:
            raise CommandFault(
                f"blinded {cmd.kind.value} command (tags "
                f"{cmd.inst_tag}/{cmd.rs1.tag}/{cmd.rs2.tag})")

    def issue(self, cmd: Command) -> None:
        """Append one command to the execution queue.

        A command carrying any nonzero tag is refused on the spot: it never
        enters the queue and leaves no trace, because even its acceptance
        timing must not depend on blinded values.
        """
        self._check_tags(cmd)
        self._queue.append(cmd)

    def run(self, commands: Optional[Sequence[Command]] = None
            ) -> tuple[SimObservation, SimStats]:
        """Execute queued commands in order until done or the first fault.

        Commands passed here (the usual path for whole workloads) get the
        same tag check as issue(), applied at their turn, so a blinded
        command mid-sequence halts the run at a deterministic cycle.
        """
        if self._ran:
            raise RuntimeError("controller already ran; make a fresh one")
        self._ran = True
        if commands:
            self._queue.extend(commands)
        try:
            for cmd in self._queue:
                self._label = cmd.kind.value
                self._check_tags(cmd)
                for offers in self._machine(cmd):
                    self._tick(offers)
            self._label = "drain"
            while self._pend_emit is not None or any(b.busy() for b in self._banks):
                self._tick(())
        except _Halt as e:
            self.fault = e.fault
        except CommandFault as e:
            self.fault = Fault(FaultKind.COMMAND, self.cycle, str(e))
        except MixingFault as e:
            self.fault = Fault(FaultKind.MIXING, self.cycle, str(e))
        except (OutOfRange, RowOutOfRange) as e:
            self.fault = Fault(FaultKind.OUT_OF_RANGE, self.cycle, str(e))
        self.stats.total_cycles = self.cycle
        self.stats.tag_registers_used = self.mesh.tag_register_count()
        self.stats.per_pe_equivalent_registers = self.mesh.per_pe_register_count()
        obs = SimObservation(
            public_words=self.mem.public_words(),
            tag_map=self.mem.tag_map(),
            access_trace=tuple(self.mem.trace),
            total_cycles=self.cycle,
            fault=self.fault,
        )
        return obs, self.stats

    # -- one cycle -------------------------------------------------------------------

    def _tick(self, offers: Sequence[_Offer]) -> None:
        # 1. result writeback from last cycle's emission goes in first:
        #    banks arbitrate writes ahead of reads, so it must be offered first
        emitted = self._pend_emit
        self._pend_emit = None
        if emitted is not None:
            self.abank.request(emitted)
        # 2. the active machine's offers
        for bank_idx, req, route in offers:
            if not self._banks[bank_idx].request(req):
                # in-order execution never collides a machine read with a
                # write; hitting this means the schedule itself is broken
                raise RuntimeError("scratchpad refused a scheduled read")
            if route is not None:
                self._routes[bank_idx].append(route)
        # 3. banks advance; responses route back in FIFO order per bank
        for i, bank in enumerate(self._banks):
            if not bank.busy():
                continue
            resp = bank.step()
            if resp.fault is not None:
                raise _Halt(Fault(FaultKind.MIXING, self.cycle, str(resp.fault)))
            if resp.read_data is not None:
                self._dispatch(self._routes[i].popleft(), resp.read_data)
        # 4. mesh advances; an emerging row becomes next cycle's acc write
        out = self.mesh.step()
        if out is not None:
            dest = self._emit_base + self._emit_idx
            self._pend_emit = SpadRequest(
                "write", dest, data=out.elems, mask=self.abank.full_mask,
                tag=out.tag, accumulate=self._emit_acc)
            self._emit_idx += 1
        if self._trace is not None:
            self._trace(self._trace_line(out))
        self.cycle += 1

    def _dispatch(self, route: tuple, row: TaggedRow) -> None:
        """Hand one read response to whatever asked for it."""
        R, C = self.config.mesh_rows, self.config.mesh_cols
        kind = route[0]
        if kind == "preload":
            self._preload_buf.append(row)
        elif kind == "feed_a":
            part = self._feed_parts.setdefault(route[1], {})
            part["a"] = TaggedRow(row.elems[:R], row.tag)
            if self._feed_zero_d:
                part["d"] = TaggedRow((0,) * C, 0)
            self._try_feed()
        elif kind == "feed_d":
            part = self._feed_parts.setdefault(route[1], {})
            part["d"] = TaggedRow(row.elems[:C], row.tag)
            self._try_feed()
        elif kind == "stage_a":
            self._stage_a[route[1]] = row
            self._stage_got += 1
        elif kind == "feed_b":
            k = route[1]
            a_col = [self._stage_a[i].elems[k] for i in range(R)]
            self.mesh.feed_stream(a_col, TaggedRow(row.elems[:C], row.tag))
        elif kind == "mvout":
            self._mvout_row = row
        else:
            raise AssertionError(f"unroutable response {route!r}")

    def _try_feed(self) -> None:
        # feed strictly in row order; responses for row i+1 can never
        # overtake row i, but the (a, d) halves of one row arrive split
        while True:
            part = self._feed_parts.get(self._feed_next)
            if part is None or "a" not in part or "d" not in part:
                return
            self.mesh.feed_row(part["a"], part["d"])
            del self._feed_parts[self._feed_next]
            self._feed_next += 1

    def _trace_line(self, emitted: Optional[TaggedRow]) -> str:
        m = self.mesh
        slots = {i: t for i, t in enumerate(m.tag_queue()) if t is not None}
        line = (f"cycle {self.cycle:>6} | {self._label:<7} | "
                f"in_flight={m.in_flight()} wavefront={list(m.wavefront())} "
                f"tag_slots={slots}")
        if emitted is not None:
            line += f" | emit tag={emitted.tag}"
        return line

    # -- per-command machines ----------------------------------------------------------

    def _machine(self, cmd: Command) -> Iterator[tuple[_Offer, ...]]:
        """Validate one command and return its cycle-by-cycle generator.

        Form errors (undefined codes, impossible counts, partial-word spans)
        are CommandFaults raised here, before the first cycle. Resource
        range errors surface from the banks or the memory mid-flight.
        """
        f = decode_fields(cmd)
        if cmd.kind is CommandKind.CONFIG:
            return self._run_config(f)
        if cmd.kind is CommandKind.MVIN:
            self.stats.mvin_count += 1
            return self._run_mvin(f)
        if cmd.kind is CommandKind.MVOUT:
            self.stats.mvout_count += 1
            return self._run_mvout(f)
        if cmd.kind is CommandKind.PRELOAD:
            if f["count"] != self.config.mesh_rows:
                raise CommandFault(
                    f"preload of {f['count']} rows into a "
                    f"{self.config.mesh_rows}-row mesh")
            if f["spad_addr"] != NULL_ADDR and f["spad_addr"] & ACC_SPACE:
                raise CommandFault("preload source must be an input bank")
            self.stats.preload_count += 1
            return self._run_preload(f)
        # COMPUTE
        if f["rows"] < 1:
            raise CommandFault("compute of zero rows")
        if not self.mesh.preloaded:
            raise CommandFault("compute before any preload")
        if self._dataflow is Dataflow.OUTPUT_STATIONARY \
                and f["rows"] != self.config.mesh_rows:
            raise CommandFault(
                "output-stationary streams run exactly one reduction step "
                f"per mesh row; got {f['rows']}")
        if f["a_addr"] & ACC_SPACE or (
                f["second_addr"] != NULL_ADDR and f["second_addr"] & ACC_SPACE):
            raise CommandFault("compute operands must come from input banks")
        self.stats.compute_count += 1
        self.stats.compute_rows += f["rows"]
        return self._run_compute(f)

    def _move_width(self, f: dict) -> tuple[int, int, int]:
        """(element count, element bits, bank index) for one MVIN/MVOUT."""
        bank, _ = self._locate(f["spad_addr"])
        ebits = 32 if bank == self._acc_bank else self._in_elem_bits
        width = self._banks[bank].width
        cols = f["cols"] or width
        if cols > width:
            raise CommandFault(f"{cols} elements into a {width}-wide bank")
        try:
            span_words(cols, ebits)
        except ValueError as e:
            raise CommandFault(str(e)) from None
        return cols, ebits, bank

    def _run_config(self, f: dict) -> Iterator[tuple[_Offer, ...]]:
        self._dataflow = f["dataflow"]
        self._activation = f["activation"]
        self._in_elem_bits = f["in_elem_bits"]
        # reconfiguring rebuilds the mesh; scratchpad contents survive
        self.mesh = Mesh(MeshConfig(self.config.mesh_rows,
                                    self.config.mesh_cols, self._dataflow))
        yield ()

    def _run_mvin(self, f: dict) -> Iterator[tuple[_Offer, ...]]:
        cols, ebits, bank_idx = self._move_width(f)
        _, row = self._locate(f["spad_addr"])
        bank = self._banks[bank_idx]
        span = span_words(cols, ebits)
        loaded = self.mem.dma_load_row(f["mem_addr"], cols, ebits, self.cycle)
        for _ in range(span - 1):
            yield ()  # burst occupies the port for its whole length
        # the write covers exactly the lanes that were transferred: a
        # full-width row overwrites (tag replaced), a narrower one merges
        # with the resident row and so goes through the tag join
        data = loaded.elems + (0,) * (bank.width - cols)
        yield ((bank_idx, SpadRequest("write", row, data=data,
                                      mask=(1 << cols) - 1, tag=loaded.tag),
                None),)

    def _run_mvout(self, f: dict) -> Iterator[tuple[_Offer, ...]]:
        cols, ebits, bank_idx = self._move_width(f)
        self._mvout_row = None
        yield (self._read_offer(f["spad_addr"], ("mvout",)),)
        yield ()
        row = self._mvout_row
        assert row is not None
        vals = list(row.elems[:cols])
        if bank_idx == self._acc_bank and self._activation is Activation.RELU:
            # results leave through here; the activation is applied at the
            # boundary so tiles can keep accumulating raw partial sums
            vals = [v if v > 0 else 0 for v in vals]
        self.mem.dma_store_row(f["mem_addr"], TaggedRow(vals, row.tag),
                               ebits, self.cycle)
        for _ in range(span_words(cols, ebits)):
            yield ()

    def _run_preload(self, f: dict) -> Iterator[tuple[_Offer, ...]]:
        R, C = self.config.mesh_rows, self.config.mesh_cols
        if f["spad_addr"] == NULL_ADDR:
            self.mesh.preload([TaggedRow((0,) * C) for _ in range(R)])
            yield ()
            return
        self._preload_buf = []
        for i in range(R):
            yield (self._read_offer(f["spad_addr"] + i, ("preload", i)),)
        while len(self._preload_buf) < R:
            yield ()
        self.mesh.preload(
            [TaggedRow(r.elems[:C], r.tag) for r in self._preload_buf])
        yield ()

    def _run_compute(self, f: dict) -> Iterator[tuple[_Offer, ...]]:
        self._emit_base = f["dest_row"]
        self._emit_acc = f["accumulate"]
        self._emit_idx = 0
        n = f["rows"]
        if self._dataflow is Dataflow.WEIGHT_STATIONARY:
            self._feed_parts = {}
            self._feed_next = 0
            self._feed_zero_d = f["second_addr"] == NULL_ADDR
            for i in range(n):
                yield (self._read_offer(f["a_addr"] + i, ("feed_a", i)),)
                if self._feed_zero_d:
                    yield ()  # keep the cadence; d slot carries nothing
                else:
                    yield (self._read_offer(f["second_addr"] + i, ("feed_d", i)),)
        else:
            self._stage_a = [None] * n
            self._stage_got = 0
            for i in range(n):
                yield (self._read_offer(f["a_addr"] + i, ("stage_a", i)),)
            while self._stage_got < n:
                yield ()
            self.mesh.start_rows([r.tag for r in self._stage_a])
            for k in range(n):
                yield (self._read_offer(f["second_addr"] + k, ("feed_b", k)),)
        while self._emit_idx < n:
            yield ()
        yield ()  # last writeback offered
        yield ()  # and committed

    # -- inspection --------------------------------------------------------------------

    def spad_dump(self) -> dict:
        return {
            "input": [b.dump() for b in self.ibanks],
            "acc": self.abank.dump(),
        }
