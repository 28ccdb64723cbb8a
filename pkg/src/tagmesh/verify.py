"""Verification harness: functional oracles and non-interference checking.

Two independent ground truths live here. oracle_matmul is a naive triple
loop with the same integer semantics as the mesh; oracle_output_tags
restates the tag policy as plain set arithmetic, sharing no code with the
lattice the simulator uses, so a bug in one cannot hide in the other.

The security side is paired execution. Two memories that agree on tags and
on every public word are run through identical command streams; the public
projections of the results (public words, tag maps, access traces, cycle
counts, fault kind and cycle) must be equal. The fuzzer instantiates that
check over randomized workload templates, and a deliberate-corruption mode
(tag_join stubbed to a constant) exists to prove the fuzzer would actually
notice a broken policy.
"""

from __future__ import annotations

import random
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import memory as memory_mod
from . import mesh as mesh_mod
from . import scratchpad as scratchpad_mod
from . import tags as tags_mod
from .bits import wrap32
from .controller import (AccelConfig, Command, CommandKind, Controller,
                         SimObservation, enc_move, make_command)
from .memory import TaggedMemory
from .mesh import Activation, Dataflow
from .tags import TAG_MAX, MixingFault
from .workload import Workload, build_perceptron, build_tiled_matmul


class DimensionMismatch(Exception):
    """Operand shapes do not conform."""


class PreconditionViolation(Exception):
    """The paired memories differ somewhere public; the check is meaningless."""


# -- functional oracle ---------------------------------------------------------


def _shape(mat: Sequence[Sequence[int]], name: str) -> tuple[int, int]:
    rows = len(mat)
    if rows == 0:
        raise DimensionMismatch(f"{name} is empty")
    cols = len(mat[0])
    if cols == 0 or any(len(r) != cols for r in mat):
        raise DimensionMismatch(f"{name} is ragged")
    return rows, cols


def oracle_matmul(a, b, d=None) -> list[list[int]]:
    """C = A.B (+ D) by the book: triple loop, int32 wraparound."""
    m, k = _shape(a, "A")
    kb, n = _shape(b, "B")
    if kb != k:
        raise DimensionMismatch(f"A is {m}x{k} but B is {kb}x{n}")
    if d is not None and _shape(d, "D") != (m, n):
        raise DimensionMismatch(f"D is not {m}x{n}")
    out = []
    for i in range(m):
        row = []
        for j in range(n):
            acc = sum(a[i][p] * b[p][j] for p in range(k))
            if d is not None:
                acc += d[i][j]
            row.append(wrap32(acc))
        out.append(row)
    return out


def relu_rows(c: Sequence[Sequence[int]]) -> list[list[int]]:
    return [[v if v > 0 else 0 for v in row] for row in c]


# -- tag-policy oracle ----------------------------------------------------------


def oracle_row_verdicts(a_tags, d_tags, b_tags) -> list[Optional[int]]:
    """Per-row policy verdict: the row's tag, or None where domains mix.

    Deliberately not a fold: collect the distinct nonzero domains each
    output row depends on and just count them. Row i depends on a_tags[i],
    d_tags[i], and every B tag.
    """
    if len(a_tags) != len(d_tags):
        raise DimensionMismatch("one A tag and one D tag per output row")
    b_domains = {t for t in b_tags if t != 0}
    out = []
    for a, d in zip(a_tags, d_tags):
        domains = b_domains | {t for t in (a, d) if t != 0}
        if len(domains) > 1:
            out.append(None)
        else:
            out.append(domains.pop() if domains else 0)
    return out


def oracle_output_tags(a_tags, d_tags, b_tags) -> list[int]:
    """Reference output-row tags; MixingFault if any row mixes domains."""
    verdicts = oracle_row_verdicts(a_tags, d_tags, b_tags)
    for i, v in enumerate(verdicts):
        if v is None:
            doms = sorted({t for t in (a_tags[i], d_tags[i], *b_tags) if t})
            raise MixingFault(doms[0], doms[1], f"output row {i}")
    return verdicts


# -- paired execution -------------------------------------------------------------


def blinded_equivalent(mem1: TaggedMemory, mem2: TaggedMemory) -> bool:
    """True iff the memories differ only in blinded (nonzero-tagged) words."""
    return (mem1.size == mem2.size
            and mem1.tag_map() == mem2.tag_map()
            and mem1.public_words() == mem2.public_words())


def blinded_variant(mem: TaggedMemory, rng: random.Random) -> TaggedMemory:
    """A blinded-equivalent copy: every tagged word's data is re-rolled."""
    out = mem.clone()
    tag_map = mem.tag_map()
    for addr, tag in enumerate(tag_map):
        if tag:
            out.poke(addr, rng.getrandbits(64), tag)
    return out


@dataclass(frozen=True)
class CounterExample:
    """First observation field where a pair of runs disagreed."""

    observable: str
    detail: str = ""
    trial: Optional[int] = None


_OBSERVABLES = ("public_words", "tag_map", "access_trace", "total_cycles")


def compare_observations(x: SimObservation, y: SimObservation
                         ) -> Optional[CounterExample]:
    for name in _OBSERVABLES:
        a, b = getattr(x, name), getattr(y, name)
        if a != b:
            return CounterExample(name, _first_difference(name, a, b))
    fx, fy = x.fault, y.fault
    if (fx is None) != (fy is None):
        return CounterExample("fault", f"{fx} vs {fy}")
    # diagnostic detail may cite tag identities, which are public; kind and
    # cycle are the contract
    if fx is not None and (fx.kind is not fy.kind or fx.cycle != fy.cycle):
        return CounterExample(
            "fault", f"{fx.kind.value}@{fx.cycle} vs {fy.kind.value}@{fy.cycle}")
    return None


def _first_difference(name: str, a, b) -> str:
    if name == "public_words":
        for addr in sorted(set(a) | set(b)):
            if a.get(addr) != b.get(addr):
                return (f"word {addr}: {a.get(addr)} vs {b.get(addr)}")
    elif name == "tag_map":
        for i, (ta, tb) in enumerate(zip(a, b)):
            if ta != tb:
                return f"word {i}: tag {ta} vs {tb}"
        return f"length {len(a)} vs {len(b)}"
    elif name == "access_trace":
        for i, (ea, eb) in enumerate(zip(a, b)):
            if ea != eb:
                return f"entry {i}: {tuple(ea)} vs {tuple(eb)}"
        return f"length {len(a)} vs {len(b)}"
    elif name == "total_cycles":
        return f"{a} vs {b}"
    return ""


def check_noninterference(config: AccelConfig, commands: Sequence[Command],
                          mem1: TaggedMemory, mem2: TaggedMemory
                          ) -> Optional[CounterExample]:
    """Run both memories under the same commands; None means they agree.

    The memories must already be blinded-equivalent; anything else would
    test nothing. Both are cloned, so callers keep their inputs.
    """
    if not blinded_equivalent(mem1, mem2):
        raise PreconditionViolation("memories differ in public data or tags")
    obs1, _ = Controller(config, mem1.clone()).run(commands)
    obs2, _ = Controller(config, mem2.clone()).run(commands)
    return compare_observations(obs1, obs2)


# -- deliberate corruption (mutation sensitivity) -----------------------------------


@contextmanager
def corrupted_tag_join():
    """Stub tag_join to a constant 0 everywhere the simulator looks it up.

    tag_fold calls tag_join through the tags module's own globals, so
    patching the three importers plus the home module covers every
    propagation and check site. The oracles here are set-based and keep
    telling the truth, which is the point: with the policy lobotomized the
    fuzzer must start failing. Test-only, not thread-safe.
    """
    sites = [tags_mod, scratchpad_mod, mesh_mod]
    saved = [(m, m.tag_join) for m in sites]

    def stub(a, b):
        return 0

    for m in sites:
        m.tag_join = stub
    try:
        yield
    finally:
        for m, original in saved:
            m.tag_join = original


# -- fuzz templates -------------------------------------------------------------------


def _rand_mat(rng: random.Random, rows: int, cols: int,
              lo: int = -128, hi: int = 127) -> list[list[int]]:
    return [[rng.randint(lo, hi) for _ in range(cols)] for _ in range(rows)]


def _tag_some_rows(rng: random.Random, rows: int, tag: int) -> list[int]:
    # at least one row tagged, so the secret always reaches the output
    out = [tag if rng.random() < 0.6 else 0 for _ in range(rows)]
    if not any(out):
        out[rng.randrange(rows)] = tag
    return out


def _t_matmul(rng: random.Random) -> Workload:
    g = rng.choice((2, 4, 8))
    ebits = 32 if g < 8 else rng.choice((8, 32))
    m, k, n = (rng.randint(1, 2 * g) for _ in range(3))
    tag = rng.randint(1, TAG_MAX)
    a_tags = _tag_some_rows(rng, m, tag)
    use_d = rng.random() < 0.5
    d = _rand_mat(rng, m, n) if use_d else None
    # d rows may share A's domain or stay public; a second domain would be
    # the fault template's business
    d_tags = [rng.choice((0, tag)) for _ in range(m)] if use_d else None
    return build_tiled_matmul(
        g, _rand_mat(rng, m, k), _rand_mat(rng, k, n), d,
        a_tags=a_tags, d_tags=d_tags,
        dataflow=rng.choice(tuple(Dataflow)),
        activation=rng.choice(tuple(Activation)),
        in_elem_bits=ebits)


def _t_matmul8(rng: random.Random) -> Workload:
    m, k, n = (rng.randint(1, 16) for _ in range(3))
    tag = rng.randint(1, TAG_MAX)
    return build_tiled_matmul(
        8, _rand_mat(rng, m, k), _rand_mat(rng, k, n),
        a_tags=_tag_some_rows(rng, m, tag),
        dataflow=rng.choice(tuple(Dataflow)),
        activation=rng.choice(tuple(Activation)),
        in_elem_bits=8)


def _t_partial_write(rng: random.Random) -> Workload:
    """Full-row write, then a half-row write over it, then store the merge.

    The tag pair is drawn so the join lands on every arm: identity joins,
    domain-keeping joins, and the two-domain fault.
    """
    t_full, t_half = rng.choice((
        (0, 0), (0, 5), (5, 0), (5, 5), (1, 2), (2, 1)))
    row = rng.randrange(16)
    memory = []
    for addr in (0, 1):
        memory.append({"addr": addr, "data": rng.getrandbits(64), "tag": t_full})
    memory.append({"addr": 2, "data": rng.getrandbits(64), "tag": t_half})
    cmds = [
        make_command(CommandKind.MVIN, *enc_move(0, row, 16)),
        make_command(CommandKind.MVIN, *enc_move(2, row, 8)),
        make_command(CommandKind.MVOUT, *enc_move(8, row, 16)),
    ]
    cfg = AccelConfig(16, 16)
    return Workload(cfg, 64, memory, cmds)


def _t_fault(rng: random.Random) -> Workload:
    """Workloads engineered to fault somewhere specific; both runs of a
    pair must fault at the same kind and cycle."""
    g = 8
    df = rng.choice(tuple(Dataflow))
    kind = rng.randrange(5)
    m = k = n = rng.choice((8, 16))
    a, b = _rand_mat(rng, m, k), _rand_mat(rng, k, n)
    if kind == 0:
        # stationary/streamed B mixes two domains inside one chunk
        b_tags = [4 if i % 2 else 6 for i in range(k)]
        return build_tiled_matmul(g, a, b, b_tags=b_tags, dataflow=df)
    if kind == 1:
        # A and D rows from different clients meet at the same output row
        d = _rand_mat(rng, m, n)
        return build_tiled_matmul(g, a, b, d, a_tags=[1] * m, d_tags=[2] * m,
                                  dataflow=df)
    if kind == 2:
        # one word inside an A row belongs to someone else, so the DMA row
        # fold faults; needs a multi-word row, hence k = 16 (two words)
        a16 = _rand_mat(rng, m, 16)
        w = build_tiled_matmul(g, a16, _rand_mat(rng, 16, n),
                               a_tags=[3] * m, dataflow=df)
        w.memory[1]["tag"] = 9  # second word of A row 0
        return w
    if kind == 3:
        # a blinded command between valid ones
        w = build_tiled_matmul(g, a, b, a_tags=_tag_some_rows(rng, m, 7),
                               dataflow=df)
        pos = rng.randrange(1, len(w.commands))
        w.commands.insert(pos, make_command(
            CommandKind.MVIN, *enc_move(0, 0, 8), rs1_tag=rng.randint(1, TAG_MAX)))
        return w
    # kind == 4: reduction chunks from different domains collide in the
    # accumulator bank's tag join
    k = 16
    b16 = _rand_mat(rng, k, n)
    b_tags = [1] * 8 + [2] * 8
    return build_tiled_matmul(g, _rand_mat(rng, m, k), b16, b_tags=b_tags,
                              dataflow=df)


def _t_perceptron(rng: random.Random) -> Workload:
    m, k = rng.randint(1, 12), rng.randint(1, 12)
    n = rng.randint(1, 8)
    h = 8
    tag = rng.randint(1, TAG_MAX)
    return build_perceptron(
        8, _rand_mat(rng, m, k, -2, 2), _rand_mat(rng, k, h, -2, 2),
        [rng.randint(-3, 3) for _ in range(h)],
        _rand_mat(rng, h, n, -2, 2),
        [rng.randint(-3, 3) for _ in range(n)],
        a_tags=_tag_some_rows(rng, m, tag),
        dataflow=rng.choice(tuple(Dataflow)))


TEMPLATES: dict[str, Callable[[random.Random], Workload]] = {
    "matmul": _t_matmul,
    "matmul8": _t_matmul8,
    "partial-write": _t_partial_write,
    "fault-inducing": _t_fault,
    "perceptron": _t_perceptron,
}


# -- the fuzzer --------------------------------------------------------------------------


@dataclass
class FuzzReport:
    template: str
    seed: int
    trials: int
    lines: list[str] = field(default_factory=list)
    counterexamples: list[CounterExample] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.counterexamples

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _run_trial(job: tuple) -> tuple[int, Optional[CounterExample]]:
    template, seed, idx, corrupt = job
    rng = random.Random(f"{seed}:{template}:{idx}")
    w = TEMPLATES[template](rng)
    mem = w.make_memory()
    pair = blinded_variant(mem, rng)
    guard = corrupted_tag_join() if corrupt else nullcontext()
    with guard:
        ce = check_noninterference(w.config, w.commands, mem, pair)
    if ce is not None:
        ce = CounterExample(ce.observable, ce.detail, trial=idx)
    return idx, ce


def fuzz_noninterference(template: str, seed: int, trials: int, *,
                         jobs: int = 1, corrupt_tag_join: bool = False
                         ) -> FuzzReport:
    """Randomized paired-execution checking; byte-identical output per seed.

    Each trial derives its own generator from (seed, template, index), so
    the report does not depend on jobs or execution order.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; "
                         f"have {', '.join(sorted(TEMPLATES))}")
    jobs_list = [(template, seed, i, corrupt_tag_join) for i in range(1, trials + 1)]
    if jobs > 1:
        chunk = max(1, trials // (jobs * 8))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, jobs_list, chunksize=chunk))
    else:
        results = [_run_trial(s) for s in jobs_list]
    report = FuzzReport(template, seed, trials)
    for idx, ce in results:
        if ce is None:
            report.lines.append(f"trial {idx}: PASS")
        else:
            report.lines.append(f"trial {idx}: FAIL {ce.observable}")
            report.counterexamples.append(ce)
    report.lines.append(
        f"summary: template {template}, seed {seed}: "
        f"{trials - len(report.counterexamples)}/{trials} passed, "
        f"{len(report.counterexamples)} counterexamples")
    return report
