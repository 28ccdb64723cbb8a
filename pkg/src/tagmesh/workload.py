"""Workload files and the builders that generate them.

A workload is a JSON document with exactly one accelerator run in it:

    {
      "config":   { "mesh_rows": 8, "mesh_cols": 8, "mem_size": 2048, ... },
      "memory":   [ {"addr": 0, "data": "0x0807060504030201", "tag": 0}, ... ],
      "commands": [ {"op": "mvin", "mem_addr": 0, "spad_addr": 5, "cols": 8}, ... ],
      "expected": [ ...same record shape as memory... ]          (optional)
    }

Data words are hex strings, addresses and tags decimal. Parsing is strict:
unknown fields anywhere are an error, since a typoed field name silently
changing a run's meaning is the worst failure mode a workload file can have.

The builders lay out tiled matrix multiplications (and a small two-layer
perceptron) over this format. Matrices are padded up to whole tiles with
zeros; padding rows carry tag 0 and padded columns inherit their row's tag,
which leaves every result row's tag exactly the policy fold of the real
operands it depends on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

from .bits import pack_row, span_words
from .controller import (ACC_SPACE, NULL_ADDR, AccelConfig, Command,
                         CommandFault, CommandKind, Controller, decode_fields,
                         enc_compute, enc_config, enc_move, enc_preload,
                         make_command)
from .memory import TaggedMemory
from .mesh import Activation, Dataflow
from .tags import TAG_MAX


class WorkloadError(Exception):
    """The file cannot mean anything: bad structure, types, or field names."""


_DATAFLOWS = {d.value: d for d in Dataflow}
_ACTIVATIONS = {a.value: a for a in Activation}

_CONFIG_REQUIRED = {"mesh_rows", "mesh_cols", "mem_size"}
_CONFIG_OPTIONAL = {"spad_depth", "spad_banks", "acc_depth",
                    "dataflow", "activation", "in_elem_bits"}

# op name -> (required fields, optional fields)
_COMMAND_FIELDS = {
    "config": ({"dataflow", "activation", "in_elem_bits"}, {"k", "n", "m"}),
    "mvin": ({"mem_addr", "spad_addr"}, {"cols", "acc"}),
    "mvout": ({"mem_addr", "spad_addr"}, {"cols", "acc"}),
    "preload": ({"spad_addr", "count"}, set()),
    "compute": ({"a_addr", "second_addr", "rows", "dest_row"}, {"accumulate"}),
    "raw": ({"kind", "rs1", "rs2"}, {"inst_tag", "rs1_tag", "rs2_tag"}),
}


@dataclass
class Workload:
    """One parsed (or built) run: configuration, image, commands, expectation."""

    config: AccelConfig
    mem_size: int
    memory: list[dict]
    commands: list[Command]
    expected: Optional[list[dict]] = None

    def make_memory(self) -> TaggedMemory:
        mem = TaggedMemory(self.mem_size)
        mem.load_image(self.memory)
        return mem

    def make_controller(self, trace_hook=None) -> Controller:
        return Controller(self.config, self.make_memory(), trace_hook=trace_hook)

    def to_json(self) -> str:
        doc = {
            "config": _config_doc(self.config, self.mem_size),
            "memory": [_record_doc(r) for r in self.memory],
            "commands": [_command_doc(c) for c in self.commands],
        }
        if self.expected is not None:
            doc["expected"] = [_record_doc(r) for r in self.expected]
        return json.dumps(doc, indent=1)


# -- parsing ---------------------------------------------------------------------


def _need(doc: dict, what: str, required: set, optional: set) -> None:
    keys = set(doc)
    missing = required - keys
    unknown = keys - required - optional
    if missing:
        raise WorkloadError(f"{what}: missing {sorted(missing)}")
    if unknown:
        raise WorkloadError(f"{what}: unknown fields {sorted(unknown)}")


def _uint(doc: dict, key: str, what: str, default=None, limit=None):
    if key not in doc:
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise WorkloadError(f"{what}: {key} must be a non-negative integer")
    if limit is not None and v > limit:
        raise WorkloadError(f"{what}: {key}={v} above {limit}")
    return v


def _parse_config(doc) -> tuple[AccelConfig, int]:
    if not isinstance(doc, dict):
        raise WorkloadError("config must be an object")
    _need(doc, "config", _CONFIG_REQUIRED, _CONFIG_OPTIONAL)
    df = doc.get("dataflow", Dataflow.WEIGHT_STATIONARY.value)
    act = doc.get("activation", Activation.NONE.value)
    if df not in _DATAFLOWS:
        raise WorkloadError(f"config: unknown dataflow {df!r}")
    if act not in _ACTIVATIONS:
        raise WorkloadError(f"config: unknown activation {act!r}")
    try:
        cfg = AccelConfig(
            mesh_rows=_uint(doc, "mesh_rows", "config"),
            mesh_cols=_uint(doc, "mesh_cols", "config"),
            spad_depth=_uint(doc, "spad_depth", "config", default=128),
            spad_banks=_uint(doc, "spad_banks", "config", default=2),
            acc_depth=_uint(doc, "acc_depth", "config", default=64),
            dataflow=_DATAFLOWS[df],
            activation=_ACTIVATIONS[act],
            in_elem_bits=_uint(doc, "in_elem_bits", "config", default=8),
        )
    except (TypeError, ValueError) as e:
        raise WorkloadError(f"config: {e}") from None
    mem_size = _uint(doc, "mem_size", "config")
    if not mem_size:
        raise WorkloadError("config: mem_size must be positive")
    return cfg, mem_size


def _parse_record(doc, what: str, mem_size: int) -> dict:
    if not isinstance(doc, dict):
        raise WorkloadError(f"{what}: record must be an object")
    _need(doc, what, {"addr", "data"}, {"tag"})
    addr = _uint(doc, "addr", what)
    if addr >= mem_size:
        raise WorkloadError(f"{what}: addr {addr} outside memory of {mem_size}")
    data = doc["data"]
    if isinstance(data, str):
        try:
            data = int(data, 16)
        except ValueError:
            raise WorkloadError(f"{what}: bad data word {doc['data']!r}") from None
    elif isinstance(data, bool) or not isinstance(data, int):
        raise WorkloadError(f"{what}: data must be a hex string or integer")
    if not 0 <= data < (1 << 64):
        raise WorkloadError(f"{what}: data {data:#x} outside 64 bits")
    return {"addr": addr, "data": data,
            "tag": _uint(doc, "tag", what, default=0, limit=TAG_MAX)}


def _spad_field(doc, key: str, what: str, *, null_ok: bool = False,
                acc_ok: bool = False) -> int:
    v = doc.get(key)
    if v is None and null_ok:
        return NULL_ADDR
    addr = _uint(doc, key, what)
    if addr is None:
        raise WorkloadError(f"{what}: {key} must be an integer"
                            + (" or null" if null_ok else ""))
    if addr >= ACC_SPACE:
        raise WorkloadError(f"{what}: {key}={addr} out of range")
    if acc_ok and doc.get("acc"):
        if not isinstance(doc["acc"], bool):
            raise WorkloadError(f"{what}: acc must be a boolean")
        return ACC_SPACE | addr
    return addr


def _parse_command(doc, idx: int) -> Command:
    what = f"command {idx}"
    if not isinstance(doc, dict) or "op" not in doc:
        raise WorkloadError(f"{what}: must be an object with an op field")
    op = doc["op"]
    if op not in _COMMAND_FIELDS:
        raise WorkloadError(f"{what}: unknown op {op!r}")
    required, optional = _COMMAND_FIELDS[op]
    _need({k: v for k, v in doc.items() if k != "op"}, what, required, optional)
    if op == "config":
        df, act = doc["dataflow"], doc["activation"]
        if df not in _DATAFLOWS:
            raise WorkloadError(f"{what}: unknown dataflow {df!r}")
        if act not in _ACTIVATIONS:
            raise WorkloadError(f"{what}: unknown activation {act!r}")
        ebits = _uint(doc, "in_elem_bits", what)
        if ebits not in (8, 32):
            raise WorkloadError(f"{what}: in_elem_bits must be 8 or 32")
        rs1, rs2 = enc_config(_DATAFLOWS[df], _ACTIVATIONS[act], ebits,
                              _uint(doc, "k", what, default=0),
                              _uint(doc, "n", what, default=0),
                              _uint(doc, "m", what, default=0))
        return make_command(CommandKind.CONFIG, rs1, rs2)
    if op in ("mvin", "mvout"):
        spad = _spad_field(doc, "spad_addr", what, acc_ok=True)
        rs1, rs2 = enc_move(_uint(doc, "mem_addr", what), spad,
                            _uint(doc, "cols", what, default=0, limit=255))
        kind = CommandKind.MVIN if op == "mvin" else CommandKind.MVOUT
        return make_command(kind, rs1, rs2)
    if op == "preload":
        rs1, rs2 = enc_preload(_spad_field(doc, "spad_addr", what, null_ok=True),
                               _uint(doc, "count", what))
        return make_command(CommandKind.PRELOAD, rs1, rs2)
    if op == "compute":
        acc = doc.get("accumulate", False)
        if not isinstance(acc, bool):
            raise WorkloadError(f"{what}: accumulate must be a boolean")
        rs1, rs2 = enc_compute(_spad_field(doc, "a_addr", what),
                               _spad_field(doc, "second_addr", what, null_ok=True),
                               _uint(doc, "rows", what),
                               _uint(doc, "dest_row", what), acc)
        return make_command(CommandKind.COMPUTE, rs1, rs2)
    # raw: untranslated operands, the escape hatch for tagged-command tests
    kinds = {k.value: k for k in CommandKind}
    if doc["kind"] not in kinds:
        raise WorkloadError(f"{what}: unknown kind {doc['kind']!r}")
    return make_command(
        kinds[doc["kind"]],
        _uint(doc, "rs1", what), _uint(doc, "rs2", what),
        inst_tag=_uint(doc, "inst_tag", what, default=0, limit=TAG_MAX),
        rs1_tag=_uint(doc, "rs1_tag", what, default=0, limit=TAG_MAX),
        rs2_tag=_uint(doc, "rs2_tag", what, default=0, limit=TAG_MAX))


def parse_workload(text: str) -> Workload:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise WorkloadError(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise WorkloadError("top level must be an object")
    _need(doc, "workload", {"config", "memory", "commands"}, {"expected"})
    cfg, mem_size = _parse_config(doc["config"])
    if not isinstance(doc["memory"], list) or not isinstance(doc["commands"], list):
        raise WorkloadError("memory and commands must be arrays")
    memory = [_parse_record(r, f"memory record {i}", mem_size)
              for i, r in enumerate(doc["memory"])]
    commands = [_parse_command(c, i) for i, c in enumerate(doc["commands"])]
    expected = None
    if "expected" in doc:
        if not isinstance(doc["expected"], list):
            raise WorkloadError("expected must be an array")
        expected = [_parse_record(r, f"expected record {i}", mem_size)
                    for i, r in enumerate(doc["expected"])]
    return Workload(cfg, mem_size, memory, commands, expected)


def load_workload(path: str) -> Workload:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise WorkloadError(f"cannot read {path}: {e.strerror or e}") from None
    return parse_workload(text)


# -- emission back to JSON ----------------------------------------------------------


def _config_doc(cfg: AccelConfig, mem_size: int) -> dict:
    return {
        "mesh_rows": cfg.mesh_rows, "mesh_cols": cfg.mesh_cols,
        "mem_size": mem_size, "spad_depth": cfg.spad_depth,
        "spad_banks": cfg.spad_banks, "acc_depth": cfg.acc_depth,
        "dataflow": cfg.dataflow.value, "activation": cfg.activation.value,
        "in_elem_bits": cfg.in_elem_bits,
    }


def _record_doc(rec: dict) -> dict:
    out = {"addr": rec["addr"], "data": f"0x{rec['data']:016x}"}
    if rec.get("tag"):
        out["tag"] = rec["tag"]
    return out


def _spad_doc(doc: dict, key: str, addr: int) -> None:
    if addr == NULL_ADDR:
        doc[key] = None
    elif addr & ACC_SPACE:
        doc[key] = addr & ~ACC_SPACE
        doc["acc"] = True
    else:
        doc[key] = addr


def _raw_doc(cmd: Command) -> dict:
    doc = {"op": "raw", "kind": cmd.kind.value,
           "rs1": cmd.rs1.data, "rs2": cmd.rs2.data}
    for key, tag in (("inst_tag", cmd.inst_tag), ("rs1_tag", cmd.rs1.tag),
                     ("rs2_tag", cmd.rs2.tag)):
        if tag:
            doc[key] = tag
    return doc


def _command_doc(cmd: Command) -> dict:
    if cmd.inst_tag or cmd.rs1.tag or cmd.rs2.tag:
        # tagged operands have no named form; fall back to raw words
        return _raw_doc(cmd)
    try:
        f = decode_fields(cmd)
    except CommandFault:
        return _raw_doc(cmd)  # undecodable on purpose, keep it verbatim
    if cmd.kind is CommandKind.CONFIG:
        doc = {"op": "config", "dataflow": f["dataflow"].value,
               "activation": f["activation"].value,
               "in_elem_bits": f["in_elem_bits"]}
        doc.update({k: f[k] for k in ("k", "n", "m") if f[k]})
        return doc
    if cmd.kind in (CommandKind.MVIN, CommandKind.MVOUT):
        doc = {"op": cmd.kind.value, "mem_addr": f["mem_addr"]}
        _spad_doc(doc, "spad_addr", f["spad_addr"])
        if f["cols"]:
            doc["cols"] = f["cols"]
        return doc
    if cmd.kind is CommandKind.PRELOAD:
        if f["spad_addr"] != NULL_ADDR and f["spad_addr"] & ACC_SPACE:
            return _raw_doc(cmd)  # illegal source, only raw can say it
        doc = {"op": "preload"}
        _spad_doc(doc, "spad_addr", f["spad_addr"])
        doc["count"] = f["count"]
        return doc
    if f["a_addr"] & ACC_SPACE or (
            f["second_addr"] != NULL_ADDR and f["second_addr"] & ACC_SPACE):
        return _raw_doc(cmd)
    doc = {"op": "compute"}
    _spad_doc(doc, "a_addr", f["a_addr"])
    _spad_doc(doc, "second_addr", f["second_addr"])
    doc["rows"] = f["rows"]
    doc["dest_row"] = f["dest_row"]
    if f["accumulate"]:
        doc["accumulate"] = True
    return doc


# -- tiled matmul layout ----------------------------------------------------------


def _ceil_mul(x: int, g: int) -> int:
    return -(-x // g) * g


@dataclass(frozen=True)
class _Region:
    """A dense row-major matrix area of main memory."""

    base: int
    rows: int
    cols: int
    ebits: int

    @property
    def words_per_row(self) -> int:
        return span_words(self.cols, self.ebits)

    def addr(self, row: int, elem: int = 0) -> int:
        return self.base + row * self.words_per_row + elem * self.ebits // 64

    @property
    def end(self) -> int:
        return self.base + self.rows * self.words_per_row


def _padded(values: Sequence[Sequence[int]], rows: int, cols: int) -> list[list[int]]:
    out = [list(r) + [0] * (cols - len(r)) for r in values]
    out += [[0] * cols for _ in range(rows - len(values))]
    return out


def _padded_tags(tags: Optional[Sequence[int]], rows: int) -> list[int]:
    tags = list(tags or [])
    return tags + [0] * (rows - len(tags))


def matrix_records(region: _Region, values: Sequence[Sequence[int]],
                   row_tags: Sequence[int]) -> list[dict]:
    """Memory-image records for a whole matrix, one record per word.

    Every word is listed, zeros included, and each word's tag is its row's
    tag: that is exactly the layout dma_load_row folds back losslessly.
    """
    recs = []
    for r, (row, tag) in enumerate(zip(values, row_tags)):
        for i, word in enumerate(pack_row(row, region.ebits)):
            recs.append({"addr": region.addr(r) + i, "data": word, "tag": tag})
    return recs


def _gemm_commands(g: int, dataflow: Dataflow, a: _Region, b: _Region,
                   d: Optional[_Region], c: _Region, spad_depth: int) -> list[Command]:
    """Command stream for one tiled C = A.B + D over already-padded regions.

    Scratchpad allocation per tile step: bank 0 rows [0, g) hold A rows and
    rows [g, 2g) hold D rows; bank 1 rows [0, g) hold B rows. The
    accumulator rows [0, g) hold the output tile across its reduction
    chunks, then drain to memory.
    """
    mk, nk, kk = c.rows // g, c.cols // g, a.cols // g
    ws = dataflow is Dataflow.WEIGHT_STATIONARY
    cmds = []

    def mvin(mem_addr, spad, cols):
        cmds.append(make_command(CommandKind.MVIN, *enc_move(mem_addr, spad, cols)))

    for mi in range(mk):
        for ni in range(nk):
            for ki in range(kk):
                first = ki == 0
                for j in range(g):  # B chunk rows into bank 1
                    mvin(b.addr(ki * g + j, ni * g), spad_depth + j, g)
                for i in range(g):  # A chunk rows into bank 0
                    mvin(a.addr(mi * g + i, ki * g), i, g)
                if first and d is not None:
                    for i in range(g):
                        mvin(d.addr(mi * g + i, ni * g), g + i, g)
                if ws:
                    cmds.append(make_command(
                        CommandKind.PRELOAD, *enc_preload(spad_depth, g)))
                    second = g if (first and d is not None) else NULL_ADDR
                else:
                    # the output tile sits in the mesh: seed it with D (or
                    # zeros) on the first chunk, zeros afterwards, and let
                    # the accumulator bank join the chunks back together
                    src = g if (first and d is not None) else NULL_ADDR
                    cmds.append(make_command(
                        CommandKind.PRELOAD, *enc_preload(src, g)))
                    second = spad_depth
                cmds.append(make_command(CommandKind.COMPUTE, *enc_compute(
                    0, second, g, 0, accumulate=not first)))
            for i in range(g):
                cmds.append(make_command(CommandKind.MVOUT, *enc_move(
                    c.addr(mi * g + i, ni * g), ACC_SPACE | i, g)))
    return cmds


def _check_geometry(g: int, ebits: int, spad_depth: int, acc_depth: int) -> None:
    if g * ebits % 64:
        raise WorkloadError(
            f"a {g}-wide mesh needs whole-word rows; {ebits}-bit elements "
            "do not pack")
    if spad_depth < 2 * g or acc_depth < g:
        raise WorkloadError("scratchpad too shallow for this mesh")


def build_tiled_matmul(g: int, a, b, d=None, *, a_tags=None, b_tags=None,
                       d_tags=None, dataflow=Dataflow.WEIGHT_STATIONARY,
                       activation=Activation.NONE, in_elem_bits: int = 8,
                       expected=None, expected_tags=None,
                       spad_depth: int = 128, acc_depth: int = 64) -> Workload:
    """Whole-workload tiled matmul on a g-by-g mesh: C = A.B (+ D).

    a is m-by-k, b is k-by-n, d (optional) m-by-n; *_tags are per-row domain
    tags. expected/expected_tags, when given, are the m-by-n result and its
    row tags; both are stored padded, so padding rows of C are expected to
    be zero with tag 0.
    """
    _check_geometry(g, in_elem_bits, spad_depth, acc_depth)
    m, k, n = len(a), len(a[0]), len(b[0])
    if len(b) != k or (d is not None and (len(d) != m or len(d[0]) != n)):
        raise WorkloadError("operand shapes disagree")
    mp, kp, np_ = _ceil_mul(m, g), _ceil_mul(k, g), _ceil_mul(n, g)

    ra = _Region(0, mp, kp, in_elem_bits)
    rb = _Region(ra.end, kp, np_, in_elem_bits)
    rd = _Region(rb.end, mp, np_, in_elem_bits) if d is not None else None
    rc = _Region((rd or rb).end, mp, np_, 32)
    mem_size = _ceil_mul(rc.end + 8, 64)

    memory = matrix_records(ra, _padded(a, mp, kp), _padded_tags(a_tags, mp))
    memory += matrix_records(rb, _padded(b, kp, np_), _padded_tags(b_tags, kp))
    if d is not None:
        memory += matrix_records(rd, _padded(d, mp, np_), _padded_tags(d_tags, mp))

    cfg = AccelConfig(g, g, spad_depth=spad_depth, acc_depth=acc_depth,
                      dataflow=dataflow, activation=activation,
                      in_elem_bits=in_elem_bits)
    cmds = [make_command(CommandKind.CONFIG, *enc_config(
        dataflow, activation, in_elem_bits, k, n, m))]
    cmds += _gemm_commands(g, dataflow, ra, rb, rd, rc, spad_depth)

    exp_records = None
    if expected is not None:
        exp_records = matrix_records(rc, _padded(expected, mp, np_),
                                     _padded_tags(expected_tags, mp))
    return Workload(cfg, mem_size, memory, cmds, exp_records)


def build_perceptron(g: int, a, w1, b1, w2, b2, *, a_tags=None,
                     dataflow=Dataflow.WEIGHT_STATIONARY,
                     expected=None, expected_tags=None,
                     spad_depth: int = 128, acc_depth: int = 64) -> Workload:
    """Two dense layers: H = relu(A.W1 + B1), OUT = H.W2 + B2.

    a is m-by-k 8-bit; w1 k-by-h, b1 a length-h bias row broadcast over the
    batch, w2 h-by-n, b2 length-n. The hidden matrix lands in memory as
    32-bit rows and is read back as the second layer's input, so layer two
    runs with 32-bit input elements; values must stay inside int8 for the
    scratchpad datapath, which real workloads ensure by scaling.
    """
    _check_geometry(g, 8, spad_depth, acc_depth)
    m, k = len(a), len(a[0])
    h, n = len(w1[0]), len(w2[0])
    if len(w1) != k or len(w2) != h or len(b1) != h or len(b2) != n:
        raise WorkloadError("layer shapes disagree")
    mp, kp, hp, np_ = (_ceil_mul(x, g) for x in (m, k, h, n))

    ra = _Region(0, mp, kp, 8)
    rw1 = _Region(ra.end, kp, hp, 8)
    rb1 = _Region(rw1.end, mp, hp, 8)
    rh = _Region(rb1.end, mp, hp, 32)       # hidden activations, layer-2 input
    rw2 = _Region(rh.end, hp, np_, 32)
    rb2 = _Region(rw2.end, mp, np_, 32)
    rout = _Region(rb2.end, mp, np_, 32)
    mem_size = _ceil_mul(rout.end + 8, 64)

    tags_a = _padded_tags(a_tags, mp)
    memory = matrix_records(ra, _padded(a, mp, kp), tags_a)
    memory += matrix_records(rw1, _padded(w1, kp, hp), [0] * kp)
    memory += matrix_records(rb1, _padded([b1] * m, mp, hp), [0] * mp)
    memory += matrix_records(rw2, _padded(w2, hp, np_), [0] * hp)
    memory += matrix_records(rb2, _padded([b2] * m, mp, np_), [0] * mp)

    cfg = AccelConfig(g, g, spad_depth=spad_depth, acc_depth=acc_depth,
                      dataflow=dataflow, activation=Activation.RELU,
                      in_elem_bits=8)
    cmds = [make_command(CommandKind.CONFIG, *enc_config(
        dataflow, Activation.RELU, 8, k, h, m))]
    cmds += _gemm_commands(g, dataflow, ra, rw1, rb1, rh, spad_depth)
    cmds.append(make_command(CommandKind.CONFIG, *enc_config(
        dataflow, Activation.NONE, 32, h, n, m)))
    cmds += _gemm_commands(g, dataflow, rh, rw2, rb2, rout, spad_depth)

    exp_records = None
    if expected is not None:
        exp_records = matrix_records(rout, _padded(expected, mp, np_),
                                     _padded_tags(expected_tags, mp))
    return Workload(cfg, mem_size, memory, cmds, exp_records)
