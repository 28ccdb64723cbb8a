"""Cycle-level model of a tag-propagating systolic matmul accelerator.

The compute pipeline carries an 8-bit ownership tag alongside every
scratchpad row, mesh wavefront, and memory word, joins tags wherever data
merges, and halts on any attempt to combine words owned by two different
domains.  `verify` packages the paired-execution harness that checks the
timing and trace side of that guarantee.
"""

from .bits import elems_per_word, pack_row, span_words, unpack_row, wrap_signed
from .controller import (
    ACC_SPACE,
    NULL_ADDR,
    AccelConfig,
    Command,
    CommandFault,
    CommandKind,
    Controller,
    Fault,
    FaultKind,
    SimObservation,
    SimStats,
    decode_fields,
    enc_compute,
    enc_config,
    enc_move,
    enc_preload,
    make_command,
)
from .memory import OutOfRange, TaggedMemory, TraceEntry
from .mesh import Activation, Dataflow, Matrix, Mesh, MeshConfig
from .scratchpad import ScratchpadBank, SpadRequest, SpadResponse
from .tags import (
    TAG_BITS,
    TAG_MAX,
    MixingFault,
    TaggedRow,
    TaggedWord,
    check_tag,
    tag_fold,
    tag_join,
)
from .verify import (
    CounterExample,
    DimensionMismatch,
    FuzzReport,
    PreconditionViolation,
    TEMPLATES,
    blinded_equivalent,
    blinded_variant,
    check_noninterference,
    compare_observations,
    corrupted_tag_join,
    fuzz_noninterference,
    oracle_matmul,
    oracle_output_tags,
    oracle_row_verdicts,
)
from .workload import (
    Workload,
    WorkloadError,
    build_perceptron,
    build_tiled_matmul,
    load_workload,
    matrix_records,
    parse_workload,
)

__version__ = "0.1.0"

__all__ = [
    "ACC_SPACE",
    "AccelConfig",
    "Activation",
    "Command",
    "CommandFault",
    "CommandKind",
    "Controller",
    "CounterExample",
    "Dataflow",
    "DimensionMismatch",
    "Fault",
    "FaultKind",
    "FuzzReport",
    "Matrix",
    "Mesh",
    "MeshConfig",
    "MixingFault",
    "NULL_ADDR",
    "OutOfRange",
    "PreconditionViolation",
    "ScratchpadBank",
    "SimObservation",
    "SimStats",
    "SpadRequest",
    "SpadResponse",
    "TAG_BITS",
    "TAG_MAX",
    "TEMPLATES",
    "TaggedMemory",
    "TaggedRow",
    "TaggedWord",
    "TraceEntry",
    "Workload",
    "WorkloadError",
    "blinded_equivalent",
    "blinded_variant",
    "build_perceptron",
    "build_tiled_matmul",
    "check_noninterference",
    "check_tag",
    "compare_observations",
    "corrupted_tag_join",
    "decode_fields",
    "elems_per_word",
    "enc_compute",
    "enc_config",
    "enc_move",
    "enc_preload",
    "fuzz_noninterference",
    "load_workload",
    "make_command",
    "matrix_records",
    "oracle_matmul",
    "oracle_output_tags",
    "oracle_row_verdicts",
    "pack_row",
    "parse_workload",
    "span_words",
    "tag_fold",
    "tag_join",
    "unpack_row",
    "wrap_signed",
]
