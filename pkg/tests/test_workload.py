"""Workload file strictness and builder geometry."""

import json

import pytest

from tagmesh.controller import ACC_SPACE, NULL_ADDR, CommandKind
from tagmesh.mesh import Dataflow
from tagmesh.verify import oracle_matmul
from tagmesh.workload import (WorkloadError, build_perceptron,
                              build_tiled_matmul, parse_workload)

MINIMAL = {
    "config": {"mesh_rows": 2, "mesh_cols": 2, "mem_size": 64},
    "memory": [{"addr": 0, "data": "0x0000000200000001"}],
    "commands": [{"op": "config", "dataflow": "weight_stationary",
                  "activation": "none", "in_elem_bits": 32}],
}


def doc(**patch):
    d = json.loads(json.dumps(MINIMAL))
    d.update(patch)
    return d


def test_minimal_parses_with_defaults():
    w = parse_workload(json.dumps(MINIMAL))
    assert w.config.mesh_rows == 2
    assert w.config.spad_depth == 128 and w.config.spad_banks == 2
    assert w.mem_size == 64
    assert w.commands[0].kind is CommandKind.CONFIG
    assert w.make_memory().peek(0).data == 0x0000000200000001


def test_rejections():
    bad = [
        ("not json", "{nope"),
        ("top-level array", "[]"),
        ("unknown top key", json.dumps(doc(extra=1))),
        ("missing commands", json.dumps({k: v for k, v in MINIMAL.items()
                                         if k != "commands"})),
        ("unknown config key", json.dumps(doc(
            config={"mesh_rows": 2, "mesh_cols": 2, "mem_size": 64, "q": 1}))),
        ("record addr past mem_size", json.dumps(doc(
            memory=[{"addr": 64, "data": 0}]))),
        ("record tag too large", json.dumps(doc(
            memory=[{"addr": 0, "data": 0, "tag": 256}]))),
        ("record data bad hex", json.dumps(doc(
            memory=[{"addr": 0, "data": "0xzz"}]))),
        ("record data negative", json.dumps(doc(
            memory=[{"addr": 0, "data": -1}]))),
        ("boolean posing as int", json.dumps(doc(
            memory=[{"addr": True, "data": 0}]))),
        ("unknown op", json.dumps(doc(commands=[{"op": "halt"}]))),
        ("unknown command field", json.dumps(doc(
            commands=[{"op": "preload", "spad_addr": 0, "count": 2, "x": 1}]))),
        ("bad dataflow name", json.dumps(doc(commands=[
            {"op": "config", "dataflow": "diagonal", "activation": "none",
             "in_elem_bits": 8}]))),
        ("bad elem width", json.dumps(doc(commands=[
            {"op": "config", "dataflow": "weight_stationary",
             "activation": "none", "in_elem_bits": 16}]))),
        ("non-bool accumulate", json.dumps(doc(commands=[
            {"op": "compute", "a_addr": 0, "second_addr": 0, "rows": 2,
             "dest_row": 0, "accumulate": 1}]))),
        ("spad_addr into tag space", json.dumps(doc(commands=[
            {"op": "mvin", "mem_addr": 0, "spad_addr": ACC_SPACE}]))),
        ("expected not a list", json.dumps(doc(expected=3))),
    ]
    for label, text in bad:
        with pytest.raises(WorkloadError):
            parse_workload(text)
        # and the label is only for this assertion message
        assert label


def test_command_forms_round_trip():
    d = doc(commands=[
        {"op": "config", "dataflow": "output_stationary", "activation": "relu",
         "in_elem_bits": 8, "k": 4, "n": 5, "m": 6},
        {"op": "mvin", "mem_addr": 3, "spad_addr": 1, "cols": 2},
        {"op": "mvout", "mem_addr": 5, "spad_addr": 1, "acc": True},
        {"op": "preload", "spad_addr": None, "count": 2},
        {"op": "compute", "a_addr": 0, "second_addr": None, "rows": 2,
         "dest_row": 1, "accumulate": True},
        {"op": "raw", "kind": "mvin", "rs1": 0, "rs2": 0, "rs1_tag": 9},
    ])
    w = parse_workload(json.dumps(d))
    assert w.commands[2].rs2.data & 0xFFFF == ACC_SPACE | 1
    assert w.commands[3].rs1.data == NULL_ADDR
    assert w.commands[5].rs1.tag == 9
    again = parse_workload(w.to_json())
    assert again.commands == w.commands
    assert again.memory == w.memory and again.config == w.config


def test_builder_round_trip_and_expected():
    a, b = [[1, 2], [3, 4]], [[5, 6], [7, 8]]
    c = oracle_matmul(a, b)
    w = build_tiled_matmul(2, a, b, in_elem_bits=32, expected=c,
                           spad_depth=8, acc_depth=4)
    again = parse_workload(w.to_json())
    assert again.commands == w.commands
    assert again.expected == w.expected
    assert len(w.expected) == 2  # one word per padded C row


def test_builder_geometry_checks():
    a, b = [[1, 2], [3, 4]], [[5, 6], [7, 8]]
    with pytest.raises(WorkloadError):
        build_tiled_matmul(2, a, b)  # 2 int8 elements is not a whole word
    with pytest.raises(WorkloadError):
        build_tiled_matmul(2, a, b, in_elem_bits=32, spad_depth=3)
    with pytest.raises(WorkloadError):
        build_tiled_matmul(2, a, [[1, 2]], in_elem_bits=32)
    with pytest.raises(WorkloadError):
        build_perceptron(8, [[1] * 4] * 4, [[1] * 8] * 4, [0] * 8,
                         [[1] * 8] * 7, [0] * 8)  # w2 height != hidden width


def test_builder_pads_to_whole_tiles():
    a = [[1, 2, 3], [4, 5, 6], [7, 8, 9]]
    b = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    w = build_tiled_matmul(8, a, b, a_tags=[0, 7, 0],
                           expected=oracle_matmul(a, b),
                           expected_tags=[0, 7, 0])
    mem = w.make_memory()
    # padded A rows occupy 8 rows of 8 elements; row 1 carries its tag on
    # every word, padding rows are zero with tag 0
    assert mem.peek(1).tag == 7
    assert mem.peek(3).data == 0 and mem.peek(3).tag == 0
    ctl = w.make_controller()
    obs, _ = ctl.run(w.commands)
    assert obs.fault is None
    for rec in w.expected:
        got = ctl.mem.peek(rec["addr"])
        assert got.data == rec["data"] and got.tag == rec.get("tag", 0)


def test_memory_record_fields_strict():
    with pytest.raises(WorkloadError):
        parse_workload(json.dumps(doc(memory=[{"addr": 0}])))
    with pytest.raises(WorkloadError):
        parse_workload(json.dumps(doc(memory=[
            {"addr": 0, "data": 0, "extra": 1}])))
