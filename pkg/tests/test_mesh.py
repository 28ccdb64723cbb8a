"""Array behaviour against the oracles: values, tags, timing, containment."""

import itertools
import random

import pytest

from tagmesh.mesh import Activation, Dataflow, Matrix, Mesh, MeshConfig
from tagmesh.tags import MixingFault, TaggedRow
from tagmesh.verify import oracle_matmul, oracle_output_tags, oracle_row_verdicts

WS = Dataflow.WEIGHT_STATIONARY
OS = Dataflow.OUTPUT_STATIONARY


def run_ws(b: Matrix, a: Matrix, d: Matrix, activation=Activation.NONE):
    """Stream a weight-stationary computation; returns (emissions, fault).

    emissions is a list of (cycle, TaggedRow). Asserts the constant-latency
    contract on the way: row i, fed at cycle i, must emerge at i + latency.
    """
    rows, cols = b.shape
    mesh = Mesh(MeshConfig(rows, cols, WS, activation))
    try:
        mesh.preload(b.rows)
    except MixingFault as f:
        return [], f
    lat = mesh.config.output_latency
    outs = []
    fault = None
    t = 0
    fed = 0
    pairs = list(zip(a.rows, d.rows))
    while fed < len(pairs) or mesh.in_flight():
        if fed < len(pairs) and fault is None:
            try:
                mesh.feed_row(*pairs[fed])
                fed += 1
            except MixingFault as f:
                fault = f
        out = mesh.step()
        if out is not None:
            assert t == len(outs) + lat  # row i emerges at exactly i + latency
            outs.append((t, out))
        t += 1
        if fault is not None and not mesh.in_flight():
            break
    # a faulted mesh must stay silent forever after
    if fault is not None:
        for _ in range(2 * lat):
            assert mesh.step() is None
    return outs, fault


def run_os(d: Matrix, a: Matrix, b: Matrix):
    """Stream an output-stationary computation; returns (emissions, fault)."""
    rows, cols = d.shape
    mesh = Mesh(MeshConfig(rows, cols, OS))
    mesh.preload(d.rows)
    lat = mesh.config.output_latency
    outs = []
    t = 0
    try:
        mesh.start_rows(a.row_tags())
        for k in range(rows):
            mesh.feed_stream([a.rows[i].elems[k] for i in range(rows)], b.rows[k])
            assert mesh.step() is None  # stream shorter than the latency
            t += 1
    except MixingFault as f:
        for _ in range(2 * lat):
            assert mesh.step() is None
        return [], f
    while mesh.in_flight():
        out = mesh.step()
        if out is not None:
            assert t == len(outs) + lat
            outs.append((t, out))
        t += 1
    return outs, None


def test_frozen_2x2_weight_stationary():
    b = Matrix.from_values([[5, 6], [7, 8]])
    a = Matrix.from_values([[1, 2], [3, 4]])
    d = Matrix.from_values([[1, 1], [1, 1]])
    outs, fault = run_ws(b, a, d)
    assert fault is None
    assert [list(o.elems) for _, o in outs] == [[20, 23], [44, 51]]
    assert [o.tag for _, o in outs] == [0, 0]
    # same numbers the other dataflow
    outs, fault = run_os(d, a, b)
    assert fault is None
    assert [list(o.elems) for _, o in outs] == [[20, 23], [44, 51]]


def test_relu_at_emission():
    b = Matrix.from_values([[1, 0], [0, 1]])
    a = Matrix.from_values([[-3, 7]], tags=[5])
    d = Matrix.from_values([[0, 0]])
    outs, fault = run_ws(b, a, d, activation=Activation.RELU)
    assert fault is None
    (_, out), = outs
    assert list(out.elems) == [0, 7]
    assert out.tag == 5


def test_random_equivalence_both_dataflows():
    rng = random.Random(21)
    for _ in range(40):
        r = rng.randint(1, 16)
        c = rng.randint(1, 16)
        m = rng.randint(1, 16)
        av = [[rng.randint(-128, 127) for _ in range(r)] for _ in range(m)]
        bv = [[rng.randint(-128, 127) for _ in range(c)] for _ in range(r)]
        dv = [[rng.randint(-(2**31), 2**31 - 1) for _ in range(c)] for _ in range(m)]
        want = oracle_matmul(av, bv, dv)
        outs, fault = run_ws(Matrix.from_values(bv), Matrix.from_values(av),
                             Matrix.from_values(dv))
        assert fault is None
        assert [list(o.elems) for _, o in outs] == want
    for _ in range(40):
        r = rng.randint(1, 16)
        c = rng.randint(1, 16)
        av = [[rng.randint(-128, 127) for _ in range(r)] for _ in range(r)]
        bv = [[rng.randint(-128, 127) for _ in range(c)] for _ in range(r)]
        dv = [[rng.randint(-(2**31), 2**31 - 1) for _ in range(c)] for _ in range(r)]
        want = oracle_matmul(av, bv, dv)
        outs, fault = run_os(Matrix.from_values(dv), Matrix.from_values(av),
                             Matrix.from_values(bv))
        assert fault is None
        assert [list(o.elems) for _, o in outs] == want


AV = [[1, 2], [3, 4]]
BV = [[5, 6], [7, 8]]
DV = [[1, 1], [1, 1]]


def sweep_case(ta, tb, td, dataflow):
    """Run one 2x2 tag assignment; returns list of emitted (values, tag)."""
    a = Matrix.from_values(AV, tags=list(ta))
    b = Matrix.from_values(BV, tags=list(tb))
    d = Matrix.from_values(DV, tags=list(td))
    if dataflow is WS:
        outs, fault = run_ws(b, a, d)
    else:
        outs, fault = run_os(d, a, b)
    return [(list(o.elems), o.tag) for _, o in outs], fault


@pytest.mark.parametrize("dataflow", [WS, OS])
def test_exhaustive_729_tag_sweep(dataflow):
    """Every {0,1,2}^6 assignment matches the brute-force policy oracle.

    Inside one stream a fault suppresses all of its emissions (rows already
    in flight included), so the observable is all-rows-or-nothing here.
    """
    want_values = oracle_matmul(AV, BV, DV)
    n_fault = 0
    for ta in itertools.product(range(3), repeat=2):
        for tb in itertools.product(range(3), repeat=2):
            for td in itertools.product(range(3), repeat=2):
                verdicts = oracle_row_verdicts(ta, td, tb)
                emitted, fault = sweep_case(ta, tb, td, dataflow)
                if None in verdicts:
                    try:
                        oracle_output_tags(ta, td, tb)
                        raise AssertionError("oracle disagrees with itself")
                    except MixingFault:
                        pass
                    assert fault is not None
                    assert emitted == []
                    n_fault += 1
                else:
                    assert fault is None
                    assert oracle_output_tags(ta, td, tb) == verdicts
                    assert [v for v, _ in emitted] == want_values
                    assert [t for _, t in emitted] == verdicts
    assert n_fault > 0  # the sweep actually exercised fault cases


def test_fault_monotonicity_weight_stationary():
    mesh = Mesh(MeshConfig(2, 2, WS))
    mesh.preload(Matrix.from_values(BV, tags=[1, 1]).rows)
    mesh.feed_row(TaggedRow((1, 2), 1), TaggedRow((0, 0), 0))
    mesh.step()
    with pytest.raises(MixingFault):
        mesh.feed_row(TaggedRow((3, 4), 2), TaggedRow((0, 0), 0))
    assert mesh.fault is not None
    for _ in range(20):
        assert mesh.step() is None
    assert mesh.rows_emitted == 0
    # a faulted mesh refuses new streams outright
    with pytest.raises(RuntimeError):
        mesh.feed_row(TaggedRow((1, 1), 0), TaggedRow((0, 0), 0))


def test_os_b_mixing_faults_at_the_introducing_feed():
    mesh = Mesh(MeshConfig(2, 2, OS))
    mesh.preload(Matrix.from_values(DV).rows)
    mesh.start_rows([0, 0])
    mesh.feed_stream([1, 3], TaggedRow((5, 6), 1))
    mesh.step()
    with pytest.raises(MixingFault):
        mesh.feed_stream([2, 4], TaggedRow((7, 8), 2))
    for _ in range(20):
        assert mesh.step() is None


def test_preload_refused_while_in_flight():
    mesh = Mesh(MeshConfig(2, 2, WS))
    mesh.preload(Matrix.from_values(BV).rows)
    mesh.feed_row(TaggedRow((1, 2)), TaggedRow((0, 0)))
    mesh.step()
    with pytest.raises(RuntimeError):
        mesh.preload(Matrix.from_values(BV).rows)


def test_feed_shape_and_order_guards():
    mesh = Mesh(MeshConfig(2, 3, WS))
    with pytest.raises(RuntimeError):
        mesh.feed_row(TaggedRow((1, 2)), TaggedRow((0, 0, 0)))  # no preload yet
    mesh.preload(Matrix.from_values([[1, 2, 3], [4, 5, 6]]).rows)
    with pytest.raises(ValueError):
        mesh.feed_row(TaggedRow((1, 2, 3)), TaggedRow((0, 0, 0)))  # a is rows-long
    with pytest.raises(RuntimeError):
        mesh.start_rows([0, 0])  # wrong dataflow
    os_mesh = Mesh(MeshConfig(2, 2, OS))
    with pytest.raises(RuntimeError):
        os_mesh.feed_stream([1, 2], TaggedRow((1, 2)))  # before start_rows
    os_mesh.preload(Matrix.from_values(DV).rows)
    os_mesh.start_rows([0, 0])
    os_mesh.feed_stream([1, 3], TaggedRow((5, 6)))
    os_mesh.step()
    os_mesh.feed_stream([2, 4], TaggedRow((7, 8)))
    os_mesh.step()
    with pytest.raises(RuntimeError):
        os_mesh.feed_stream([0, 0], TaggedRow((0, 0)))  # stream complete


def test_latency_is_config_only():
    rng = random.Random(5)
    for df in (WS, OS):
        for r, c in ((1, 1), (2, 5), (5, 2), (8, 8)):
            cfg = MeshConfig(r, c, df)
            want = r + c if df is WS else 2 * r + c
            assert cfg.output_latency == want
            # emergence cycles must not move with data or tags
            schedules = set()
            for _ in range(5):
                av = [[rng.randint(-9, 9) for _ in range(r)] for _ in range(r)]
                bv = [[rng.randint(-9, 9) for _ in range(c)] for _ in range(r)]
                dv = [[rng.randint(-9, 9) for _ in range(c)] for _ in range(r)]
                tag = rng.choice([0, 3])
                if df is WS:
                    outs, fault = run_ws(Matrix.from_values(bv),
                                         Matrix.from_values(av, tags=tag),
                                         Matrix.from_values(dv))
                else:
                    outs, fault = run_os(Matrix.from_values(dv),
                                         Matrix.from_values(av, tags=tag),
                                         Matrix.from_values(bv))
                assert fault is None
                schedules.add(tuple(t for t, _ in outs))
            assert len(schedules) == 1


def test_register_scaling_counters():
    for g in (2, 4, 8, 16, 32):
        ws = Mesh(MeshConfig(g, g, WS))
        os_ = Mesh(MeshConfig(g, g, OS))
        assert ws.tag_register_count() == 2 * g
        assert os_.tag_register_count() == 3 * g
        assert ws.per_pe_register_count() == g * g
        assert os_.per_pe_register_count() == g * g


def test_quiescent_mesh_steps_cheaply():
    mesh = Mesh(MeshConfig(4, 4, WS))
    for _ in range(10):
        assert mesh.step() is None
    assert mesh.cycle == 10
