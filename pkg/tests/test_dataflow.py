import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bhflow.dataflow import (
    Accumulation,
    GrainConfig,
    InputPayload,
    StageError,
    dataflow_forces,
    execute_force_stage,
    flatten,
    payload_rows,
    stage_task_count,
    wire,
)
from bhflow.octree import Cube, ForceParams, accel_direct_all, build_tree, compute_moments, interaction_nodes, make_tree

from conftest import plummer_sample, random_cloud

DET = Accumulation.DETERMINISTIC
STREAM = Accumulation.STREAMING

FOUR = np.array([(-0.5, -0.5, -0.5), (0.5, -0.5, -0.5), (0.4, 0.4, 0.5), (0.6, 0.6, 0.5)])


def four_body_tree():
    return compute_moments(build_tree(FOUR, Cube((0.0, 0.0, 0.0), 1.0)), FOUR, np.ones(4))


def test_payload_fields():
    p = InputPayload(2.0, 0.5, -1.0, 3.0, 7, 1)
    assert p.mass == 2.0 and p.com == (0.5, -1.0, 3.0) and p.node_id == 7 and p.is_particle
    rows = payload_rows([p, InputPayload(1.0, 0, 0, 0, 0, 0)])
    assert rows.shape == (2, 6) and rows[0].tolist() == [2.0, 0.5, -1.0, 3.0, 7.0, 1.0]


def test_flatten_sets_every_node(engine):
    mass, pos, _ = plummer_sample(500)
    tree = make_tree(pos, mass)
    row = flatten(tree, engine)
    assert len(row) == tree.n_nodes
    assert all(engine.is_set(e.gid) for e in row.elements)
    assert [e.payload.node_id for e in row.elements] == tree.preorder().tolist()
    leaves = sum(e.payload.is_particle for e in row.elements)
    assert leaves == 500


def test_flatten_needs_moments(engine):
    with pytest.raises(ValueError):
        flatten(build_tree(FOUR), engine)


def test_four_body_wiring(engine):
    tree = four_body_tree()
    row = flatten(tree, engine)
    outs = wire(row, tree, FOUR, 1.0, engine)
    assert [o.particle_index for o in outs] == [0, 1, 2, 3]
    root = tree.root
    p2, n2 = root.children[1], root.children[7]
    assert outs[0].deps.tolist() == [row.gid_of_node[p2], row.gid_of_node[n2]]
    assert all(not engine.is_set(o.gid) for o in outs)


def test_exact_regime_wiring(engine):
    pos = np.array([(0.0, 0, 0), (1.0, 0, 0), (0.0, 1.0, 0)])
    tree = make_tree(pos, np.ones(3))
    outs = wire(flatten(tree, engine), tree, pos, 0.0, engine)
    assert [len(o.deps) for o in outs] == [2, 2, 2]


def test_deps_match_tree_walk(engine):
    pos, mass = random_cloud(300, 1)
    tree = make_tree(pos, mass)
    row = flatten(tree, engine)
    for o in wire(row, tree, pos, 0.6, engine):
        nodes = interaction_nodes(tree, pos, o.particle_index, 0.6)
        assert o.deps.tolist() == row.gid_of_node[nodes].tolist()


def _stage(pos, mass, theta, grain, engine, params=ForceParams()):
    tree = make_tree(pos, mass)
    row = flatten(tree, engine)
    outs = wire(row, tree, pos, theta, engine)
    acc, stats = execute_force_stage(row, outs, grain, params, engine, pos)
    return acc, stats, outs


def test_counters_p4_g1(engine):
    acc, stats, outs = _stage(FOUR, np.ones(4), 1.0, GrainConfig(1, accumulation=STREAM), engine)
    assert stats.counters == (4, 4, sum(len(o.deps) for o in outs))
    assert stats.counters == stage_task_count(4, [len(o.deps) for o in outs], 1)


def test_single_management_task(engine):
    pos, mass = random_cloud(10, 3)
    _, stats, _ = _stage(pos, mass, 0.5, GrainConfig(10), engine)
    assert stats.management_tasks == 1 and stats.element_tasks == 10
    assert stats.join_tasks == 10 and stats.get_tasks == 0


def test_fixed_task_count(engine):
    pos, mass = random_cloud(100, 3)
    _, stats, _ = _stage(pos, mass, 0.5, GrainConfig(grain=None, tasks=7), engine)
    assert stats.management_tasks == 7


def test_grain_config_validation():
    with pytest.raises(ValueError):
        GrainConfig(0)
    with pytest.raises(ValueError):
        GrainConfig(grain=4, tasks=2)
    assert GrainConfig(grain=None, tasks=3).grain_for(10) == 4


def test_management_round_robin(engine_factory):
    eng = engine_factory(4)
    pos, mass = random_cloud(64, 2)
    _, stats, _ = _stage(pos, mass, 0.5, GrainConfig(1), eng)
    assert stats.management_per_worker == (16, 16, 16, 16)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=300), st.integers(1, 400))
def test_task_count_formula(sizes, g):
    m, e, gets = stage_task_count(len(sizes), sizes, g)
    assert m == math.ceil(len(sizes) / g) and e == len(sizes) and gets == sum(sizes)


@pytest.mark.parametrize("accum", [DET, STREAM])
def test_exact_regime_bitwise_direct(engine_factory, accum):
    mass, pos, _ = plummer_sample(256)
    ref = accel_direct_all(pos, mass, ForceParams())
    for w in (1, 2, 4):
        acc, *_ = dataflow_forces(make_tree(pos, mass), pos, 0.0, GrainConfig(7, accumulation=accum), ForceParams(), engine_factory(w))
        np.testing.assert_array_equal(acc, ref)


def test_worker_and_grain_independence(engine_factory):
    mass, pos, _ = plummer_sample(2000)
    tree = make_tree(pos, mass)
    ref = None
    for w in (1, 2, 4, 8):
        for g in (1, 64, 2000):
            acc, *_ = dataflow_forces(tree, pos, 0.5, GrainConfig(g), ForceParams(), engine_factory(w))
            if ref is None:
                ref = acc
            np.testing.assert_array_equal(acc, ref)
    acc, *_ = dataflow_forces(tree, pos, 0.5, GrainConfig(16, accumulation=STREAM), ForceParams(), engine_factory(3))
    np.testing.assert_array_equal(acc, ref)


def test_streaming_counts_gets(engine):
    mass, pos, _ = plummer_sample(300)
    acc, stats, mean_len, _ = dataflow_forces(make_tree(pos, mass), pos, 0.5, GrainConfig(8, accumulation=STREAM), ForceParams(), engine)
    assert stats.get_tasks == round(mean_len * 300)
    assert stats.join_tasks == 0


def test_target_on_source_unsoftened(engine):
    # a leaf position shifted so the target sits exactly on another body's centroid
    pos = np.array([(0.0, 0, 0), (1.0, 0, 0)])
    tree = make_tree(pos, np.ones(2))
    row = flatten(tree, engine)
    outs = wire(row, tree, pos, 0.0, engine)
    fake = pos.copy()
    fake[0] = pos[1]
    with pytest.raises(Exception, match="coincident"):
        execute_force_stage(row, outs, GrainConfig(1), ForceParams(softening=0.0), engine, fake)


def test_unset_dependency_is_reported(engine):
    pos, mass = random_cloud(8, 1)
    tree = make_tree(pos, mass)
    row = flatten(tree, engine)
    outs = wire(row, tree, pos, 0.0, engine)
    outs[3].deps = np.append(outs[3].deps, engine.future_new())
    with pytest.raises(StageError):
        execute_force_stage(row, outs, GrainConfig(2), ForceParams(), engine, pos)
