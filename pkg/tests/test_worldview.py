import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hinav.errors import DuplicateNode, EmptyCell, EmptyPoseList, ForwardBlocked, FormatError
from hinav.geometry import Pose2D
from hinav.worldview import (HighAction, OneHotTarget, PanoGraph, ViewState, build_graph, choose_targets,
                             make_grid, observe, proximity_bit, read_poses, sample_target_image, step,
                             transition, write_poses)


def line_graph(n=5, spacing=0.5, **kw):
    return build_graph([Pose2D(i * spacing, 0.0) for i in range(n)], **kw)


def random_graph(n, seed, extent=6.0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, extent, (n, 2))
    return build_graph([Pose2D(x, y) for x, y in pts], seed=seed)


def brute_force_forward(pos, n_o, step_len, radius):
    """Nearest other node to every nominal point, by exhaustive search."""
    out = np.full((len(pos), n_o), -1)
    for i in range(len(pos)):
        for o in range(n_o):
            phi = o * 2 * math.pi / n_o
            nom = pos[i] + step_len * np.array([math.cos(phi), math.sin(phi)])
            best = None
            for j in range(len(pos)):
                if j == i:
                    continue
                d = float(np.hypot(*(pos[j] - nom)))
                if d <= radius and (best is None or (d, j) < best):
                    best = (d, j)
            if best is not None:
                out[i, o] = best[1]
    return out


# -- build_graph --------------------------------------------------------------

def test_two_nodes_one_metre_apart_connect():
    g = build_graph([Pose2D(0, 0), Pose2D(1, 0)])
    assert g.forward[0, 0] == 1
    assert g.forward[1, 12] == 0


def test_two_nodes_two_metres_apart_do_not_connect():
    g = build_graph([Pose2D(0, 0), Pose2D(2, 0)])
    assert g.forward[0, 0] == -1


def test_half_metre_line_jumps_two_nodes():
    g = line_graph()
    assert g.forward[0, 0] == 2
    assert g.forward[2, 0] == 4
    assert step(g, ViewState(1, 0), HighAction.FORWARD) == ViewState(3, 0)


@pytest.mark.parametrize("seed", range(5))
def test_forward_edges_match_brute_force(seed):
    g = random_graph(40, seed)
    ref = brute_force_forward(g.positions, g.num_orientations, 1.0, 0.7)
    np.testing.assert_array_equal(g.forward, ref)


def test_tie_goes_to_lowest_id():
    # both candidates are exactly 0.5 m from the nominal point (1, 0)
    g = build_graph([Pose2D(0, 0), Pose2D(1, 0.5), Pose2D(1, -0.5)])
    assert g.forward[0, 0] == 1
    g = build_graph([Pose2D(0, 0), Pose2D(1, -0.5), Pose2D(1, 0.5)])
    assert g.forward[0, 0] == 1


def test_build_graph_errors():
    with pytest.raises(EmptyPoseList):
        build_graph([])
    with pytest.raises(DuplicateNode):
        build_graph([Pose2D(0, 0), Pose2D(0, 0)])
    with pytest.raises(ValueError):
        build_graph([Pose2D(0, 0)], forward_step=0.5, forward_match_radius=0.7)


# -- step ----------------------------------------------------------------------

def test_turns():
    g = line_graph()
    assert step(g, ViewState(3, 0), HighAction.TURN_LEFT) == ViewState(3, 1)
    assert step(g, ViewState(3, 0), HighAction.TURN_RIGHT) == ViewState(3, 23)
    s = ViewState(3, 0)
    for _ in range(24):
        s = step(g, s, HighAction.TURN_LEFT)
    assert s == ViewState(3, 0)


def test_blocked_forward():
    g = line_graph()
    with pytest.raises(ForwardBlocked):
        step(g, ViewState(4, 0), HighAction.FORWARD)
    assert transition(g, ViewState(4, 0), HighAction.FORWARD) == ViewState(4, 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), node=st.integers(0, 19), orient=st.integers(0, 23))
def test_step_invariants(seed, node, orient):
    g = random_graph(20, seed)
    s = ViewState(node, orient)
    left = step(g, s, HighAction.TURN_LEFT)
    assert left.node_id == s.node_id
    assert step(g, left, HighAction.TURN_RIGHT) == s
    assert step(g, step(g, s, HighAction.TURN_RIGHT), HighAction.TURN_LEFT) == s
    f = transition(g, s, HighAction.FORWARD)
    assert f.orient == s.orient
    if g.forward[node, orient] >= 0:
        phi = orient * math.pi / 12
        nominal = g.positions[node] + np.array([math.cos(phi), math.sin(phi)])
        assert np.hypot(*(g.positions[f.node_id] - nominal)) <= 0.7 + 1e-12


# -- observe -------------------------------------------------------------------

def test_observe_noise_free_is_deterministic():
    g = line_graph()
    a = observe(g, ViewState(2, 5), rng_seed=1, noise_level=0.0)
    b = observe(g, ViewState(2, 5), rng_seed=99, noise_level=0.0)
    np.testing.assert_array_equal(a.descriptor, b.descriptor)
    assert a.descriptor.shape == (128,)


def test_observe_is_pure_in_seed():
    g = line_graph()
    a = observe(g, ViewState(1, 3), rng_seed=7)
    b = observe(g, ViewState(1, 3), rng_seed=7)
    np.testing.assert_array_equal(a.descriptor, b.descriptor)


def test_descriptor_range():
    g = random_graph(15, 0)
    for seed in range(20):
        obs = observe(g, ViewState(seed % 15, seed % 24), rng_seed=seed)
        assert np.all(np.abs(obs.descriptor) <= 1 + g.noise_level)
        assert obs.proximity in (0, 1)


def test_orientations_distinguishable_over_1000_seeds():
    distinct = 0
    for seed in range(1000):
        g = build_graph([Pose2D(0, 0)], seed=seed)
        a = observe(g, ViewState(0, 0), rng_seed=seed)
        b = observe(g, ViewState(0, 1 + seed % 23), rng_seed=seed + 1)
        distinct += np.linalg.norm(a.descriptor - b.descriptor) > 10 * g.noise_level
    assert distinct / 1000 >= 0.99


def test_aliased_nodes_share_descriptors():
    g = build_graph([Pose2D(i, 0) for i in range(20)], alias_fraction=0.5, seed=3)
    assert len(np.unique(g.descriptor_seeds)) < 20


# -- proximity -------------------------------------------------------------------

def test_proximity_isolated_node():
    g = build_graph([Pose2D(0, 0)])
    assert all(proximity_bit(g, ViewState(0, o)) == 0 for o in range(24))


def test_proximity_neighbour_ahead_without_edge():
    g = build_graph([Pose2D(0, 0), Pose2D(0.2, 0)])
    assert g.forward[0, 0] == -1
    assert proximity_bit(g, ViewState(0, 0)) == 1
    assert proximity_bit(g, ViewState(0, 12)) == 0   # neighbour is behind


@pytest.mark.parametrize("seed", range(3))
def test_proximity_rule_on_random_graph(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1.5, (10, 2))
    g = build_graph([Pose2D(x, y) for x, y in pts])
    for n in range(10):
        for o in range(24):
            bit = proximity_bit(g, ViewState(n, o))
            if g.forward[n, o] >= 0:
                assert bit == 0
                continue
            phi = o * math.pi / 12
            rel = np.delete(g.positions - g.positions[n], n, axis=0)
            ahead = rel @ np.array([math.cos(phi), math.sin(phi)]) > 0
            near = np.hypot(*rel.T) < 0.3
            assert bit == int(np.any(ahead & near))


# -- grid and targets --------------------------------------------------------------

def test_grid_single_cluster():
    g = build_graph([Pose2D(0.01 * i, 0.0) for i in range(5)])
    grid = make_grid(g, (10, 10), bounds=((0, 0), (10, 10)))
    assert grid.k == 1


def test_grid_every_cell_occupied():
    pts = [Pose2D(c + 0.5, r + 0.5) for r in range(10) for c in range(10)]
    pts += [Pose2D(0, 0), Pose2D(10, 10)]
    g = build_graph(pts)
    grid = make_grid(g, (10, 10))
    assert grid.k == 100
    assert list(grid.valid_cells) == sorted(grid.valid_cells)


def test_grid_cells_are_exactly_the_occupied_ones():
    g = random_graph(30, 4)
    grid = make_grid(g, (10, 10))
    g = g.with_grid(grid)
    assert set(grid.valid_cells) == {grid.cell_index(x, y) for x, y in g.positions}
    assert np.all(g.node_cell >= 0)


def test_sample_target_image():
    g = random_graph(30, 5)
    g = g.with_grid(make_grid(g, (4, 4)))
    t0 = sample_target_image(g, 0, rng_seed=3)
    t1 = sample_target_image(g, 0, rng_seed=3)
    np.testing.assert_array_equal(t0.descriptors[0], t1.descriptors[0])
    two = sample_target_image(g, 0, two_views=True, rng_seed=3)
    assert len(two.descriptors) == 2
    assert (two.states[1].orient - two.states[0].orient) % 24 == 12
    for seed in range(100):
        rank = seed % g.grid.k
        t = sample_target_image(g, rank, rng_seed=seed)
        assert g.node_cell[t.states[0].node_id] == rank
        assert np.all(np.abs(t.embedding()) <= 1.0)


def test_sample_target_image_empty_cell():
    g = build_graph([Pose2D(0, 0), Pose2D(3, 3)])
    g = g.with_grid(make_grid(g, (2, 2)))
    from hinav.worldview import GridSpec
    grid = GridSpec(g.grid.origin, g.grid.cell_size, g.grid.dims, g.grid.valid_cells + (1,))
    with pytest.raises(EmptyCell):
        sample_target_image(g.with_grid(grid), grid.k - 1)


def test_choose_targets_spread():
    g = random_graph(60, 6, extent=10.0)
    g = g.with_grid(make_grid(g, (10, 10)))
    t = choose_targets(g, 3)
    assert len(set(t)) == 3
    centers = np.array([g.grid.center(r) for r in t])
    d = [np.hypot(*(centers[i] - centers[j])) for i in range(3) for j in range(i)]
    assert min(d) > 4.0
    assert OneHotTarget(t[0]).cell_rank == t[0]


# -- serialization -----------------------------------------------------------------

def test_graph_round_trip(tmp_path):
    g = random_graph(25, 8)
    g = g.with_grid(make_grid(g, (5, 5)))
    path = tmp_path / "g.navgraph"
    g.save(path)
    h = PanoGraph.load(path)
    np.testing.assert_array_equal(g.positions, h.positions)
    np.testing.assert_array_equal(g.descriptor_seeds, h.descriptor_seeds)
    np.testing.assert_array_equal(g.forward, h.forward)
    assert g.grid == h.grid
    np.testing.assert_array_equal(g.base_descriptors, h.base_descriptors)
    h.save(tmp_path / "h.navgraph")
    assert (tmp_path / "h.navgraph").read_bytes() == path.read_bytes()


def test_graph_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_text("NOTAGRAPH\n{}")
    with pytest.raises(FormatError):
        PanoGraph.load(p)


def test_pose_csv_round_trip(tmp_path):
    poses = [Pose2D(0.1, 0.2), Pose2D(1.0 / 3.0, -2.5)]
    write_poses(tmp_path / "p.csv", poses)
    back = read_poses(tmp_path / "p.csv")
    assert [(p.x, p.y) for p in back] == [(p.x, p.y) for p in poses]
    (tmp_path / "q.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_poses(tmp_path / "q.csv")
