import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ballann.geometry import CanonicalCube, InputError, max_level_for_dim
from ballann.quadtree import (
    build_from_cubes,
    build_from_points,
    cube_to_key,
    encode_points,
    key_to_cube,
    morton_decode,
    morton_encode,
)


def reference_encode(coords: np.ndarray, level: int, dim: int) -> np.ndarray:
    """Bit-at-a-time interleave, the definition the fast paths must reproduce."""
    M = max_level_for_dim(dim)
    out = np.zeros(coords.shape[0], dtype=np.int64)
    for bit in range(level):
        for j in range(dim):
            out |= ((coords[:, j] >> np.int64(bit)) & np.int64(1)) << np.int64(
                bit * dim + (dim - 1 - j)
            )
    return out << np.int64(dim * (M - level))


# -- morton codes ---------------------------------------------------------------


@given(st.integers(1, 5), st.data())
@settings(max_examples=150, deadline=None)
def test_morton_matches_reference(dim, data):
    M = max_level_for_dim(dim)
    level = data.draw(st.integers(0, M))
    m = data.draw(st.integers(1, 8))
    top = 1 << level
    coords = np.array(
        [[data.draw(st.integers(0, top - 1)) for _ in range(dim)] for _ in range(m)],
        dtype=np.int64,
    )
    z = morton_encode(coords, level, dim)
    assert np.array_equal(z, reference_encode(coords, level, dim))
    assert np.array_equal(morton_decode(z, level, dim), coords)


def test_morton_exhaustive_small():
    for dim in (1, 2, 3):
        level = 3
        top = 1 << level
        grids = np.meshgrid(*([np.arange(top)] * dim), indexing="ij")
        coords = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
        z = morton_encode(coords, level, dim)
        assert len(set(z.tolist())) == len(z)  # injective
        assert np.array_equal(morton_decode(z, level, dim), coords)
        assert np.array_equal(z, reference_encode(coords, level, dim))


def test_morton_order_is_hierarchical():
    # A child's key range nests inside its parent's: sorting keys lists
    # ancestors immediately before their descendants.
    dim = 2
    parent = CanonicalCube(2, (1, 3))
    child = CanonicalCube(3, (2, 7))
    zp, lp = cube_to_key(parent)
    zc, lc = cube_to_key(child)
    assert parent.contains_cube(child)
    shift = dim * (max_level_for_dim(dim) - lp)
    assert (zc >> shift) == (zp >> shift)
    assert zp <= zc


def test_key_round_trip():
    cube = CanonicalCube(4, (5, 9, 2))
    z, level = cube_to_key(cube)
    assert key_to_cube(z, level, 3) == cube


def test_encode_points_floor_semantics():
    pts = np.array([[0.0, 0.0], [0.999999, 0.5]])
    codes = encode_points(pts, 2)
    M = max_level_for_dim(2)
    back = morton_decode(codes, M, 2)
    top = 1 << M
    assert np.array_equal(back, np.floor(pts * top).astype(np.int64))


# -- tree construction ------------------------------------------------------------


def _random_cubes(rng, dim, m, max_level=8):
    out = []
    for _ in range(m):
        lev = int(rng.integers(0, max_level + 1))
        out.append(CanonicalCube(lev, tuple(int(c) for c in rng.integers(0, 1 << lev, dim))))
    return out


def _brute_deepest(cubes, p):
    best = None
    for c in cubes:
        if c.contains_point(p) and (best is None or c.level > best.level):
            best = c
    return best


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_point_location_matches_brute_force(dim):
    rng = np.random.default_rng(dim)
    cubes = _random_cubes(rng, dim, 40)
    tree = build_from_cubes(cubes, dim=dim)
    stored = [key_to_cube(int(z), int(l), dim) for z, l in zip(tree.z, tree.level)]
    for c in cubes:
        assert (cube_to_key(c)) in {(int(z), int(l)) for z, l in zip(tree.z, tree.level)}
    for _ in range(400):
        p = tuple(rng.random(dim))
        node = tree.point_location(p)
        assert stored[node] == _brute_deepest(stored, p)


def test_tree_orders_parents_before_children():
    rng = np.random.default_rng(7)
    tree = build_from_cubes(_random_cubes(rng, 2, 60), dim=2)
    cubes = [key_to_cube(int(z), int(l), 2) for z, l in zip(tree.z, tree.level)]
    for i in range(1, tree.size):
        par = int(tree.parent[i])
        assert par < i
        assert cubes[par].contains_cube(cubes[i])
        # No stored node sits strictly between a child and its parent.
        for j in range(tree.size):
            if j in (i, par):
                continue
            assert not (
                cubes[par].contains_cube(cubes[j]) and cubes[j].contains_cube(cubes[i])
            )


def test_lca_closure_makes_sibling_fork_nodes():
    # Two deep cubes whose common ancestor is shallow: the fork must be stored.
    a = CanonicalCube(5, (0,))
    b = CanonicalCube(5, (31,))
    tree = build_from_cubes([a, b], dim=1)
    keys = tree.keys()
    assert cube_to_key(a) in keys and cube_to_key(b) in keys
    assert (0, 0) in keys  # root is the fork here
    assert tree.size == 3


def test_cell_query_reports_node_edge_outside():
    a = CanonicalCube(1, (0,))
    b = CanonicalCube(4, (3,))
    tree = build_from_cubes([a, b], dim=1)
    status, i, _ = tree.cell_query(a)
    assert status == "node"
    # A cube between a and b on the same branch is bracketed by the edge.
    status, u, v = tree.cell_query(CanonicalCube(2, (0,)))
    assert status == "edge"
    assert key_to_cube(int(tree.z[u]), int(tree.level[u]), 1) == a
    assert key_to_cube(int(tree.z[v]), int(tree.level[v]), 1) == b
    # A cube below a with no refinement under it is outside.
    status, u, _ = tree.cell_query(CanonicalCube(4, (7,)))
    assert status == "outside"


@pytest.mark.parametrize("dim", [1, 2])
def test_point_counts_match_brute_force(dim):
    rng = np.random.default_rng(17 + dim)
    pts = rng.random((120, dim))
    tree = build_from_points(pts, dim=dim)
    assert tree.has_points
    for _ in range(120):
        lev = int(rng.integers(0, 7))
        cube = CanonicalCube(lev, tuple(int(c) for c in rng.integers(0, 1 << lev, dim)))
        z, level = cube_to_key(cube)
        brute = sum(1 for p in pts if cube.contains_point(p))
        got = tree.count_points_in_cubes(np.array([z]), level)[0]
        assert got == brute
        ids = tree.point_ids_in_cube(z, level)
        assert len(ids) == brute
        assert all(cube.contains_point(pts[i]) for i in ids)


def test_count_in_node_and_witness():
    rng = np.random.default_rng(5)
    pts = rng.random((50, 2))
    tree = build_from_points(pts, dim=2)
    for i in range(tree.size):
        cube = tree.node_cube(i)
        brute = sum(1 for p in pts if cube.contains_point(p))
        assert tree.count_in_node(i) == brute
        if brute:
            assert cube.contains_point(pts[tree.witness_in_node(i)])


def test_overlay_contains_both_trees():
    rng = np.random.default_rng(23)
    ca = _random_cubes(rng, 2, 25)
    cb = _random_cubes(rng, 2, 25)
    ta = build_from_cubes(ca, dim=2)
    tb = build_from_cubes(cb, dim=2)
    za = np.concatenate([ta.z, tb.z])
    la = np.concatenate([ta.level, tb.level])
    overlay = build_from_cubes((za, la, 2))
    keys = overlay.keys()
    assert ta.keys() <= keys and tb.keys() <= keys
    # Point location in the overlay refines both inputs.
    cubes = {k: key_to_cube(k[0], k[1], 2) for k in keys}
    for _ in range(300):
        p = tuple(rng.random(2))
        co = overlay.node_cube(overlay.point_location(p))
        for t in (ta, tb):
            ci = t.node_cube(t.point_location(p))
            assert ci.contains_cube(co)


def test_point_location_rejects_outside_domain():
    tree = build_from_cubes([CanonicalCube(1, (0,))], dim=1)
    with pytest.raises(InputError):
        tree.point_location((1.0,))
    with pytest.raises(InputError):
        tree.point_location((-0.1,))
