import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbspec.geometry import (
    ParseError,
    TriangleMesh,
    ValidationError,
    VoxelGrid,
    boundary_loops,
    euler_characteristic,
    format_off,
    format_voxgrid,
    load_triangle_mesh,
    load_voxel_grid,
    mesh_boundary_edges,
    parse_off,
    parse_voxgrid,
    voxel_boundary_nodes,
    write_off,
    write_voxgrid,
)
from lbspec.fem_voxel import voxel_node_map

from conftest import TETRA_OFF, block


def test_tetrahedron_is_closed(tetra):
    assert tetra.n_vertices == 4 and tetra.n_triangles == 4
    assert tetra.is_closed()
    assert len(mesh_boundary_edges(tetra)) == 0
    assert euler_characteristic(tetra) == 2


def test_single_triangle_boundary():
    mesh = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    edges = {tuple(e) for e in mesh_boundary_edges(mesh)}
    assert edges == {(0, 1), (1, 2), (0, 2)}
    assert len(boundary_loops(mesh)) == 1


def test_repeated_vertex_rejected():
    with pytest.raises(ValidationError, match="repeated vertex in triangle 0"):
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 0 1\n")


def test_out_of_range_index_rejected():
    with pytest.raises(ValidationError, match="invalid vertex index in triangle 0"):
        TriangleMesh(np.eye(3), [[0, 1, 3]])


def test_degenerate_triangle_rejected():
    with pytest.raises(ValidationError, match="degenerate triangle 1"):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3]])


def test_non_manifold_edge_rejected():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    with pytest.raises(ValidationError, match="non-manifold edge"):
        TriangleMesh(v, [[0, 1, 2], [0, 1, 3], [0, 1, 4]])


def test_off_parse_errors():
    with pytest.raises(ParseError):
        parse_off("PLY\n")
    with pytest.raises(ParseError, match="not a triangle"):
        parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n4 0 1 2 3\n")
    with pytest.raises(ParseError):
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n")


def test_off_round_trip(tmp_path, sphere642):
    path = tmp_path / "s.off"
    write_off(sphere642, path)
    back = load_triangle_mesh(path)
    assert np.array_equal(back.vertices, sphere642.vertices)
    assert np.array_equal(back.triangles, sphere642.triangles)
    assert parse_off(format_off(back)).n_triangles == sphere642.n_triangles


def test_off_comments_and_split_header():
    text = "# tetra\n" + TETRA_OFF.replace("OFF\n", "OFF # header\n")
    assert parse_off(text).n_triangles == 4


def test_sphere_minus_one_triangle(sphere642):
    for f in (0, 17, 1279):
        t = np.delete(sphere642.triangles, f, axis=0)
        mesh = TriangleMesh(sphere642.vertices, t)
        got = {tuple(e) for e in mesh_boundary_edges(mesh)}
        a, b, c = sphere642.triangles[f]
        assert got == {tuple(sorted(p)) for p in ((a, b), (b, c), (a, c))}


def _brute_boundary(triangles):
    count = {}
    for tri in triangles:
        for i in range(3):
            e = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
            count[e] = count.get(e, 0) + 1
    return {e for e, c in count.items() if c == 1}


@settings(max_examples=25, deadline=None)
@given(st.sets(st.integers(0, 79), min_size=1, max_size=30))
def test_boundary_edges_match_brute_force(drop):
    from lbspec.partgen import icosphere
    ico = icosphere(1)
    keep = np.array([i not in drop for i in range(ico.n_triangles)])
    if not keep.any():
        return
    t = ico.triangles[keep]
    mesh = TriangleMesh(ico.vertices, t)
    assert {tuple(e) for e in mesh_boundary_edges(mesh)} == _brute_boundary(t)


def test_voxgrid_examples():
    g = parse_voxgrid("VOXGRID 1\ndims 2 2 2\nspacing 1 1 1\n11111111\n")
    assert g.n_active == 8
    g = parse_voxgrid("VOXGRID 1\ndims 2 1 1\nspacing 1 1 1\n10\n")
    assert g.n_active == 1
    assert g.active_indices().tolist() == [[0, 0, 0]]


def test_voxgrid_x_fastest():
    g = parse_voxgrid("VOXGRID 1\ndims 2 2 1\nspacing 1 1 1\n01\n00\n")
    assert g.occupancy[1, 0, 0] and g.n_active == 1


def test_voxgrid_dimension_mismatch():
    with pytest.raises(ParseError, match="dimension mismatch: header declares 8 cells, payload has 7"):
        parse_voxgrid("VOXGRID 1\ndims 2 2 2\nspacing 1 1 1\n1111111\n")


def test_voxgrid_bad_spacing():
    with pytest.raises(ValidationError):
        parse_voxgrid("VOXGRID 1\ndims 1 1 1\nspacing 1 0 1\n1\n")


def test_voxgrid_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    g = VoxelGrid((3, 4, 5), (0.5, 1.0, 2.0), rng.random((3, 4, 5)) < 0.5)
    path = tmp_path / "g.vox"
    write_voxgrid(g, path)
    back = load_voxel_grid(path)
    assert back.dims == g.dims and back.spacing == g.spacing
    assert np.array_equal(back.occupancy, g.occupancy)
    assert format_voxgrid(back) == format_voxgrid(g)


def test_single_voxel_all_boundary():
    g = block(1, 1, 1)
    nodes = voxel_node_map(g, "linear")
    assert len(voxel_boundary_nodes(g, nodes)) == 8


def test_voxel_pair_all_boundary():
    g = block(2, 1, 1)
    nodes = voxel_node_map(g, "linear")
    assert len(nodes) == 12
    assert len(voxel_boundary_nodes(g, nodes)) == 12


@pytest.mark.parametrize("n", [2, 3, 4])
def test_full_block_boundary_count(n):
    # a fully active n^3 block has (n-1)^3 interior lattice nodes
    g = block(n, n, n)
    nodes = voxel_node_map(g, "linear")
    assert len(nodes) == (n + 1) ** 3
    assert len(voxel_boundary_nodes(g, nodes)) == (n + 1) ** 3 - (n - 1) ** 3


def test_boundary_set_from_exposed_faces():
    # L-shaped grid: brute-force the nodes on faces without an active neighbour
    occ = np.zeros((3, 3, 2), dtype=bool)
    occ[:, 0, :] = True
    occ[0, :, :] = True
    g = VoxelGrid(occ.shape, (1, 1, 1), occ)
    nodes = voxel_node_map(g, "linear")
    ijk = g.active_indices()
    corners = np.array([[a, b, c] for c in (0, 1) for b in (0, 1) for a in (0, 1)])
    lattice = {}
    for e, cell in enumerate(ijk):
        for l, off in enumerate(corners):
            lattice[tuple(cell + off)] = nodes.element_nodes[e, l]
    expected = set()
    for cell in ijk:
        for axis in range(3):
            for side in (0, 1):
                nb = cell.copy()
                nb[axis] += 1 if side else -1
                inside = all(0 <= nb[i] < g.dims[i] for i in range(3))
                if inside and occ[tuple(nb)]:
                    continue
                for off in corners[corners[:, axis] == side]:
                    expected.add(lattice[tuple(cell + off)])
    assert set(voxel_boundary_nodes(g, nodes).node_ids) == expected
