import numpy as np
import pytest

from lbspec.geometry import boundary_loops, exposed_faces, mesh_boundary_edges
from lbspec.partgen import (
    CYL_SEGMENTS,
    GenerationError,
    NO_NOISE,
    NoiseModel,
    apply_correlated_noise,
    correlated_covariance,
    flip_boundary_voxels,
    gen_barrel_cylinder,
    gen_open_variant,
    gen_sphere_mesh,
    gen_voxel_part,
    hole_eccentricity,
    icosphere,
    icosphere_level,
    polar_cap,
    voxel_hole_part,
)


def test_icosahedron():
    m = gen_sphere_mesh(12)
    assert m.n_vertices == 12 and m.n_triangles == 20
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 1.0)


@pytest.mark.parametrize("level", range(5))
def test_subdivision_counts(level):
    m = icosphere(level)
    assert m.n_vertices == 10 * 4 ** level + 2
    assert m.n_triangles == 20 * 4 ** level
    assert m.is_closed()


def test_level_selection():
    assert icosphere_level(2562) == 4
    assert icosphere_level(2000) == 4
    assert icosphere_level(300) == 2  # 162 is nearer than 642
    assert icosphere_level(500) == 3
    with pytest.raises(ValueError):
        icosphere_level(5)


def test_isotropic_sphere_noise():
    sigma = 0.05
    m = gen_sphere_mesh(2562, NoiseModel("isotropic", sigma=sigma), seed=3)
    r = np.linalg.norm(m.vertices, axis=1)
    n = len(r)
    # E|e_r + noise| = 1 + sigma^2 to second order
    assert abs(r.mean() - (1 + sigma ** 2)) < 3 * sigma / np.sqrt(n)
    assert r.std() == pytest.approx(sigma, rel=0.1)


def test_barrel_radius_noise_free():
    m = gen_barrel_cylinder(0.0, noise=NO_NOISE, seed=0)
    v = m.vertices
    side = (v[:, 2] > 1e-9) & (v[:, 2] < 50 - 1e-9)
    assert np.allclose(np.hypot(v[side, 0], v[side, 1]), 10.0)
    m = gen_barrel_cylinder(10.0, noise=NO_NOISE, seed=0)
    v = m.vertices
    mid = np.abs(v[:, 2] - 25) < 1e-9
    assert mid.any() and np.allclose(np.hypot(v[mid, 0], v[mid, 1]), 10.5)


@pytest.mark.parametrize("delta", [0.0, 1.0, 10.0])
def test_barrel_closed_and_sized(delta):
    for seed in range(3):
        m = gen_barrel_cylinder(delta, seed=seed)
        assert m.is_closed()
        assert 1995 <= m.n_vertices <= 2005


def test_barrel_reproducible():
    a = gen_barrel_cylinder(1.0, seed=9)
    b = gen_barrel_cylinder(1.0, seed=9)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)
    c = gen_barrel_cylinder(1.0, seed=10)
    assert c.n_vertices != a.n_vertices or not np.array_equal(c.vertices, a.vertices)


def test_open_barrel_boundary():
    m = gen_barrel_cylinder(1.0, seed=1, open_bottom=True)
    assert len(mesh_boundary_edges(m)) == CYL_SEGMENTS
    assert len(boundary_loops(m)) == 1


def test_correlated_noise_reduces_to_isotropic():
    C = correlated_covariance(np.linspace(0, 1, 5), 0.0, 0.05, 2.0)
    assert np.allclose(C, 0.05 ** 2 * np.eye(5))


def test_correlated_noise_coincident_points():
    pts = np.zeros((2, 3))
    rng = np.random.default_rng(0)
    d = np.array([apply_correlated_noise(pts, 0.05, 0.0, 1, 1, 1, seed=rng) for _ in range(10_000)])
    for k in range(3):
        assert np.corrcoef(d[:, 0, k], d[:, 1, k])[0, 1] > 0.99
    # different axes are independent
    assert abs(np.corrcoef(d[:, 0, 0], d[:, 0, 1])[0, 1]) < 4 / np.sqrt(10_000)


def test_correlated_noise_covariance():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    rng = np.random.default_rng(1)
    d = np.array([apply_correlated_noise(pts, 0.04, 0.03, 2.0, 1, 1, seed=rng) for _ in range(20_000)])
    emp = np.cov(d[:, :, 0].T)
    assert np.allclose(emp, correlated_covariance(pts[:, 0], 0.04, 0.03, 2.0), atol=1.5e-4)


def test_correlated_noise_guard():
    with pytest.raises(ValueError):
        apply_correlated_noise(np.zeros((10, 3)), 0.05, 0, 1, 1, 1, max_points=5)


def test_open_variant():
    m = gen_open_variant(icosphere(4), polar_cap(10))
    assert not m.is_closed() and len(boundary_loops(m)) == 1
    with pytest.raises(GenerationError, match="hole spec removed no triangles"):
        gen_open_variant(icosphere(2), lambda c: np.zeros(len(c), dtype=bool))
    with pytest.raises(GenerationError, match="disconnects"):
        gen_open_variant(icosphere(3), lambda c: np.abs(c[:, 2]) < 0.2)


def test_eccentricities():
    assert hole_eccentricity(8) == 0
    assert hole_eccentricity(6) == pytest.approx(0.6614, abs=5e-5)
    assert hole_eccentricity(7) == pytest.approx(0.4841, abs=5e-5)
    assert hole_eccentricity(9) == pytest.approx(0.4581, abs=5e-5)


def test_voxel_part_shape():
    g = gen_voxel_part(8.0)
    assert g.dims == (20, 20, 10)
    occ = voxel_hole_part(8.0)
    # circular hole: symmetric under swapping x and y
    assert np.array_equal(occ, occ.transpose(1, 0, 2))
    assert not voxel_hole_part(6.0)[10, 10, 0]
    with pytest.raises(GenerationError):
        gen_voxel_part(10.0)


@pytest.mark.parametrize("seed", range(10))
def test_flip_counts(seed):
    base = voxel_hole_part(6.0)
    g = gen_voxel_part(6.0, max_noise=25, seed=seed)
    flipped = int((g.occupancy != base).sum())
    assert 2 <= flipped <= 50
    off = base & ~g.occupancy
    surf = exposed_faces(type(g)(base.shape, (1, 1, 1), base)).any(axis=1)
    assert 1 <= off.sum() <= 25 and 1 <= (g.occupancy & ~base).sum() <= 25
    assert surf.sum() > 0


def test_flip_reproducible():
    a = gen_voxel_part(9.0, 100, seed=4)
    b = gen_voxel_part(9.0, 100, seed=4)
    assert np.array_equal(a.occupancy, b.occupancy)
    assert not np.array_equal(a.occupancy, gen_voxel_part(9.0, 100, seed=5).occupancy)


def test_flip_requires_candidates():
    occ = np.zeros((4, 4, 4), dtype=bool)
    occ[1:3, 1:3, 1:3] = True
    out = flip_boundary_voxels(occ, 3, np.random.default_rng(0))
    assert 2 <= (out != occ).sum() <= 6
