import warnings

import numpy as np
import pytest
from scipy.special import jv, spherical_jn

from lbspec.geometry import TriangleMesh, VoxelGrid
from lbspec.partgen import gen_barrel_cylinder, gen_voxel_part, icosphere, NO_NOISE
from lbspec.spectra import (
    AnalyticShape,
    SpectrumConfig,
    analytic_spectrum,
    bessel_zeros,
    classical_mds,
    compute_spectrum,
    error_norm,
    read_spectrum_csv,
    spherical_bessel_zeros,
    voxelize,
    write_mds_csv,
    write_spectrum_csv,
)

from conftest import block, random_rotation


def test_analytic_examples():
    assert analytic_spectrum(AnalyticShape("cube"), 1)[0] == pytest.approx(3 * np.pi ** 2)
    assert analytic_spectrum(AnalyticShape("ball"), 1)[0] == pytest.approx(np.pi ** 2)
    assert np.allclose(analytic_spectrum(AnalyticShape("sphere-surface"), 4), [0, 2, 2, 2])


def test_box_spectrum_by_enumeration():
    ref = sorted(
        np.pi ** 2 * (a * a + b * b + c * c / 4)
        for a in range(1, 12) for b in range(1, 12) for c in range(1, 24)
    )[:50]
    got = analytic_spectrum(AnalyticShape("cuboid", (1, 1, 2)), 50)
    assert np.allclose(got, ref, rtol=1e-13)
    cube = analytic_spectrum(AnalyticShape("cube", 2.0), 5) / (np.pi ** 2 / 4)
    assert np.allclose(cube, [3, 6, 6, 6, 9])


def test_sphere_multiplicities():
    vals = analytic_spectrum(AnalyticShape("sphere-surface", 2.0), 16)
    ref = np.repeat([l * (l + 1) / 4 for l in range(4)], [1, 3, 5, 7])
    assert np.allclose(vals, ref)


def test_bessel_zeros():
    z = bessel_zeros(0, 3)
    assert np.allclose(z, [2.404825557695773, 5.520078110286311, 8.653727912911013], rtol=1e-12)
    assert np.allclose(jv(3, bessel_zeros(3, 4)), 0, atol=1e-12)
    assert np.allclose(spherical_bessel_zeros(0, 3), np.pi * np.arange(1, 4))
    assert np.allclose(spherical_jn(2, spherical_bessel_zeros(2, 3)), 0, atol=1e-12)


def test_ball_multiplicities():
    vals = analytic_spectrum(AnalyticShape("ball"), 50)
    # j_{l,n}^2 repeated 2l+1 times, compared by brute force
    ref = sorted(
        z * z for l in range(12) for z in spherical_bessel_zeros(l, 6) for _ in range(2 * l + 1)
    )[:50]
    assert np.allclose(vals, ref, rtol=1e-12)


def test_cylinder_spectrum():
    vals = analytic_spectrum(AnalyticShape("cylinder", (1.0, 2.0)), 30)
    ref = sorted(
        (z / 1.0) ** 2 + (np.pi * q / 2.0) ** 2
        for m in range(10) for z in bessel_zeros(m, 6) for q in range(1, 12)
        for _ in range(1 if m == 0 else 2)
    )[:30]
    assert np.allclose(vals, ref, rtol=1e-12)


def test_analytic_shape_validation():
    with pytest.raises(ValueError):
        AnalyticShape("torus")
    with pytest.raises(ValueError):
        AnalyticShape("cuboid", (1, 2))


def test_error_norm():
    assert error_norm([1, 2, 3], [1, 2, 5, 9]) == pytest.approx(2.0)


@pytest.mark.parametrize("order,tol", [("linear", 0.05), ("cubic", 0.01)])
def test_sphere_accuracy(order, tol):
    s = compute_spectrum(icosphere(4), SpectrumConfig(order, "closed", 11))
    ref = analytic_spectrum(AnalyticShape("sphere-surface"), 11)
    assert s.eigenvalues[0] <= 1e-8 * s.eigenvalues[1]
    assert np.all(np.abs(s.eigenvalues[1:] / ref[1:] - 1) < tol)


def test_coarse_cube_close_to_analytic():
    s = compute_spectrum(block(6, 6, 6, (1 / 6,) * 3), SpectrumConfig("cubic", "dirichlet", 10))
    ref = analytic_spectrum(AnalyticShape("cube"), 10)
    assert np.all(np.abs(s.eigenvalues / ref - 1) < 0.02)
    lin = compute_spectrum(block(6, 6, 6, (1 / 6,) * 3), SpectrumConfig("linear", "dirichlet", 10))
    assert error_norm(lin.eigenvalues, ref) > error_norm(s.eigenvalues, ref)


def test_dense_fallback_agrees():
    g = block(3, 3, 3)
    s = compute_spectrum(g, SpectrumConfig("linear", "dirichlet", 8))
    assert len(s.eigenvalues) == 8 and s.residuals.max() < 1e-8
    with pytest.raises(ValueError, match="exceeds"):
        compute_spectrum(g, SpectrumConfig("linear", "dirichlet", 9))


def test_invariance():
    rng = np.random.default_rng(2)
    mesh = gen_barrel_cylinder(1.0, seed=4)
    cfg = SpectrumConfig("linear", "closed", 15)
    ref = compute_spectrum(mesh, cfg).eigenvalues
    moved = compute_spectrum(mesh.transformed(random_rotation(rng), [5, -3, 2]), cfg).eigenvalues
    assert np.allclose(moved[1:], ref[1:], rtol=1e-9)
    scaled = compute_spectrum(mesh.transformed(scale=2.0), cfg).eigenvalues
    assert np.allclose(scaled[1:], ref[1:] / 4, rtol=1e-9)
    g = gen_voxel_part(7.0)
    vcfg = SpectrumConfig("linear", "dirichlet", 10)
    a = compute_spectrum(g, vcfg).eigenvalues
    b = compute_spectrum(g.with_spacing((2, 2, 2)), vcfg).eigenvalues
    assert np.allclose(b, a / 4, rtol=1e-9)


def test_spectrum_csv_round_trip(tmp_path):
    vals = np.array([0.0, 1 / 3, np.pi, 1e-300, 12345.678901234567])
    write_spectrum_csv(vals, tmp_path / "s.csv")
    assert np.array_equal(read_spectrum_csv(tmp_path / "s.csv"), vals)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_spectrum_csv(tmp_path / "bad.csv")


def test_mds_equilateral():
    e = np.eye(15)[:3] / np.sqrt(2)
    X = classical_mds(e + 7.0, 2)
    d = np.linalg.norm(X[:, None] - X[None], axis=2)
    assert np.allclose(d[np.triu_indices(3, 1)], 1.0, atol=1e-10)


def test_mds_duplicates_coincide():
    rng = np.random.default_rng(0)
    X = rng.random((4, 15))
    X = np.vstack([X, X[0], X[0]])
    Y = classical_mds(X, 3)
    assert np.allclose(Y[4], Y[0], atol=1e-10) and np.allclose(Y[5], Y[0], atol=1e-10)


def test_mds_recovers_planar_distances():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(10, 2))
    Q, _ = np.linalg.qr(rng.normal(size=(15, 15)))
    X = np.hstack([P, np.zeros((10, 13))]) @ Q + 3.0
    Y = classical_mds(X, 2)
    dp = np.linalg.norm(P[:, None] - P[None], axis=2)
    dy = np.linalg.norm(Y[:, None] - Y[None], axis=2)
    assert np.allclose(dp, dy, atol=1e-9)


def test_mds_errors_and_rank_warning():
    with pytest.raises(ValueError):
        classical_mds(np.ones((3, 5)), 3)
    with pytest.raises(ValueError):
        classical_mds(np.ones((5, 5)), 4)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        classical_mds(np.tile([[0.0], [1.0]], (2, 3)), 2)
    assert any(issubclass(x.category, RuntimeWarning) for x in w)


def test_mds_csv(tmp_path):
    write_mds_csv(np.arange(6.0).reshape(2, 3), ["a", "b"], tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "part_id,x,y,z" and lines[2] == "b,3,4,5"


def test_voxelize():
    g = voxelize(AnalyticShape("cuboid", (1, 1, 2)), 10)
    assert g.dims == (10, 10, 20) and np.allclose(g.spacing, 0.1) and g.n_active == 2000
    ball = voxelize(AnalyticShape("ball", 2.0), 10)
    assert ball.dims == (20, 20, 20) and np.allclose(ball.spacing, 0.2)
    vol = ball.n_active * np.prod(ball.spacing)
    assert vol == pytest.approx(4 / 3 * np.pi * 8, rel=0.03)
    cyl = voxelize(AnalyticShape("cylinder", (1.0, 3.0)), 8)
    assert cyl.dims == (16, 16, 24)
    with pytest.raises(ValueError):
        voxelize(AnalyticShape("sphere-surface"), 4)
