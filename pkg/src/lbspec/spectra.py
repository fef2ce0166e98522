"""Spectrum pipeline, closed-form reference spectra and MDS export."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import jv, spherical_jn

from .eigen import DEFAULT_TOL, Spectrum, dense_smallest, smallest_eigenpairs
from .fem_surface import assemble_surface
from .fem_voxel import assemble_voxel
from .geometry import TriangleMesh, VoxelGrid

DEFAULT_K = 15
DENSE_FALLBACK = 400


@dataclass(frozen=True)
class SpectrumConfig:
    """Basis order, boundary condition, eigenvalue count and solver tolerance."""

    order: str = "linear"
    bc: str = "neumann"
    k: int = DEFAULT_K
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def assemble(part: Union[TriangleMesh, VoxelGrid], cfg: SpectrumConfig):
    if isinstance(part, TriangleMesh):
        return assemble_surface(part, cfg.order, cfg.bc)
    if isinstance(part, VoxelGrid):
        return assemble_voxel(part, cfg.order, cfg.bc)
    raise TypeError(f"expected TriangleMesh or VoxelGrid, got {type(part).__name__}")


def compute_spectrum(
    part: Union[TriangleMesh, VoxelGrid], cfg: SpectrumConfig = SpectrumConfig(), seed: int = 0
) -> Spectrum:
    """The ``cfg.k`` smallest Laplace-Beltrami eigenvalues of a part.

    Dirichlet systems are solved at shift 0. Neumann and closed systems use
    the solver's default small negative shift because the constant function
    lies in the kernel of ``K``.
    """
    system = assemble(part, cfg)
    N = system.N
    if cfg.k > N:
        raise ValueError(f"k={cfg.k} exceeds the {N} degrees of freedom")
    if cfg.k >= N - 1 or N <= DENSE_FALLBACK and cfg.k > N // 4:
        return dense_smallest(system.K, system.B, cfg.k, cfg.tol)
    sigma = 0.0 if system.bc == "dirichlet" else None
    return smallest_eigenpairs(
        system.K, system.B, cfg.k, cfg.tol, sigma=sigma, seed=seed, return_vectors=False
    )


# --- closed-form spectra ----------------------------------------------------

SHAPES = ("sphere-surface", "ball", "cube", "cuboid", "cylinder")


@dataclass(frozen=True)
class AnalyticShape:
    """A shape with a known spectrum.

    ``dims`` holds the radius for ``sphere-surface`` and ``ball``, the edge
    length for ``cube``, ``(a, b, c)`` for ``cuboid`` and ``(R, H)`` for the
    solid ``cylinder``.
    """

    shape: str
    dims: tuple = (1.0,)
    bc: str = "dirichlet"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        dims = tuple(float(d) for d in np.atleast_1d(self.dims))
        want = {"cuboid": 3, "cylinder": 2}.get(self.shape, 1)
        if len(dims) != want:
            raise ValueError(f"{self.shape} needs {want} dimension(s), got {len(dims)}")
        if min(dims) <= 0:
            raise ValueError("dimensions must be positive")
        object.__setattr__(self, "dims", dims)


def _zeros(f, n: int, start: float = 1e-6, step: float = 0.1) -> list:
    """First ``n`` positive roots of ``f`` by grid scan and Brent refinement."""
    out = []
    a, fa = start, f(start)
    while len(out) < n:
        b = a + step
        fb = f(b)
        if fa == 0.0:
            out.append(a)
        elif fa * fb < 0:
            out.append(brentq(f, a, b, xtol=1e-14, rtol=1e-15))
        a, fa = b, fb
    return out


def bessel_zeros(m: int, n: int) -> np.ndarray:
    """First ``n`` positive zeros of the Bessel function ``J_m``."""
    return np.array(_zeros(lambda x: jv(m, x), n, start=max(m, 1) * 0.5))


def spherical_bessel_zeros(l: int, n: int) -> np.ndarray:
    """First ``n`` positive zeros of the spherical Bessel function ``j_l``."""
    return np.array(_zeros(lambda x: spherical_jn(l, x), n, start=max(l, 1) * 0.5))


def _box(edges: Sequence[float], k: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    n = 1
    while True:
        idx = np.arange(1, n + 1)
        grids = np.meshgrid(*([idx] * 3), indexing="ij")
        vals = sum((np.pi * g / a) ** 2 for g, a in zip(grids, edges)).ravel()
        vals.sort()
        # a mode outside the grid has some index >= n + 1
        base = np.sum((np.pi / edges) ** 2)
        bound = np.min(base + (np.pi / edges) ** 2 * ((n + 1) ** 2 - 1))
        if len(vals) >= k and vals[k - 1] <= bound:
            return vals[:k]
        n += 1


def _expand(pairs, k: int) -> np.ndarray:
    vals = np.sort(np.concatenate([np.full(mult, val) for val, mult in pairs]))
    return vals[:k]


def analytic_spectrum(shape: AnalyticShape, k: int) -> np.ndarray:
    """The ``k`` smallest eigenvalues of ``shape``, multiplicities expanded.

    The sphere surface has no boundary; the solid shapes use the Dirichlet
    condition.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    bc = shape.bc.lower()
    if shape.shape == "sphere-surface":
        if bc not in ("closed", "neumann", "dirichlet"):
            raise ValueError(f"unsupported boundary condition {shape.bc!r}")
        r = shape.dims[0]
        L = int(math.isqrt(k)) + 1
        return _expand([(l * (l + 1) / r**2, 2 * l + 1) for l in range(L)], k)
    if bc != "dirichlet":
        raise ValueError(f"{shape.shape} spectrum is available for dirichlet only, got {shape.bc!r}")
    if shape.shape in ("cube", "cuboid"):
        edges = shape.dims * 3 if shape.shape == "cube" else shape.dims
        return _box(edges, k)
    if shape.shape == "ball":
        R = shape.dims[0]
        pairs, l = [], 0
        while True:
            z = spherical_bessel_zeros(l, k)
            pairs.extend(((x / R) ** 2, 2 * l + 1) for x in z)
            # j_{l,1} grows with l, so later l cannot enter the first k
            if len(pairs) >= k and _expand(pairs, k)[-1] < (z[0] / R) ** 2:
                return _expand(pairs, k)
            l += 1
    R, H = shape.dims
    pairs, m = [], 0
    while True:
        a = bessel_zeros(m, k)
        for x in a:
            for p in range(1, k + 1):
                pairs.append(((x / R) ** 2 + (p * np.pi / H) ** 2, 1 if m == 0 else 2))
        first = (a[0] / R) ** 2 + (np.pi / H) ** 2
        if _expand(pairs, k)[-1] < first:
            return _expand(pairs, k)
        m += 1


def voxelize(shape: AnalyticShape, resolution: int) -> VoxelGrid:
    """Voxel model of a solid shape with ``resolution`` voxels per unit length.

    Ball and cylinder keep the voxels whose centres lie inside, with the
    resolution counted per radius; the ball and cylinder are centred in the
    grid.
    """
    n = int(resolution)
    if n < 1:
        raise ValueError("resolution must be >= 1")
    if shape.shape in ("cube", "cuboid"):
        edges = shape.dims * 3 if shape.shape == "cube" else shape.dims
        dims = tuple(max(1, round(e * n)) for e in edges)
        return VoxelGrid(dims, tuple(e / d for e, d in zip(edges, dims)), np.ones(dims, dtype=bool))
    if shape.shape == "ball":
        R = shape.dims[0]
        c = (np.arange(2 * n) + 0.5 - n) / n
        occ = c[:, None, None] ** 2 + c[None, :, None] ** 2 + c[None, None, :] ** 2 < 1
        return VoxelGrid(occ.shape, (R / n,) * 3, occ)
    if shape.shape == "cylinder":
        R, H = shape.dims
        nz = max(1, round(H / R * n))
        c = (np.arange(2 * n) + 0.5 - n) / n
        disc = c[:, None] ** 2 + c[None, :] ** 2 < 1
        occ = np.repeat(disc[:, :, None], nz, axis=2)
        return VoxelGrid(occ.shape, (R / n, R / n, H / nz), occ)
    raise ValueError(f"{shape.shape} is not a solid")


def error_norm(computed, reference) -> float:
    """Euclidean norm of the difference over the common leading length."""
    c, r = np.asarray(computed, dtype=float), np.asarray(reference, dtype=float)
    n = min(len(c), len(r))
    return float(np.linalg.norm(c[:n] - r[:n]))


# --- multidimensional scaling -----------------------------------------------


def classical_mds(spectra, dim: int = 2) -> np.ndarray:
    """Torgerson embedding of spectra in ``dim`` dimensions.

    Parameters
    ----------
    spectra : (n, k) array_like
        One spectrum per row.
    dim : int
        Target dimension, 2 or 3.

    Returns
    -------
    (n, dim) ndarray
        Coordinates. Columns beyond the numerical rank are zero and trigger a
        ``RuntimeWarning``.
    """
    X = np.asarray(spectra, dtype=float)
    if X.ndim != 2:
        raise ValueError("spectra must be a 2-D array or a list of equal-length vectors")
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    n = len(X)
    if n < dim + 1:
        raise ValueError(f"need at least {dim + 1} spectra for dim={dim}, got {n}")
    sq = np.sum(X**2, axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    J = np.eye(n) - 1.0 / n
    G = -0.5 * J @ D2 @ J
    vals, vecs = np.linalg.eigh(0.5 * (G + G.T))
    vals, vecs = vals[::-1][:dim], vecs[:, ::-1][:, :dim]
    tol = max(n * np.finfo(float).eps * max(abs(vals[0]), 1.0), 1e-12)
    keep = vals > tol
    if not keep.all():
        warnings.warn(
            f"only {int(keep.sum())} positive eigenvalue(s); embedding has lower rank than {dim}",
            RuntimeWarning, stacklevel=2,
        )
    coords = vecs * np.sqrt(np.where(keep, vals, 0.0))
    # fix the sign of each axis so output is reproducible
    for j in range(dim):
        i = np.argmax(np.abs(coords[:, j]))
        if coords[i, j] < 0:
            coords[:, j] *= -1
    return coords


# --- CSV --------------------------------------------------------------------


def write_spectrum_csv(values, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(np.asarray(values, dtype=float), start=1):
            w.writerow([i, f"{v:.17g}"])


def read_spectrum_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip() for c in rows[0]] != ["index", "eigenvalue"]:
        raise ValueError(f"{path}: expected header 'index,eigenvalue'")
    try:
        return np.array([float(r[1]) for r in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed spectrum row ({exc})") from None


def write_mds_csv(coords, part_ids, path) -> None:
    coords = np.asarray(coords, dtype=float)
    axes = ["x", "y", "z"][: coords.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["part_id", *axes])
        for pid, row in zip(part_ids, coords):
            w.writerow([pid, *(f"{v:.17g}" for v in row)])
