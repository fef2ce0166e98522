"""Trilinear and cubic-serendipity hexahedral elements on voxel grids.

All voxels share one metric, ``diag(s1**2, s2**2, s3**2)``, so the local
stiffness and mass matrices are computed once and scattered through the
node map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem_surface import AssemblyError, FemSystem, _compact, reduce_system
from .geometry import BoundarySet, VoxelGrid, voxel_boundary_nodes

VOXEL_ORDERS = {"linear": 1, "cubic": 3}

_CORNERS = np.array([(i, j, k) for k in (0, 1) for j in (0, 1) for i in (0, 1)])
# each edge: (start corner index, axis)
_EDGES = [
    (int(np.nonzero((_CORNERS == c).all(axis=1))[0][0]), axis)
    for axis in range(3)
    for c in _CORNERS
    if c[axis] == 0
]
# face order -x, +x, -y, +y, -z, +z
_FACES = [(axis, side) for axis in range(3) for side in (0, 1)]


def _voxel_order(order) -> int:
    key = order.lower() if isinstance(order, str) else {1: "linear", 3: "cubic"}.get(order)
    if key not in VOXEL_ORDERS:
        raise ValueError(f"voxel elements support 'linear' or 'cubic', got {order!r}")
    return VOXEL_ORDERS[key]


def _monomials(p: int) -> np.ndarray:
    tri = [(a, b, c) for c in (0, 1) for b in (0, 1) for a in (0, 1)]
    tri.sort(key=lambda e: (sum(e), e[::-1]))
    if p == 1:
        return np.array(tri)
    extra = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        for power in (2, 3):
            for mask in ((0, 0), (1, 0), (0, 1), (1, 1)):
                e = [0, 0, 0]
                e[axis] = power
                e[others[0]], e[others[1]] = mask
                extra.append(tuple(e))
    return np.array(tri + extra)


@dataclass(frozen=True)
class VoxelBasis:
    """Nodal basis on the unit cube.

    Nodes are the 8 corners (x fastest) followed, for the cubic element, by
    two points per edge at 1/3 and 2/3 from the edge's lower corner.
    """

    order: str
    nodes: np.ndarray
    exponents: np.ndarray
    coefficients: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def _mono(self, pts, d=None):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cols = []
        for e in self.exponents:
            e = np.array(e)
            c = np.ones(len(pts))
            if d is not None:
                c = c * e[d]
                e = e.copy()
                e[d] = max(e[d] - 1, 0)
            cols.append(c * np.prod(pts ** e, axis=1))
        return np.stack(cols, axis=1)

    def __call__(self, pts) -> np.ndarray:
        """Shape-function values, shape ``(n_points, n_nodes)``."""
        return self._mono(pts) @ self.coefficients.T

    def gradient(self, pts) -> np.ndarray:
        """``(3, n_points, n_nodes)`` partial derivatives."""
        return np.stack([self._mono(pts, d) @ self.coefficients.T for d in range(3)])

    def face_local(self) -> np.ndarray:
        """Local indices of the nodes on each face, shape ``(6, m)``."""
        out = []
        for axis, side in _FACES:
            out.append(np.nonzero(np.isclose(self.nodes[:, axis], side))[0])
        return np.array(out)


def voxel_basis(order) -> VoxelBasis:
    p = _voxel_order(order)
    nodes = [c.astype(float) for c in _CORNERS]
    if p == 3:
        for start, axis in _EDGES:
            for frac in (1 / 3, 2 / 3):
                pt = _CORNERS[start].astype(float)
                pt[axis] = frac
                nodes.append(pt)
    nodes = np.array(nodes)
    exps = _monomials(p)
    vander = np.stack([np.prod(nodes ** e, axis=1) for e in exps], axis=1)
    try:
        coef = np.linalg.solve(vander, np.eye(len(nodes))).T
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise RuntimeError("singular voxel interpolation system") from exc
    return VoxelBasis("linear" if p == 1 else "cubic", nodes, exps, coef)


@dataclass(frozen=True)
class MetricTensor3:
    spacing: tuple

    @property
    def diagonal(self) -> np.ndarray:
        return np.asarray(self.spacing, dtype=float) ** 2

    @property
    def det(self) -> float:
        return float(np.prod(self.diagonal))


@dataclass(frozen=True)
class VoxelTemplates:
    K: np.ndarray
    B: np.ndarray


def gauss_legendre_cube(n: int = 4):
    """Tensor Gauss-Legendre rule on ``[0, 1]^3``: points ``(n**3, 3)`` and weights."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1), 0.5 * w
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    W = w[:, None, None] * w[None, :, None] * w[None, None, :]
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1), W.ravel()


def voxel_templates(basis: VoxelBasis, spacing=(1.0, 1.0, 1.0)) -> VoxelTemplates:
    s = np.asarray(spacing, dtype=float)
    if s.shape != (3,) or np.any(s <= 0):
        raise ValueError("spacing must be three positive numbers")
    pts, w = gauss_legendre_cube(4)
    H = basis(pts)
    dH = basis.gradient(pts)
    vol = float(np.prod(s))
    B = vol * (H.T * w) @ H
    K = sum(vol / s[i] ** 2 * (dH[i].T * w) @ dH[i] for i in range(3))
    return VoxelTemplates(0.5 * (K + K.T), 0.5 * (B + B.T))


@dataclass(frozen=True)
class VoxelNodeMap:
    """Global ids of every local node of every active voxel.

    Corner nodes come first, ordered by lattice index (x fastest); edge
    nodes follow, ordered by (axis, lower lattice point, fraction).
    """

    order: str
    element_nodes: np.ndarray
    face_local: np.ndarray
    n_nodes: int
    n_vertex_nodes: int

    def __len__(self):
        return self.n_nodes


def voxel_node_map(grid: VoxelGrid, order) -> VoxelNodeMap:
    p = _voxel_order(order)
    ijk = grid.active_indices()
    if len(ijk) == 0:
        raise AssemblyError("grid has no active voxels")
    nx, ny, nz = grid.dims
    lx, ly = nx + 1, ny + 1

    def lattice(pts):
        return pts[..., 0] + lx * (pts[..., 1] + ly * pts[..., 2])

    corners = lattice(ijk[:, None, :] + _CORNERS[None])
    vkeys, vinv = np.unique(corners.ravel(), return_inverse=True)
    element = [vinv.reshape(corners.shape)]
    n = len(vkeys)
    basis = voxel_basis(p)
    if p == 3:
        starts = np.array([s for s, _ in _EDGES])
        axes = np.array([a for _, a in _EDGES])
        lower = lattice(ijk[:, None, :] + _CORNERS[starts][None])
        # key orders by axis, then lower endpoint, then fraction slot
        ekey = (axes[None, :] * lattice(np.array(grid.dims) + 1) + lower) * 2
        ekey = np.stack([ekey, ekey + 1], axis=2).reshape(len(ijk), 24)
        ekeys, einv = np.unique(ekey.ravel(), return_inverse=True)
        element.append(n + einv.reshape(ekey.shape))
        n += len(ekeys)
    element_nodes = np.concatenate(element, axis=1)
    return VoxelNodeMap(basis.order, element_nodes, basis.face_local(), n, len(vkeys))


_VOXEL_CACHE: dict = {}


def _cached_basis(p: int) -> VoxelBasis:
    if p not in _VOXEL_CACHE:
        _VOXEL_CACHE[p] = voxel_basis(p)
    return _VOXEL_CACHE[p]


def assemble_voxel(grid: VoxelGrid, order="linear", bc: str = "dirichlet") -> FemSystem:
    bc = bc.lower()
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"voxel boundary condition must be dirichlet or neumann, got {bc!r}")
    p = _voxel_order(order)
    nodes = voxel_node_map(grid, p)
    tmpl = voxel_templates(_cached_basis(p), grid.spacing)
    en = nodes.element_nodes
    m = en.shape[1]
    nv = len(en)
    rows = np.repeat(en, m, axis=1).ravel()
    cols = np.tile(en, (1, m)).ravel()
    kvals = np.broadcast_to(tmpl.K.ravel(), (nv, m * m)).ravel()
    bvals = np.broadcast_to(tmpl.B.ravel(), (nv, m * m)).ravel()
    K, B = _compact(rows, cols, kvals, bvals, nodes.n_nodes)
    boundary = voxel_boundary_nodes(grid, nodes) if bc == "dirichlet" else BoundarySet(frozenset())
    return reduce_system(K, B, boundary, nodes.n_nodes, bc)
