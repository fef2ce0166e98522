"""Lagrange triangle elements and stiffness/mass assembly on surface meshes.

Each triangle is mapped from the reference triangle by
``p(u, v) = P1 + u (P3 - P1) + v (P2 - P1)`` so that ``P1 = p(0, 0)``,
``P2 = p(0, 1)`` and ``P3 = p(1, 0)``. Only the metric tensor changes from
triangle to triangle; the shape-function integrals are computed once.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .geometry import BoundarySet, TriangleMesh, ValidationError, mesh_boundary_edges

ORDERS = {"linear": 1, "quadratic": 2, "cubic": 3}
BOUNDARY_CONDITIONS = ("dirichlet", "neumann", "closed")

# local vertex pairs carrying edge nodes, in local node order
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))
_REF_VERTICES = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])


class AssemblyError(ValueError):
    pass


def _order(order) -> int:
    if isinstance(order, str):
        try:
            return ORDERS[order.lower()]
        except KeyError:
            raise ValueError(f"unknown basis order {order!r}") from None
    if order not in (1, 2, 3):
        raise ValueError(f"unknown basis order {order!r}")
    return int(order)


def _order_name(p: int) -> str:
    return {1: "linear", 2: "quadratic", 3: "cubic"}[p]


@dataclass(frozen=True)
class ElementBasis:
    """Nodal basis on the reference triangle.

    ``coefficients[l, a]`` multiplies ``u**exponents[a, 0] * v**exponents[a, 1]``
    in shape function ``h_l``.
    """

    order: str
    nodes: np.ndarray
    exponents: np.ndarray
    coefficients: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def __call__(self, u, v) -> np.ndarray:
        """Evaluate all shape functions; returns shape ``(n_nodes, *u.shape)``."""
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        mono = np.stack([u ** a * v ** b for a, b in self.exponents])
        return np.tensordot(self.coefficients, mono, axes=1)

    def gradient(self, u, v) -> np.ndarray:
        """``(2, n_nodes, ...)`` array of ``d/du`` and ``d/dv`` of every shape function."""
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        du = np.stack([a * u ** max(a - 1, 0) * v ** b for a, b in self.exponents])
        dv = np.stack([b * u ** a * v ** max(b - 1, 0) for a, b in self.exponents])
        return np.stack(
            [np.tensordot(self.coefficients, du, axes=1), np.tensordot(self.coefficients, dv, axes=1)]
        )


def reference_nodes(order) -> np.ndarray:
    """Nodal points: vertices, then per local edge its interior points, then the centroid."""
    p = _order(order)
    pts = list(_REF_VERTICES)
    for a, b in _LOCAL_EDGES:
        for s in range(1, p):
            t = s / p
            pts.append(_REF_VERTICES[a] + t * (_REF_VERTICES[b] - _REF_VERTICES[a]))
    if p == 3:
        pts.append(_REF_VERTICES.mean(axis=0))
    return np.array(pts)


def reference_basis(order) -> ElementBasis:
    p = _order(order)
    exps = np.array([(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)])
    nodes = reference_nodes(p)
    vander = np.stack([nodes[:, 0] ** a * nodes[:, 1] ** b for a, b in exps], axis=1)
    try:
        coef = np.linalg.solve(vander, np.eye(len(nodes))).T
    except np.linalg.LinAlgError as exc:  # pragma: no cover - layouts are unisolvent
        raise RuntimeError(f"singular interpolation system for order {p}") from exc
    coef[np.abs(coef) < 1e-13] = 0.0
    return ElementBasis(_order_name(p), nodes, exps, coef)


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of ``u**a v**b`` over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@dataclass(frozen=True)
class ElementTemplates:
    """Reference-triangle integrals.

    ``G[i, j, l, m]`` is the integral of ``d_i h_l * d_j h_m`` (``i, j`` over
    ``u, v``) and ``M[l, m]`` the integral of ``h_l * h_m``.
    """

    G: np.ndarray
    M: np.ndarray

    def stiffness(self, ginv: np.ndarray) -> np.ndarray:
        """``sum_ij ginv[..., i, j] * G[i, j]`` for one or many inverse metrics."""
        return np.einsum("...ij,ijlm->...lm", ginv, self.G)


def _derivative(exps, coef, axis):
    """Differentiate polynomials given as coefficient rows over ``exps``."""
    index = {tuple(e): k for k, e in enumerate(exps)}
    out = np.zeros_like(coef)
    for k, e in enumerate(exps):
        if e[axis] == 0:
            continue
        lower = list(e)
        lower[axis] -= 1
        out[:, index[tuple(lower)]] += e[axis] * coef[:, k]
    return out


def reference_integrals(basis: ElementBasis) -> ElementTemplates:
    exps = basis.exponents
    s = exps[:, None, :] + exps[None, :, :]
    gram = np.vectorize(monomial_integral)(s[..., 0], s[..., 1])
    C = basis.coefficients
    D = [_derivative(exps, C, 0), _derivative(exps, C, 1)]
    M = C @ gram @ C.T
    G = np.empty((2, 2, basis.n_nodes, basis.n_nodes))
    for i in range(2):
        for j in range(2):
            G[i, j] = D[i] @ gram @ D[j].T
    M = 0.5 * (M + M.T)
    G[0, 0] = 0.5 * (G[0, 0] + G[0, 0].T)
    G[1, 1] = 0.5 * (G[1, 1] + G[1, 1].T)
    G[1, 0] = G[0, 1].T
    return ElementTemplates(G, M)


@dataclass(frozen=True)
class MetricTensor2:
    g11: float
    g12: float
    g22: float

    @property
    def det(self) -> float:
        return self.g11 * self.g22 - self.g12 ** 2

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.g11, self.g12], [self.g12, self.g22]])

    @property
    def inverse(self) -> np.ndarray:
        d = self.det
        return np.array([[self.g22, -self.g12], [-self.g12, self.g11]]) / d


def triangle_metric(P1, P2, P3) -> MetricTensor2:
    P1, P2, P3 = (np.asarray(P, dtype=float) for P in (P1, P2, P3))
    eu, ev = P3 - P1, P2 - P1
    g = MetricTensor2(float(eu @ eu), float(eu @ ev), float(ev @ ev))
    scale = max(g.g11, g.g22)
    if scale == 0.0 or g.det <= 1e-24 * scale ** 2:
        raise ValidationError("degenerate triangle")
    return g


def _metrics(vertices: np.ndarray, triangles: np.ndarray):
    """Vectorised metric: ``(F, 2, 2)`` inverse metrics and ``sqrt(det g)``."""
    p = vertices[triangles]
    eu, ev = p[:, 2] - p[:, 0], p[:, 1] - p[:, 0]
    g11 = np.einsum("ij,ij->i", eu, eu)
    g12 = np.einsum("ij,ij->i", eu, ev)
    g22 = np.einsum("ij,ij->i", ev, ev)
    det = g11 * g22 - g12 ** 2
    bad = np.nonzero(det <= 0.0)[0]
    if bad.size:
        raise ValidationError(f"degenerate triangle {bad[0]}", int(bad[0]))
    ginv = np.empty((len(triangles), 2, 2))
    ginv[:, 0, 0] = g22 / det
    ginv[:, 1, 1] = g11 / det
    ginv[:, 0, 1] = ginv[:, 1, 0] = -g12 / det
    return ginv, np.sqrt(det)


@dataclass(frozen=True)
class SurfaceNodeMap:
    """Global numbering of element nodes.

    ``element_nodes[f, l]`` is the global id of local node ``l`` of triangle
    ``f``. ``vertex_ids[v]`` is the global id of mesh vertex ``v`` (-1 if the
    vertex is unused).
    """

    order: str
    element_nodes: np.ndarray
    vertex_ids: np.ndarray
    n_nodes: int
    n_edges: int

    def __len__(self):
        return self.n_nodes


def global_node_map(mesh: TriangleMesh, order) -> SurfaceNodeMap:
    p = _order(order)
    t = mesh.triangles
    used = np.unique(t)
    vertex_ids = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vertex_ids[used] = np.arange(len(used))
    nv = len(used)
    cols = [vertex_ids[t]]

    a = t[:, [e[0] for e in _LOCAL_EDGES]]
    b = t[:, [e[1] for e in _LOCAL_EDGES]]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    base = int(t.max()) + 1
    keys, inv = np.unique(lo.ravel().astype(np.int64) * base + hi.ravel(), return_inverse=True)
    edge_id = inv.reshape(t.shape[0], 3)
    n_edges = len(keys)
    n = nv
    if p >= 2:
        flipped = a > b
        for s in range(1, p):
            # the local point at s/p from a sits at (p-s)/p from the smaller vertex when a > b
            slot = np.where(flipped, p - 1 - s, s - 1)
            gid = nv + (p - 1) * edge_id + slot
            cols.append(gid)
        # reorder so each edge's points are contiguous: (e0 s1, e0 s2, e1 s1, ...)
        edge_cols = np.stack(cols[1:], axis=2).reshape(t.shape[0], 3 * (p - 1))
        cols = [cols[0], edge_cols]
        n += (p - 1) * n_edges
    if p == 3:
        cols.append((n + np.arange(t.shape[0]))[:, None])
        n += t.shape[0]
    element_nodes = np.concatenate(cols, axis=1)
    return SurfaceNodeMap(_order_name(p), element_nodes, vertex_ids, n, n_edges)


def surface_boundary_nodes(mesh: TriangleMesh, nodes: SurfaceNodeMap) -> BoundarySet:
    """Vertices and edge nodes lying on boundary edges."""
    be = mesh_boundary_edges(mesh)
    if len(be) == 0:
        return BoundarySet(frozenset())
    t = mesh.triangles
    p = ORDERS[nodes.order]
    key = set(map(tuple, be.tolist()))
    ids = set()
    for f, tri in enumerate(t):
        for e, (la, lb) in enumerate(_LOCAL_EDGES):
            a, b = tri[la], tri[lb]
            if (min(a, b), max(a, b)) in key:
                ids.add(int(nodes.element_nodes[f, la]))
                ids.add(int(nodes.element_nodes[f, lb]))
                for s in range(p - 1):
                    ids.add(int(nodes.element_nodes[f, 3 + e * (p - 1) + s]))
    return BoundarySet(frozenset(ids))


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Stiffness ``K`` and mass ``B`` with node bookkeeping.

    ``free`` holds the global node ids kept after boundary reduction, in
    matrix row order; ``n_total`` is the node count before reduction.
    """

    K: sp.csr_matrix
    B: sp.csr_matrix
    boundary: BoundarySet
    free: np.ndarray
    n_total: int
    bc: str

    @property
    def N(self) -> int:
        return self.K.shape[0]

    def expand(self, vectors: np.ndarray) -> np.ndarray:
        """Scatter reduced eigenvectors back to all nodes, zero on deleted nodes."""
        out = np.zeros((self.n_total,) + vectors.shape[1:])
        out[self.free] = vectors
        return out


def _compact(rows, cols, kvals, bvals, n):
    # identical index arrays guarantee identical sparsity for K and B
    return _symmetric_csr(rows, cols, kvals, n), _symmetric_csr(rows, cols, bvals, n)


def _symmetric_csr(rows, cols, vals, n):
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    At = A.T.tocsr()
    At.sort_indices()
    # the pattern is symmetric, so both share indptr/indices; a + b == b + a
    # exactly, and working on the data keeps explicit zeros in the pattern
    A.data = 0.5 * (A.data + At.data)
    return A


def reduce_system(K, B, boundary: BoundarySet, n_total: int, bc: str) -> FemSystem:
    if bc == "dirichlet":
        mask = boundary.mask(n_total)
        free = np.nonzero(~mask)[0]
        if len(free) == 0:
            raise AssemblyError("no interior degrees of freedom")
        K = K[free][:, free].tocsr()
        B = B[free][:, free].tocsr()
    else:
        free = np.arange(n_total)
    return FemSystem(K, B, boundary, free, n_total, bc)


_TEMPLATE_CACHE: dict = {}


def _templates(p: int):
    if p not in _TEMPLATE_CACHE:
        basis = reference_basis(p)
        _TEMPLATE_CACHE[p] = (basis, reference_integrals(basis))
    return _TEMPLATE_CACHE[p]


def assemble_surface(mesh: TriangleMesh, order="linear", bc: str = "neumann") -> FemSystem:
    """Assemble ``K`` (positive semidefinite stiffness) and ``B`` (mass) on a mesh.

    ``bc`` is ``"dirichlet"`` (boundary nodes deleted), ``"neumann"`` (boundary
    nodes kept as ordinary nodes) or ``"closed"`` (mesh must have no boundary).
    """
    bc = bc.lower()
    if bc not in BOUNDARY_CONDITIONS:
        raise ValueError(f"unknown boundary condition {bc!r}")
    p = _order(order)
    nb = len(mesh_boundary_edges(mesh))
    if bc == "closed" and nb:
        raise AssemblyError(f"mesh has {nb} boundary edges")
    _, tmpl = _templates(p)
    nodes = global_node_map(mesh, p)
    ginv, sq = _metrics(mesh.vertices, mesh.triangles)
    k_loc = sq[:, None, None] * tmpl.stiffness(ginv)
    b_loc = sq[:, None, None] * tmpl.M[None]
    en = nodes.element_nodes
    m = en.shape[1]
    rows = np.repeat(en, m, axis=1).ravel()
    cols = np.tile(en, (1, m)).ravel()
    K, B = _compact(rows, cols, k_loc.ravel(), b_loc.ravel(), nodes.n_nodes)
    boundary = surface_boundary_nodes(mesh, nodes) if nb else BoundarySet(frozenset())
    return reduce_system(K, B, boundary, nodes.n_nodes, bc)
