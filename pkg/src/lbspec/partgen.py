"""Synthetic parts and noise models for run-length experiments.

Every generator is a pure function of its arguments and an integer seed (or
``numpy.random.Generator``), so repeated calls reproduce identical parts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import TriangleMesh, VoxelGrid, exposed_faces

NOMINAL_RADIUS = 10.0
NOMINAL_HEIGHT = 50.0
NOISE_SD = 0.05

# cylinder layout: 44 points per ring, 41 side rings, 5 interior cap rings
# (100 points) + centre per cap -> 2006 vertices before deletion
CYL_SEGMENTS = 44
CYL_SIDE_RINGS = 41
CYL_CAP_RINGS = 6
CYL_SIZE_RANGE = (1995, 2005)


class GenerationError(ValueError):
    pass


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class NoiseModel:
    """Coordinate or voxel noise.

    kind is ``"none"``, ``"isotropic"`` (``sigma``), ``"correlated"``
    (``sigma1, sigma2, r``) or ``"voxel-flip"`` (``max_noise``).
    """

    kind: str = "isotropic"
    sigma: float = NOISE_SD
    sigma1: float = 0.0
    sigma2: float = NOISE_SD
    r: tuple = (2.6, 2.6, 16.7)
    max_noise: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "isotropic", "correlated", "voxel-flip"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if min(self.sigma, self.sigma1, self.sigma2) < 0:
            raise ValueError("noise standard deviations must be nonnegative")
        if self.kind == "voxel-flip" and self.max_noise < 1:
            raise ValueError("max_noise must be >= 1")

    def apply(self, points: np.ndarray, rng) -> np.ndarray:
        rng = _rng(rng)
        if self.kind == "none" or (self.kind == "isotropic" and self.sigma == 0):
            return np.array(points, dtype=float)
        if self.kind == "isotropic":
            return points + rng.normal(0.0, self.sigma, size=points.shape)
        if self.kind == "correlated":
            return apply_correlated_noise(points, self.sigma1, self.sigma2, *self.r, seed=rng)
        raise ValueError("voxel-flip noise applies to voxel grids only")


NO_NOISE = NoiseModel("none")


# --- spheres ----------------------------------------------------------------


def icosahedron() -> TriangleMesh:
    phi = (1 + 5 ** 0.5) / 2
    v = np.array(
        [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    return TriangleMesh(v / np.linalg.norm(v, axis=1, keepdims=True), f)


def subdivide(vertices: np.ndarray, triangles: np.ndarray):
    """One 1-to-4 midpoint subdivision, new points projected to the unit sphere."""
    t = triangles
    sides = np.sort(np.stack([t[:, [0, 1, 2]], t[:, [1, 2, 0]]], axis=2).reshape(-1, 2), axis=1)
    edges, inv = np.unique(sides, axis=0, return_inverse=True)
    mid = vertices[edges].mean(axis=1)
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    m = inv.reshape(-1, 3) + len(vertices)
    a, b, c = t.T
    ab, bc, ca = m.T
    new_t = np.concatenate(
        [np.stack(x, axis=1) for x in ((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca))]
    )
    return np.vstack([vertices, mid]), new_t


def icosphere_level(n_target: int) -> int:
    """Subdivision level whose vertex count ``10 * 4**l + 2`` is closest to ``n_target``."""
    if n_target < 12:
        raise ValueError("n_target must be >= 12")
    level = 0
    while abs(10 * 4 ** (level + 1) + 2 - n_target) < abs(10 * 4 ** level + 2 - n_target):
        level += 1
    return level


def icosphere(level: int) -> TriangleMesh:
    ico = icosahedron()
    v, t = np.array(ico.vertices), np.array(ico.triangles)
    for _ in range(level):
        v, t = subdivide(v, t)
    return TriangleMesh(v, t)


def gen_sphere_mesh(n_target: int = 2562, noise: NoiseModel = NO_NOISE, seed=0) -> TriangleMesh:
    mesh = icosphere(icosphere_level(n_target))
    if noise.kind == "none":
        return mesh
    return TriangleMesh(noise.apply(np.array(mesh.vertices), _rng(seed)), mesh.triangles)


# --- cylinders --------------------------------------------------------------


def _zip_rings(a: np.ndarray, b: np.ndarray, ang_a: np.ndarray, ang_b: np.ndarray):
    """Triangulate the band between two closed rings by merging their angles."""
    na, nb = len(a), len(b)
    i = j = 0
    tris = []
    while i < na or j < nb:
        ta = ang_a[(i + 1) % na] + (2 * np.pi if i + 1 >= na else 0)
        tb = ang_b[(j + 1) % nb] + (2 * np.pi if j + 1 >= nb else 0)
        if j >= nb or (i < na and ta <= tb):
            tris.append((a[i % na], a[(i + 1) % na], b[j % nb]))
            i += 1
        else:
            tris.append((a[i % na], b[(j + 1) % nb], b[j % nb]))
            j += 1
    return tris


def cylinder_mesh(
    radius_fn: Callable[[np.ndarray], np.ndarray] = None,
    radius: float = NOMINAL_RADIUS,
    height: float = NOMINAL_HEIGHT,
    segments: int = CYL_SEGMENTS,
    side_rings: int = CYL_SIDE_RINGS,
    cap_rings: int = CYL_CAP_RINGS,
):
    """Closed cylinder triangulation.

    Returns ``(vertices, triangles, labels)`` with labels 0 = side (including
    the rim rings), 1 = bottom cap interior, 2 = top cap interior. The side
    radius at height ``h`` is ``radius_fn(h)`` if given.
    """
    zs = np.linspace(0.0, height, side_rings)
    verts, labels, rings, ring_ang = [], [], [], []
    for r_i, z in enumerate(zs):
        ang = 2 * np.pi * (np.arange(segments) + 0.5 * (r_i % 2)) / segments
        rr = radius if radius_fn is None else float(radius_fn(np.array([z]))[0])
        start = len(verts)
        verts.extend(np.stack([rr * np.cos(ang), rr * np.sin(ang), np.full(segments, z)], axis=1))
        labels.extend([0] * segments)
        rings.append(np.arange(start, start + segments))
        ring_ang.append(ang)
    tris = []
    for r_i in range(side_rings - 1):
        tris += _zip_rings(rings[r_i], rings[r_i + 1], ring_ang[r_i], ring_ang[r_i + 1])

    # interior cap ring counts proportional to radius, 100 points per cap
    ks = np.arange(1, cap_rings)
    counts = np.maximum(np.round(ks * 100 / ks.sum()).astype(int), 3)
    counts[-1] += 100 - counts.sum()
    for cap, (z, rim, rim_ang, lab) in enumerate(
        [(0.0, rings[0], ring_ang[0], 1), (height, rings[-1], ring_ang[-1], 2)]
    ):
        prev, prev_ang = rim, rim_ang
        for k, cnt in zip(ks[::-1], counts[::-1]):
            rr = radius * k / cap_rings
            ang = 2 * np.pi * (np.arange(cnt) + 0.5 * (k % 2)) / cnt
            start = len(verts)
            verts.extend(np.stack([rr * np.cos(ang), rr * np.sin(ang), np.full(cnt, z)], axis=1))
            labels.extend([lab] * cnt)
            ring = np.arange(start, start + cnt)
            band = _zip_rings(prev, ring, prev_ang, ang)
            tris += band
            prev, prev_ang = ring, ang
        centre = len(verts)
        verts.append(np.array([0.0, 0.0, z]))
        labels.append(lab)
        n = len(prev)
        tris += [(prev[i], prev[(i + 1) % n], centre) for i in range(n)]
    t = np.array(tris, dtype=np.int64)
    v = np.array(verts)
    # orient bottom-cap faces downward, everything else outward
    t = _orient_outward(v, t)
    return v, t, np.array(labels)


def _orient_outward(v, t):
    p = v[t]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    c = p.mean(axis=1) - v.mean(axis=0)
    flip = np.einsum("ij,ij->i", n, c) < 0
    t = t.copy()
    t[flip] = t[flip][:, [0, 2, 1]]
    return t


def _one_ring(triangles: np.ndarray, v: int) -> Optional[list]:
    """Ordered link cycle of an interior vertex, or None if it is not a simple cycle."""
    star = triangles[(triangles == v).any(axis=1)]
    nxt = {}
    for tri in star:
        k = int(np.nonzero(tri == v)[0][0])
        a, b = int(tri[(k + 1) % 3]), int(tri[(k + 2) % 3])
        if a in nxt:
            return None
        nxt[a] = b
    start = next(iter(nxt))
    cycle, cur = [start], nxt[start]
    while cur != start:
        if cur not in nxt or len(cycle) > len(nxt):
            return None
        cycle.append(cur)
        cur = nxt[cur]
    return cycle if len(cycle) == len(nxt) else None


def _min_angle(p: np.ndarray) -> np.ndarray:
    """Smallest interior angle of each triangle in ``p`` of shape ``(F, 3, 3)``."""
    out = np.full(len(p), np.pi)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out = np.minimum(out, np.arccos(np.clip(cos, -1, 1)))
    return out


def delete_vertices(vertices, triangles, candidates, n_delete: int, rng):
    """Remove ``n_delete`` random vertices, re-triangulating each one-ring as a fan.

    The fan apex is the link vertex giving the best worst-case angle. Removed
    vertices are chosen from ``candidates`` and never adjacent to each other.
    """
    rng = _rng(rng)
    t = np.array(triangles)
    removed = []
    blocked = set()
    for v in rng.permutation(np.asarray(candidates)):
        if len(removed) == n_delete:
            break
        v = int(v)
        if v in blocked:
            continue
        ring = _one_ring(t, v)
        if ring is None or len(ring) < 3:
            continue
        n = len(ring)
        best, best_q = None, -1.0
        for s in range(n):
            r = ring[s:] + ring[:s]
            fan = np.array([[r[0], r[i], r[i + 1]] for i in range(1, n - 1)])
            q = _min_angle(vertices[fan]).min()
            if q > best_q:
                best, best_q = fan, q
        t = np.vstack([t[~(t == v).any(axis=1)], best])
        removed.append(v)
        blocked.update(ring)
        blocked.add(v)
    if len(removed) < n_delete:
        raise GenerationError(f"could only delete {len(removed)} of {n_delete} vertices")
    keep = np.ones(len(vertices), dtype=bool)
    keep[removed] = False
    remap = np.cumsum(keep) - 1
    return vertices[keep], remap[t]


def barrel_radius(delta: float, radius=NOMINAL_RADIUS, height=NOMINAL_HEIGHT, sd=NOISE_SD):
    return lambda h: radius + sd * delta * np.sin(np.asarray(h) * np.pi / height)


def gen_barrel_cylinder(
    delta: float = 0.0,
    size_range=CYL_SIZE_RANGE,
    noise: NoiseModel = NoiseModel("isotropic"),
    seed=0,
    open_bottom: bool = False,
) -> TriangleMesh:
    """Closed cylinder (radius 10, height 50) with a first-harmonic barrel defect.

    Side radius at height ``h`` is ``10 + 0.05 * delta * sin(h * pi / 50)``.
    Random vertices are deleted so the final count is uniform on
    ``size_range``; coordinate noise is added last. With ``open_bottom`` the
    bottom cap is removed afterwards, leaving one boundary loop.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    lo, hi = size_range
    if lo > hi:
        raise ValueError("empty size range")
    rng = _rng(seed)
    v, t, labels = cylinder_mesh(barrel_radius(delta))
    if hi > len(v):
        raise GenerationError(f"size range exceeds the {len(v)} generated vertices")
    target = int(rng.integers(lo, hi + 1))
    # rim rings and cap centres are kept to preserve the crease geometry
    side = np.nonzero(labels == 0)[0]
    rim = set(side[:CYL_SEGMENTS]) | set(side[-CYL_SEGMENTS:])
    centres = {int(np.nonzero(labels == 1)[0][-1]), int(np.nonzero(labels == 2)[0][-1])}
    candidates = [i for i in range(len(v)) if i not in rim and i not in centres]
    if target < len(v):
        v, t = delete_vertices(v, t, candidates, len(v) - target, rng)
    v = noise.apply(v, rng)
    mesh = TriangleMesh(v, t)
    if open_bottom:
        mesh = gen_open_variant(mesh, lambda c: c[:, 2] < 0.2)
    return mesh


# --- correlated noise -------------------------------------------------------


def correlated_covariance(x: np.ndarray, sigma1: float, sigma2: float, r: float) -> np.ndarray:
    d = np.abs(x[:, None] - x[None, :])
    C = sigma1 ** 2 * np.exp(-d / r)
    C[np.diag_indices_from(C)] = sigma1 ** 2 + sigma2 ** 2
    return C


def apply_correlated_noise(points, sigma1, sigma2, r_x, r_y, r_z, seed=0, max_points=5000):
    """Add spatially correlated noise, independent across axes.

    Along axis ``k`` the noise covariance between points ``i != j`` is
    ``sigma1**2 * exp(-|p_ik - p_jk| / r_k)`` and ``sigma1**2 + sigma2**2`` on
    the diagonal.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n > max_points:
        raise ValueError(f"correlated noise limited to {max_points} points, got {n}")
    rng = _rng(seed)
    out = points.copy()
    for k, r in enumerate((r_x, r_y, r_z)):
        C = correlated_covariance(points[:, k], sigma1, sigma2, r)
        L = None
        scale = max(float(C[0, 0]), 1e-300)
        for jitter in (0.0, 1e-14, 1e-12, 1e-10):
            try:
                L = la.cholesky(C + jitter * scale * np.eye(n), lower=True)
                break
            except la.LinAlgError:
                continue
        if L is None:
            raise GenerationError(f"noise covariance along axis {k} is not factorizable")
        out[:, k] += L @ rng.standard_normal(n)
    return out


# --- open meshes ------------------------------------------------------------


def gen_open_variant(mesh: TriangleMesh, hole: Callable[[np.ndarray], np.ndarray]) -> TriangleMesh:
    """Delete triangles whose centroids satisfy ``hole`` (vectorised predicate)."""
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    drop = np.asarray(hole(centroids), dtype=bool)
    if not drop.any():
        raise GenerationError("hole spec removed no triangles")
    t = mesh.triangles[~drop]
    if len(t) == 0:
        raise GenerationError("hole spec removed every triangle")
    used = np.unique(t)
    remap = np.full(mesh.n_vertices, -1)
    remap[used] = np.arange(len(used))
    t = remap[t]
    n = len(used)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]]])
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    if connected_components(g, directed=False)[0] != 1:
        raise GenerationError("hole spec disconnects the mesh")
    return TriangleMesh(mesh.vertices[used], t)


def polar_cap(max_angle_deg: float):
    """Predicate selecting points within ``max_angle_deg`` of the +z axis."""
    c = np.cos(np.radians(max_angle_deg))
    return lambda p: p[:, 2] / np.linalg.norm(p, axis=1) > c


# --- voxel parts ------------------------------------------------------------

VOXEL_DIMS = (20, 20, 10)
HOLE_RY = 8.0


def hole_eccentricity(rx: float, ry: float = HOLE_RY) -> float:
    a, b = max(rx, ry), min(rx, ry)
    return float(np.sqrt(1.0 - (b / a) ** 2))


def voxel_hole_part(rx: float, ry: float = HOLE_RY, dims=VOXEL_DIMS) -> np.ndarray:
    """Occupancy of a block with an elliptical through-hole along z."""
    nx, ny, nz = dims
    if not 0 < rx < nx / 2 or not 0 < ry < ny / 2:
        raise GenerationError(f"hole semi-axes ({rx}, {ry}) exceed the {nx}x{ny} block")
    x = (np.arange(nx) + 0.5 - nx / 2) / rx
    y = (np.arange(ny) + 0.5 - ny / 2) / ry
    inside = x[:, None] ** 2 + y[None, :] ** 2 < 1.0
    return np.repeat(~inside[:, :, None], nz, axis=2)


def flip_boundary_voxels(occ: np.ndarray, max_noise: int, rng) -> np.ndarray:
    """Deactivate ``U{1..max_noise}`` active and activate ``U{1..max_noise}`` inactive boundary voxels.

    Both candidate sets come from the noise-free occupancy: active voxels
    with an exposed face, and inactive voxels face-adjacent to an active one.
    """
    rng = _rng(rng)
    occ = np.array(occ, dtype=bool)
    grid = VoxelGrid(occ.shape, (1, 1, 1), occ)
    active = grid.active_indices()
    surf = active[exposed_faces(grid).any(axis=1)]
    padded = np.pad(occ, 1)
    near = np.zeros_like(occ)
    for axis in range(3):
        for step in (-1, 1):
            near |= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    holes = np.argwhere(~occ & near)
    out = occ.copy()
    m1 = min(int(rng.integers(1, max_noise + 1)), len(surf))
    m2 = min(int(rng.integers(1, max_noise + 1)), len(holes))
    off = surf[rng.choice(len(surf), m1, replace=False)]
    out[tuple(off.T)] = False
    if m2:
        on = holes[rng.choice(len(holes), m2, replace=False)]
        out[tuple(on.T)] = True
    return out


def gen_voxel_part(rx: float = 8.0, max_noise: Optional[int] = None, seed=0,
                   ry: float = HOLE_RY, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
    """20x20x10 block with an elliptical hole (semi-axes ``rx``, ``ry`` voxels).

    ``max_noise=None`` disables the boundary-flip noise.
    """
    if not 0 < rx < 10:
        raise GenerationError("rx must lie in (0, 10)")
    occ = voxel_hole_part(rx, ry)
    if max_noise:
        occ = flip_boundary_voxels(occ, max_noise, _rng(seed))
    if not occ.any():
        raise GenerationError("part has no active voxels")
    return VoxelGrid(occ.shape, spacing, occ)
