"""Geometry types, file readers/writers and boundary detection.

Two kinds of parts are supported: triangulated surfaces (``TriangleMesh``,
read from ASCII OFF) and occupancy grids (``VoxelGrid``, read from the
VOXGRID v1 text format).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]

DEGENERACY_RTOL = 1e-12


class GeometryError(ValueError):
    """Base class for parse and validation failures."""


class ParseError(GeometryError):
    pass


class ValidationError(GeometryError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangulated surface, possibly with boundary.

    Parameters
    ----------
    vertices : (V, 3) array_like
        Vertex coordinates.
    triangles : (F, 3) array_like of int
        Vertex indices of every triangle.

    The constructor validates index ranges, repeated vertices, degenerate
    triangles and non-manifold edges, raising ``ValidationError`` with the
    offending triangle index.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(t))
        self._validate()

    def _validate(self):
        v, t = self.vertices, self.triangles
        if len(t) == 0:
            raise ValidationError("mesh has no triangles")
        bad = np.nonzero((t < 0).any(axis=1) | (t >= len(v)).any(axis=1))[0]
        if bad.size:
            raise ValidationError(f"invalid vertex index in triangle {bad[0]}", int(bad[0]))
        rep = np.nonzero(
            (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        )[0]
        if rep.size:
            raise ValidationError(f"repeated vertex in triangle {rep[0]}", int(rep[0]))
        used = v[np.unique(t)]
        diag2 = float(np.sum((used.max(axis=0) - used.min(axis=0)) ** 2))
        areas = triangle_areas(v, t)
        small = np.nonzero(areas <= DEGENERACY_RTOL * diag2)[0]
        if small.size:
            raise ValidationError(f"degenerate triangle {small[0]}", int(small[0]))
        edges, inverse, counts = _edge_incidence(t)
        over = np.nonzero(counts > 2)[0]
        if over.size:
            tri = int(np.nonzero(inverse == over[0])[0][0] // 3)
            a, b = edges[over[0]]
            raise ValidationError(
                f"non-manifold edge ({a}, {b}) in triangle {tri}", tri
            )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted ``(min, max)`` rows, lexicographic order."""
        return _edge_incidence(self.triangles)[0]

    def is_closed(self) -> bool:
        return len(mesh_boundary_edges(self)) == 0

    def area(self) -> float:
        return float(triangle_areas(self.vertices, self.triangles).sum())

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriangleMesh":
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return TriangleMesh(v, self.triangles)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Axis-aligned occupancy grid.

    ``occupancy`` is indexed ``[i, j, k]`` along x, y, z. The flat file order
    is x-fastest (Fortran order).
    """

    dims: tuple
    spacing: tuple
    occupancy: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValidationError(f"dims must be three positive integers, got {dims}")
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValidationError(f"spacing must be strictly positive, got {spacing}")
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.size != dims[0] * dims[1] * dims[2]:
            raise ValidationError(
                f"occupancy has {occ.size} cells, expected {dims[0] * dims[1] * dims[2]}"
            )
        occ = occ.reshape(dims, order="F") if occ.ndim == 1 else occ.reshape(dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "occupancy", _readonly(occ.copy()))

    @property
    def n_active(self) -> int:
        return int(self.occupancy.sum())

    def active_indices(self) -> np.ndarray:
        """``(n, 3)`` integer cell indices of active voxels, x-fastest order."""
        idx = np.nonzero(self.occupancy.ravel(order="F"))[0]
        return np.stack(np.unravel_index(idx, self.dims, order="F"), axis=1)

    def with_spacing(self, spacing) -> "VoxelGrid":
        return VoxelGrid(self.dims, spacing, self.occupancy)


@dataclass(frozen=True)
class BoundarySet:
    node_ids: frozenset

    def __len__(self):
        return len(self.node_ids)

    def __contains__(self, item):
        return item in self.node_ids

    def mask(self, n_nodes: int) -> np.ndarray:
        m = np.zeros(n_nodes, dtype=bool)
        if self.node_ids:
            m[np.fromiter(self.node_ids, dtype=np.int64)] = True
        return m


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def _edge_incidence(triangles: np.ndarray):
    """Unique sorted edges, the edge id of each triangle side, and incidence counts.

    Side ``3*f + s`` joins local vertices ``(s, (s+1) % 3)``.
    """
    t = np.asarray(triangles)
    sides = np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)
    sides = np.sort(sides, axis=1).astype(np.int64)
    # 1-D keys sort far faster than np.unique(axis=0) on row pairs
    base = int(sides.max()) + 1 if len(sides) else 1
    keys, inverse, counts = np.unique(
        sides[:, 0] * base + sides[:, 1], return_inverse=True, return_counts=True
    )
    edges = np.stack([keys // base, keys % base], axis=1)
    return edges, inverse.ravel(), counts


def mesh_boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    """Undirected edges incident to exactly one triangle, as ``(k, 2)`` sorted pairs."""
    edges, _, counts = _edge_incidence(mesh.triangles)
    return edges[counts == 1]


def boundary_loops(mesh: TriangleMesh) -> list:
    """Group boundary edges into connected components (one list of vertices each)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    be = mesh_boundary_edges(mesh)
    if len(be) == 0:
        return []
    verts, local = np.unique(be, return_inverse=True)
    local = local.reshape(-1, 2)
    n = len(verts)
    g = coo_matrix((np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(g, directed=False)
    return [verts[labels == c].tolist() for c in range(ncomp)]


def euler_characteristic(mesh: TriangleMesh) -> int:
    used = np.unique(mesh.triangles)
    return len(used) - len(mesh.edges()) + mesh.n_triangles


def exposed_faces(grid: VoxelGrid) -> np.ndarray:
    """``(n_active, 6)`` mask of faces bordering an inactive or out-of-grid cell.

    Face order is -x, +x, -y, +y, -z, +z.
    """
    padded = np.pad(grid.occupancy, 1, constant_values=False)
    ijk = grid.active_indices() + 1
    out = np.empty((len(ijk), 6), dtype=bool)
    for f, (axis, step) in enumerate([(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)]):
        nb = ijk.copy()
        nb[:, axis] += step
        out[:, f] = ~padded[nb[:, 0], nb[:, 1], nb[:, 2]]
    return out


def voxel_boundary_nodes(grid: VoxelGrid, nodes) -> BoundarySet:
    """Nodes lying on a face of an active voxel not shared with another active voxel.

    ``nodes`` is the node map built by the voxel assembler; it provides
    ``element_nodes`` (global ids per active voxel) and ``face_local``
    (local node indices on each of the six faces).
    """
    exposed = exposed_faces(grid)
    on_face = nodes.element_nodes[:, nodes.face_local]
    ids = np.unique(on_face[exposed])
    return BoundarySet(frozenset(int(i) for i in ids))


# --- file formats -----------------------------------------------------------


def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def load_triangle_mesh(path: PathLike, format: str = "OFF") -> TriangleMesh:
    if format.upper() != "OFF":
        raise ParseError(f"unsupported mesh format {format!r}")
    return parse_off(Path(path).read_text())


def parse_off(text: str) -> TriangleMesh:
    lines = list(_tokens(text))
    if not lines or not lines[0].startswith("OFF"):
        raise ParseError("missing OFF header")
    head = lines[0][3:].split()
    rest = lines[1:]
    if not head:
        if not rest:
            raise ParseError("missing vertex/face count line")
        head, rest = rest[0].split(), rest[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise ParseError(f"bad count line: {' '.join(head)!r}") from None
    if len(rest) < nv + nf:
        raise ParseError(f"expected {nv} vertices and {nf} faces, file has {len(rest)} data lines")
    try:
        verts = np.array([[float(x) for x in rest[i].split()[:3]] for i in range(nv)])
    except ValueError as exc:
        raise ParseError(f"bad vertex line: {exc}") from None
    if verts.shape != (nv, 3):
        raise ParseError("vertex lines must have three coordinates")
    faces = []
    for f in range(nf):
        parts = rest[nv + f].split()
        try:
            ints = [int(x) for x in parts]
        except ValueError:
            raise ParseError(f"bad face line {f}: {rest[nv + f]!r}") from None
        if not ints or ints[0] != 3 or len(ints) < 4:
            raise ParseError(f"face {f} is not a triangle")
        faces.append(ints[1:4])
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def format_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.edges())}"]
    out.extend(" ".join(repr(float(c)) for c in p) for p in mesh.vertices)
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    return "\n".join(out) + "\n"


def write_off(mesh: TriangleMesh, path: PathLike) -> None:
    Path(path).write_text(format_off(mesh))


def load_voxel_grid(path: PathLike) -> VoxelGrid:
    return parse_voxgrid(Path(path).read_text())


def parse_voxgrid(text: str) -> VoxelGrid:
    lines = text.splitlines()
    if len(lines) < 3 or lines[0].split() != ["VOXGRID", "1"]:
        raise ParseError("missing 'VOXGRID 1' header")
    dims_tok, sp_tok = lines[1].split(), lines[2].split()
    if len(dims_tok) != 4 or dims_tok[0] != "dims":
        raise ParseError(f"bad dims line: {lines[1]!r}")
    if len(sp_tok) != 4 or sp_tok[0] != "spacing":
        raise ParseError(f"bad spacing line: {lines[2]!r}")
    try:
        dims = tuple(int(x) for x in dims_tok[1:])
        spacing = tuple(float(x) for x in sp_tok[1:])
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    payload = "".join("".join(lines[3:]).split())
    if set(payload) - {"0", "1"}:
        raise ParseError("payload may only contain '0' and '1'")
    expected = dims[0] * dims[1] * dims[2]
    if len(payload) != expected:
        raise ParseError(
            f"dimension mismatch: header declares {expected} cells, payload has {len(payload)}"
        )
    occ = np.frombuffer(payload.encode(), dtype=np.uint8) == ord("1")
    return VoxelGrid(dims, spacing, occ)


def format_voxgrid(grid: VoxelGrid) -> str:
    flat = grid.occupancy.ravel(order="F")
    payload = np.where(flat, "1", "0")
    rows = ["".join(payload[i:i + grid.dims[0]]) for i in range(0, flat.size, grid.dims[0])]
    return "\n".join(
        [
            "VOXGRID 1",
            "dims {} {} {}".format(*grid.dims),
            "spacing {} {} {}".format(*(repr(s) for s in grid.spacing)),
            *rows,
        ]
    ) + "\n"


def write_voxgrid(grid: VoxelGrid, path: PathLike) -> None:
    Path(path).write_text(format_voxgrid(grid))
