"""Recursively refined icosahedral triangulations of the unit sphere.

The mesh carries every geometric quantity the finite-volume discretization
needs: spherical triangle areas, circumcenters, and per-edge arc lengths,
midpoints, outward tangent normals, circumcenter-to-midpoint distances and
the derived interpolation weights.  All lengths and areas are geodesic
(arc length, spherical excess), consistent with integrating over S^2.

A finished :class:`TriMesh` is immutable (arrays are marked read-only) and
safe to share across threads.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, MeshError

logger = logging.getLogger(__name__)

MAX_LEVEL = 8  # memory guard; level 8 already has ~1.3M triangles

_MAGIC = b"MNPMESH0"
_CACHE_VERSION = 1

# Golden-ratio icosahedron, faces oriented counterclockwise seen from outside.
_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_BASE_VERTICES = np.array(
    [
        [-1.0, _PHI, 0.0],
        [1.0, _PHI, 0.0],
        [-1.0, -_PHI, 0.0],
        [1.0, -_PHI, 0.0],
        [0.0, -1.0, _PHI],
        [0.0, 1.0, _PHI],
        [0.0, -1.0, -_PHI],
        [0.0, 1.0, -_PHI],
        [_PHI, 0.0, -1.0],
        [_PHI, 0.0, 1.0],
        [-_PHI, 0.0, -1.0],
        [-_PHI, 0.0, 1.0],
    ],
    dtype=float,
)
_BASE_TRIANGLES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Closed spherical triangulation with finite-volume geometry.

    Edge-local quantities are stored per triangle and per local edge slot
    ``j in {0,1,2}``; slot ``j`` is the edge traversed from vertex ``j`` to
    vertex ``(j+1) % 3`` in the triangle's counterclockwise order.

    Attributes
    ----------
    level : int
        Refinement level; the mesh has ``20 * 4**level`` triangles.
    vertices : (V, 3) float64
        Unit position vectors.
    triangles : (T, 3) int64
        Vertex index triples, counterclockwise seen from outside.
    area : (T,) float64
        Spherical (solid-angle) triangle areas, summing to ``4 pi``.
    circumcenter : (T, 3) float64
        Unit vectors equidistant (geodesically) from the three vertices,
        guaranteed to lie inside their triangle.
    neighbor : (T, 3) int64
        Index of the triangle sharing edge slot ``j``.
    edge_length : (T, 3) float64
        Geodesic edge lengths.
    edge_mid : (T, 3, 3) float64
        Projected edge midpoints (unit vectors).
    edge_normal : (T, 3, 3) float64
        Unit vectors tangent to the sphere at the edge midpoint, normal to
        the edge and pointing out of the owning triangle.
    h, h_bar : (T, 3) float64
        Geodesic distances from the edge midpoint to the owning and the
        neighboring circumcenter.
    alpha : (T, 3) float64
        Interpolation weights ``h / (h + h_bar)``; the weight seen from the
        neighbor's side of the same edge is ``1 - alpha``.
    """

    level: int
    vertices: np.ndarray
    triangles: np.ndarray
    area: np.ndarray
    circumcenter: np.ndarray
    neighbor: np.ndarray
    edge_length: np.ndarray
    edge_mid: np.ndarray
    edge_normal: np.ndarray
    h: np.ndarray
    h_bar: np.ndarray
    alpha: np.ndarray

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def edge_slot_of_neighbor(self) -> np.ndarray:
        """(T, 3) local slot at which ``neighbor[t, j]`` sees edge ``(t, j)``."""
        heads = self.triangles
        tails = np.roll(self.triangles, -1, axis=1)
        slots = np.empty(self.neighbor.shape, dtype=np.int64)
        for j in range(3):
            # the edge (head, tail) appears at the neighbor as (tail, head)
            na = heads[self.neighbor[:, j]]
            nb = tails[self.neighbor[:, j]]
            match = (na == tails[:, j][:, None]) & (nb == heads[:, j][:, None])
            slots[:, j] = np.argmax(match, axis=1)
        return slots


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _arc(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Geodesic distance between unit vectors, stable near 0 and pi."""
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.arctan2(cross, dot)


def _subdivide(vertices: np.ndarray, triangles: np.ndarray):
    """One midpoint-projection refinement step.

    New vertices are deduplicated through the sorted endpoint-index pair, so
    the construction is exact and reproducible (no floating-point vertex
    comparison).
    """
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    edges = np.sort(edges, axis=1)
    unique_edges, inverse = np.unique(edges, axis=0, return_inverse=True)
    midpoints = _normalize(
        vertices[unique_edges[:, 0]] + vertices[unique_edges[:, 1]]
    )
    mid_index = vertices.shape[0] + inverse.reshape(3, -1).T  # (T, 3): m01, m12, m20

    v0, v1, v2 = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    m01, m12, m20 = mid_index[:, 0], mid_index[:, 1], mid_index[:, 2]
    children = np.concatenate(
        [
            np.stack([v0, m01, m20], axis=1),
            np.stack([m01, v1, m12], axis=1),
            np.stack([m20, m12, v2], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ],
        axis=0,
    )
    return np.concatenate([vertices, midpoints], axis=0), children


def _spherical_area(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solid angle of spherical triangles via l'Huilier's theorem."""
    la, lb, lc = _arc(b, c), _arc(c, a), _arc(a, b)
    s = 0.5 * (la + lb + lc)
    t = (
        np.tan(0.5 * s)
        * np.tan(0.5 * (s - la))
        * np.tan(0.5 * (s - lb))
        * np.tan(0.5 * (s - lc))
    )
    return 4.0 * np.arctan(np.sqrt(np.maximum(t, 0.0)))


def _neighbors(triangles: np.ndarray) -> np.ndarray:
    """Neighbor triangle per local edge slot; raises if the mesh is open."""
    n_tri = triangles.shape[0]
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    owner = np.tile(np.arange(n_tri), 3)
    key = np.sort(edges, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    key_sorted = key[order]
    owner_sorted = owner[order]
    pairs_equal = np.all(key_sorted[0::2] == key_sorted[1::2], axis=1)
    if key_sorted.shape[0] % 2 or not np.all(pairs_equal):
        raise MeshError("mesh is not a closed 2-manifold: unpaired edges found")
    nbr_sorted = np.empty(key_sorted.shape[0], dtype=np.int64)
    nbr_sorted[0::2] = owner_sorted[1::2]
    nbr_sorted[1::2] = owner_sorted[0::2]
    neighbor_flat = np.empty(key_sorted.shape[0], dtype=np.int64)
    neighbor_flat[order] = nbr_sorted
    return neighbor_flat.reshape(3, n_tri).T


def mesh_geometry(level: int, vertices: np.ndarray, triangles: np.ndarray) -> TriMesh:
    """Populate all finite-volume geometry for a given connectivity.

    Raises :class:`MeshError` for degenerate triangles and whenever a
    circumcenter falls outside its triangle, which would break the
    finite-difference normal derivative of the diffusion stencil.
    """
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]

    area = _spherical_area(a, b, c)
    if np.any(area <= 1e-14):
        raise MeshError("degenerate triangle with vanishing spherical area")

    # Spherical circumcenter: unit normal of the vertex plane, oriented outward.
    normal = np.cross(b - a, c - a)
    norms = np.linalg.norm(normal, axis=1)
    if np.any(norms <= 1e-14):
        raise MeshError("degenerate triangle with collinear vertices")
    cc = normal / norms[:, None]

    inside = (
        (np.sum(cc * np.cross(a, b), axis=1) > 0)
        & (np.sum(cc * np.cross(b, c), axis=1) > 0)
        & (np.sum(cc * np.cross(c, a), axis=1) > 0)
    )
    if not np.all(inside):
        raise MeshError(
            f"{np.count_nonzero(~inside)} circumcenters outside their triangle"
        )

    neighbor = _neighbors(triangles)

    heads = np.stack([a, b, c], axis=1)  # slot j starts at vertex j
    tails = np.stack([b, c, a], axis=1)  # and ends at vertex j+1
    edge_length = _arc(heads, tails)
    edge_mid = _normalize(heads + tails)
    # Outward normal: rotate the (counterclockwise) edge tangent by -90 deg
    # around the midpoint; chords are orthogonal to projected midpoints.
    tangent = _normalize(tails - heads)
    edge_normal = _normalize(np.cross(tangent, edge_mid))

    h = _arc(cc[:, None, :], edge_mid)
    h_bar = _arc(cc[neighbor], edge_mid)
    denom = h + h_bar
    if np.any(denom <= 1e-14):
        raise MeshError("coincident circumcenters across an edge")
    alpha = h / denom

    mesh = TriMesh(
        level=level,
        vertices=vertices,
        triangles=triangles,
        area=area,
        circumcenter=cc,
        neighbor=neighbor,
        edge_length=edge_length,
        edge_mid=edge_mid,
        edge_normal=edge_normal,
        h=h,
        h_bar=h_bar,
        alpha=alpha,
    )
    for arr in (
        vertices, triangles, area, cc, neighbor, edge_length,
        edge_mid, edge_normal, h, h_bar, alpha,
    ):
        arr.setflags(write=False)
    return mesh


def build_icosphere(level: int, cache_dir: str | Path | None = None) -> TriMesh:
    """Icosahedron refined ``level`` times with projected edge midpoints.

    Produces ``20 * 4**level`` spherical triangles on ``10 * 4**level + 2``
    vertices.  When ``cache_dir`` is given, the finished geometry is stored
    in (and, when present, restored from) a per-level binary cache file.
    """
    if not isinstance(level, (int, np.integer)) or level < 0:
        raise InvalidParameterError(f"refinement level must be a non-negative integer, got {level!r}")
    if level > MAX_LEVEL:
        raise InvalidParameterError(f"refinement level {level} exceeds guard {MAX_LEVEL}")

    if cache_dir is not None:
        path = Path(cache_dir) / f"icosphere_level{level}.mnpmesh"
        if path.is_file():
            logger.debug("loading cached mesh %s", path)
            return load_mesh(path)

    vertices = _normalize(_BASE_VERTICES.copy())
    triangles = _BASE_TRIANGLES.copy()
    for _ in range(level):
        vertices, triangles = _subdivide(vertices, triangles)
    mesh = mesh_geometry(level, vertices, triangles)

    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_mesh(mesh, path)
        logger.debug("cached mesh at %s", path)
    return mesh


# ---------------------------------------------------------------------------
# Binary cache: magic, version, header, then little-endian arrays in a fixed
# order.  Level-6 geometry takes a few seconds to build; the cache makes it a
# one-time cost.
# ---------------------------------------------------------------------------

_ARRAY_ORDER = (
    ("vertices", "<f8"),
    ("triangles", "<i8"),
    ("area", "<f8"),
    ("circumcenter", "<f8"),
    ("neighbor", "<i8"),
    ("edge_length", "<f8"),
    ("edge_mid", "<f8"),
    ("edge_normal", "<f8"),
    ("h", "<f8"),
    ("h_bar", "<f8"),
    ("alpha", "<f8"),
)


def save_mesh(mesh: TriMesh, path: str | Path) -> None:
    """Write the mesh to a versioned little-endian binary file."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _CACHE_VERSION, mesh.level, 0))
        fh.write(struct.pack("<QQ", mesh.n_vertices, mesh.n_triangles))
        for name, dtype in _ARRAY_ORDER:
            getattr(mesh, name).astype(dtype).tofile(fh)


def load_mesh(path: str | Path) -> TriMesh:
    """Read a mesh cache file written by :func:`save_mesh`."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise MeshError(f"{path} is not a mesh cache file")
        version, level, _ = struct.unpack("<III", fh.read(12))
        if version != _CACHE_VERSION:
            raise MeshError(f"unsupported mesh cache version {version}")
        n_vert, n_tri = struct.unpack("<QQ", fh.read(16))
        shapes = {
            "vertices": (n_vert, 3),
            "triangles": (n_tri, 3),
            "area": (n_tri,),
            "circumcenter": (n_tri, 3),
            "neighbor": (n_tri, 3),
            "edge_length": (n_tri, 3),
            "edge_mid": (n_tri, 3, 3),
            "edge_normal": (n_tri, 3, 3),
            "h": (n_tri, 3),
            "h_bar": (n_tri, 3),
            "alpha": (n_tri, 3),
        }
        arrays = {}
        for name, dtype in _ARRAY_ORDER:
            count = int(np.prod(shapes[name]))
            data = np.fromfile(fh, dtype=dtype, count=count)
            if data.size != count:
                raise MeshError(f"truncated mesh cache file {path}")
            arrays[name] = data.reshape(shapes[name])
    expected = 20 * 4**level
    if n_tri != expected:
        raise MeshError(
            f"cache header inconsistent: level {level} implies {expected} triangles, file has {n_tri}"
        )
    mesh = TriMesh(level=level, **arrays)
    for name, _ in _ARRAY_ORDER:
        getattr(mesh, name).setflags(write=False)
    return mesh


def validate_mesh(mesh: TriMesh, tol: float = 1e-9) -> None:
    """Assert the structural invariants; raises :class:`MeshError` on failure.

    Checks unit vertices, Euler counts for the refinement level, total area
    ``4 pi``, weight mirror symmetry, and outward orientation of every edge
    normal with respect to the circumcenter of the adjacent triangle.
    """
    if np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0)) > 1e-12:
        raise MeshError("vertices are not unit vectors")
    if mesh.n_triangles != 20 * 4**mesh.level:
        raise MeshError("triangle count does not match level")
    if mesh.n_vertices != 10 * 4**mesh.level + 2:
        raise MeshError("vertex count does not match level")
    if abs(mesh.area.sum() - 4.0 * np.pi) > tol * 4.0 * np.pi:
        raise MeshError("triangle areas do not sum to the sphere area")
    if np.any(mesh.alpha <= 0.0) or np.any(mesh.alpha >= 1.0):
        raise MeshError("interpolation weights must lie strictly inside (0, 1)")
    slots = mesh.edge_slot_of_neighbor()
    mirrored = mesh.alpha[mesh.neighbor, slots]
    if np.max(np.abs(mesh.alpha + mirrored - 1.0)) > 1e-12:
        raise MeshError("edge weights are not mirror-consistent")
    towards = mesh.circumcenter[mesh.neighbor] - mesh.circumcenter[:, None, :]
    if np.any(np.sum(mesh.edge_normal * towards, axis=-1) <= 0.0):
        raise MeshError("an edge normal does not point toward its neighbor")
