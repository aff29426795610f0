"""Triangle meshes: OBJ loading, unit-cube normalization, surface sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMeshError, MeshIndexError, ParseError

# normalize_mesh treats a mesh within this tolerance of the target frame as fixed
_NORMALIZED_TOL = 1e-12


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size:
            lo, hi = self.triangles.min(), self.triangles.max()
            if lo < 0 or hi >= len(self.vertices):
                raise MeshIndexError(
                    f"triangle index out of range [0, {len(self.vertices)})")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def boundary_edges(self) -> np.ndarray:
        """Undirected edges used by exactly one triangle."""
        if not self.n_triangles:
            return np.zeros((0, 2), dtype=np.int64)
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges.sort(axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts == 1]

    def is_watertight(self) -> bool:
        return self.n_triangles > 0 and len(self.boundary_edges()) == 0


@dataclass
class PointSet:
    points: np.ndarray
    seed: int
    face_ids: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)


def merge_meshes(parts, model_id="") -> Mesh:
    verts, tris, offset = [], [], 0
    for p in parts:
        verts.append(p.vertices)
        tris.append(p.triangles + offset)
        offset += p.n_vertices
    if not verts:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), model_id)
    return Mesh(np.concatenate(verts), np.concatenate(tris), model_id)


def _parse_index(tok: str, n_verts: int, lineno: int) -> int:
    head = tok.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ParseError(f"bad face index {tok!r}", lineno) from None
    if idx == 0:
        raise MeshIndexError("face index 0 is invalid (OBJ indices are 1-based)", lineno)
    # negative indices are relative to the vertices read so far
    resolved = idx - 1 if idx > 0 else n_verts + idx
    if resolved < 0 or resolved >= n_verts:
        raise MeshIndexError(f"face index {idx} out of range (have {n_verts} vertices)", lineno)
    return resolved


def load_obj(path, model_id: str | None = None) -> Mesh:
    """Read the geometric subset of an OBJ file.

    Only ``v`` and ``f`` records are interpreted; polygons are fan-triangulated
    around their first vertex. Texture/normal indices, groups and materials are
    ignored.
    """
    verts, tris = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ParseError("vertex record needs 3 coordinates", lineno)
                try:
                    verts.append([float(x) for x in tok[1:4]])
                except ValueError:
                    raise ParseError(f"bad vertex coordinate in {line!r}", lineno) from None
            elif tok[0] == "f":
                if len(tok) < 4:
                    raise ParseError("face record needs at least 3 indices", lineno)
                idx = [_parse_index(t, len(verts), lineno) for t in tok[1:]]
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[k], idx[k + 1]])
    if model_id is None:
        model_id = os.path.splitext(os.path.basename(str(path)))[0]
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                np.array(tris, dtype=np.int64).reshape(-1, 3), model_id)


def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {mesh.model_id}\n")
        for v in mesh.vertices:
            fh.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def normalize_mesh(m: Mesh, center: str = "bbox") -> Mesh:
    """Scale uniformly so the largest bounding-box extent is 1, then center.

    ``center="bbox"`` moves the bounding-box center to the origin, which puts
    every vertex in [-0.5, 0.5]^3. ``center="centroid"`` uses the vertex mean
    instead; the cube containment then no longer holds in general.
    """
    if m.n_vertices == 0:
        raise DegenerateMeshError("cannot normalize an empty mesh")
    lo, hi = m.bounds()
    extent = float((hi - lo).max())
    if not np.isfinite(extent) or extent <= 0.0:
        raise DegenerateMeshError("bounding box has zero extent")
    if center == "bbox":
        c = 0.5 * (lo + hi)
    elif center == "centroid":
        c = m.vertices.mean(axis=0)
    else:
        raise ValueError(f"unknown centering mode {center!r}")
    if abs(extent - 1.0) <= _NORMALIZED_TOL and np.all(np.abs(c) <= _NORMALIZED_TOL):
        return Mesh(m.vertices.copy(), m.triangles.copy(), m.model_id)
    v = (m.vertices - c) / extent
    return Mesh(v, m.triangles.copy(), m.model_id)


def sample_surface(m: Mesh, n: int, seed: int) -> PointSet:
    """Area-uniform surface samples: triangle chosen by area, then uniform barycentrics."""
    areas = m.triangle_areas() if m.n_triangles else np.zeros(0)
    total = areas.sum()
    if not total > 0.0:
        raise DegenerateMeshError("mesh has no triangle of positive area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = (1.0 - r1)[:, None]
    b = (r1 * (1.0 - r2))[:, None]
    c = (r1 * r2)[:, None]
    t = m.triangles[face]
    v = m.vertices
    pts = a * v[t[:, 0]] + b * v[t[:, 1]] + c * v[t[:, 2]]
    return PointSet(pts, seed, face)
