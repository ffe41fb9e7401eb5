"""Triangle meshes, point clouds, chamfer distance, and symmetry scoring.

Meshes load into a canonical frame: centroid at the origin, max vertex
radius 1. The reorientation problem is rotation-only, so translation and
scale are factored out deterministically at load time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rotation import UnitQuaternion, from_axis_angle, to_matrix

__all__ = [
    "EmptyMeshError",
    "MeshParseError",
    "PointCloud",
    "TriangleMesh",
    "chamfer_distance",
    "chamfer_min_term",
    "load_obj",
    "rotate_cloud",
    "sample_vertices",
    "save_cloud_csv",
    "symmetry_score",
]

SYMMETRY_TEST_ANGLES = (2.0 * math.pi / 3.0, math.pi)  # 120 and 180 degrees


class MeshParseError(ValueError):
    """OBJ file is missing or malformed."""


class EmptyMeshError(ValueError):
    """Mesh has no vertices or no faces."""


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices (n, 3) float array and triangles (m, 3) int index array."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        if len(self.vertices) == 0 or len(self.triangles) == 0:
            raise EmptyMeshError("mesh needs at least one vertex and one triangle")
        if not np.isfinite(self.vertices).all():
            raise MeshParseError("mesh has non-finite vertex coordinates")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise MeshParseError("triangle index out of range")

    def radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())


@dataclass(frozen=True)
class PointCloud:
    """Non-empty (n, 3) array of finite points."""

    points: np.ndarray

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("point cloud is empty")
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud has non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)


def load_obj(path) -> TriangleMesh:
    """Load an ASCII Wavefront OBJ (v/f records only) into the canonical frame.

    Faces with more than three vertices are fan-triangulated. Normals,
    texture coordinates, and materials are ignored.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshParseError(f"cannot read OBJ file {path}: {exc}") from exc

    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        kind = tokens[0]
        if kind == "v":
            if len(tokens) < 4:
                raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError as exc:
                raise MeshParseError(f"{path}:{lineno}: bad vertex coordinate") from exc
        elif kind == "f":
            idx = []
            for token in tokens[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise MeshParseError(f"{path}:{lineno}: bad face index {token!r}") from exc
                # OBJ indices are 1-based; negative indices count from the end
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            if len(idx) < 3:
                raise MeshParseError(f"{path}:{lineno}: face has fewer than 3 vertices")
            for k in range(1, len(idx) - 1):  # fan split
                faces.append((idx[0], idx[k], idx[k + 1]))
        # other record types (vn, vt, mtllib, ...) are ignored

    if not vertices or not faces:
        raise EmptyMeshError(f"{path}: no geometry found")

    verts = np.asarray(vertices, dtype=float)
    tris = np.asarray(faces, dtype=int)
    if tris.min() < 0 or tris.max() >= len(verts):
        raise MeshParseError(f"{path}: face index out of range")

    verts = verts - verts.mean(axis=0)
    radius = np.linalg.norm(verts, axis=1).max()
    if radius < 1e-12:
        raise MeshParseError(f"{path}: degenerate mesh (all vertices coincide)")
    return TriangleMesh(vertices=verts / radius, triangles=tris)


def sample_vertices(mesh: TriangleMesh, cap: int, rng: np.random.Generator) -> PointCloud:
    """Vertex cloud capped at `cap` points, sampled uniformly without replacement."""
    if cap < 1:
        raise ValueError("vertex cap must be >= 1")
    n = len(mesh.vertices)
    if n <= cap:
        return PointCloud(mesh.vertices.copy())
    idx = rng.choice(n, size=cap, replace=False)
    return PointCloud(mesh.vertices[np.sort(idx)])


def rotate_cloud(cloud: PointCloud, q: UnitQuaternion) -> PointCloud:
    """Apply the rotation of q to every point."""
    return PointCloud(cloud.points @ to_matrix(q).T)


def _min_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each row of a, squared distance to the nearest row of b."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)


def chamfer_min_term(x, cloud: PointCloud) -> float:
    """Minimum squared Euclidean distance from x to any cloud point."""
    x = np.asarray(x, dtype=float)
    d = cloud.points - x
    return float(np.einsum("ij,ij->i", d, d).min())


def chamfer_distance(a: PointCloud, b: PointCloud) -> float:
    """Symmetric chamfer: mean nearest squared distance a->b plus b->a."""
    return float(_min_sq_dists(a.points, b.points).mean()
                 + _min_sq_dists(b.points, a.points).mean())


def symmetry_score(mesh: TriangleMesh) -> float:
    """Minimum chamfer distance between the vertex cloud and its copies rotated
    by 120 and 180 degrees about each of the x, y, and z axes.

    Small scores flag symmetric objects. Scored on the whole canonical mesh
    (not per stable pose).
    """
    cloud = PointCloud(mesh.vertices)
    best = math.inf
    for axis_index in range(3):
        axis = np.zeros(3)
        axis[axis_index] = 1.0
        for angle in SYMMETRY_TEST_ANGLES:
            rotated = rotate_cloud(cloud, from_axis_angle(axis, angle))
            best = min(best, chamfer_distance(cloud, rotated))
    return best


def save_cloud_csv(cloud: PointCloud, path) -> None:
    """Write a point cloud as CSV, one x,y,z row per point."""
    np.savetxt(path, cloud.points, delimiter=",", header="x,y,z", comments="")
