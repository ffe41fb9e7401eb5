"""Procedural test meshes and a minimal OBJ writer.

These shapes back the demos, the test suite, and desk-scale training runs.
All builders return meshes in the canonical frame (centroid at origin,
max vertex radius 1) like load_obj does.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import TriangleMesh

__all__ = ["cube", "icosphere", "l_block", "tetrahedron", "wedge", "blob", "write_obj"]


def _canonical(vertices: np.ndarray, triangles: np.ndarray) -> TriangleMesh:
    vertices = vertices - vertices.mean(axis=0)
    vertices = vertices / np.linalg.norm(vertices, axis=1).max()
    return TriangleMesh(vertices=vertices, triangles=np.asarray(triangles, dtype=int))


# 12 triangles of a box spanning [0,sx]x[0,sy]x[0,sz]; corner ordering matches
# the vertex list in _box_vertices.
_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # bottom (z=0)
        [4, 5, 6], [4, 6, 7],  # top (z=sz)
        [0, 1, 5], [0, 5, 4],  # y=0
        [2, 3, 7], [2, 7, 6],  # y=sy
        [1, 2, 6], [1, 6, 5],  # x=sx
        [3, 0, 4], [3, 4, 7],  # x=0
    ]
)


def _box_vertices(sx: float, sy: float, sz: float) -> np.ndarray:
    return np.array(
        [
            [0, 0, 0], [sx, 0, 0], [sx, sy, 0], [0, sy, 0],
            [0, 0, sz], [sx, 0, sz], [sx, sy, sz], [0, sy, sz],
        ],
        dtype=float,
    )


def cube() -> TriangleMesh:
    """Unit cube: 8 vertices, 12 triangles, fully symmetric."""
    return _canonical(_box_vertices(1.0, 1.0, 1.0), _BOX_FACES)


def tetrahedron() -> TriangleMesh:
    """Regular tetrahedron (4 vertices, 4 faces)."""
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    )
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return _canonical(v, f)


def wedge() -> TriangleMesh:
    """Right triangular prism; mirror-asymmetric silhouettes on two axes."""
    base = np.array([[0, 0], [2.0, 0], [0, 1.0]])
    v = np.vstack([np.column_stack([base, np.zeros(3)]),
                   np.column_stack([base, np.full(3, 0.8)])])
    f = np.array(
        [
            [0, 2, 1],            # bottom
            [3, 4, 5],            # top
            [0, 1, 4], [0, 4, 3],
            [1, 2, 5], [1, 5, 4],
            [2, 0, 3], [2, 3, 5],
        ]
    )
    return _canonical(v, f)


def l_block() -> TriangleMesh:
    """L-shaped hexahedron: two fused boxes, no rotational symmetry."""
    a = _box_vertices(2.0, 0.8, 0.7)
    b = _box_vertices(0.8, 0.8, 1.6)
    verts = np.vstack([a, b])
    tris = np.vstack([_BOX_FACES, _BOX_FACES + 8])
    return _canonical(verts, tris)


def tee() -> TriangleMesh:
    """T-shaped block with an off-center stem; strongly orientation-revealing."""
    bar = _box_vertices(2.2, 0.6, 0.5)
    stem = _box_vertices(0.6, 0.6, 1.4)
    stem[:, 0] += 0.5
    stem[:, 2] -= 1.4
    verts = np.vstack([bar, stem])
    tris = np.vstack([_BOX_FACES, _BOX_FACES + 8])
    return _canonical(verts, tris)


def stairs() -> TriangleMesh:
    """Three-step staircase; angular and mirror-asymmetric."""
    steps = []
    for i, width in enumerate((1.8, 1.2, 0.6)):
        box = _box_vertices(width, 0.9, 0.4)
        box[:, 2] += 0.4 * i
        steps.append(box)
    verts = np.vstack(steps)
    tris = np.vstack([_BOX_FACES + 8 * i for i in range(3)])
    return _canonical(verts, tris)


def icosphere(subdivisions: int = 3) -> TriangleMesh:
    """Unit sphere approximated by a subdivided icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(p) for p in v]
    index = {p: i for i, p in enumerate(verts)}

    def midpoint(i, j):
        m = np.array(verts[i]) + np.array(verts[j])
        m /= np.linalg.norm(m)
        key = tuple(m)
        if key not in index:
            index[key] = len(verts)
            verts.append(key)
        return index[key]

    for _ in range(subdivisions):
        nxt = []
        for i, j, k in f:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            nxt += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        f = nxt
    # vertices already on the unit sphere and centered; skip recentering so
    # the surface stays exactly analytic
    return TriangleMesh(vertices=np.array(verts), triangles=np.array(f, dtype=int))


def blob(seed: int = 0, subdivisions: int = 2) -> TriangleMesh:
    """Asymmetric star-shaped solid: an icosphere with seeded radial bumps."""
    base = icosphere(subdivisions)
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((6, 3))
    centers /= np.linalg.norm(centers, axis=1)[:, None]
    amps = rng.uniform(0.1, 0.35, size=6)
    widths = rng.uniform(4.0, 10.0, size=6)
    r = np.ones(len(base.vertices))
    for c, a, w in zip(centers, amps, widths):
        r += a * np.exp(-w * (1.0 - base.vertices @ c))
    verts = base.vertices * r[:, None]
    return _canonical(verts, base.triangles)


def write_obj(mesh: TriangleMesh, path) -> None:
    """Write a mesh as an ASCII OBJ file (v and f records)."""
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")
