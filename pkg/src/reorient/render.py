"""Orthographic software depth renderer and image-space domain randomization.

Camera convention: view direction -z, centered on the origin. The camera
plane sits at z = (near + far) / 2, so a point p has metric depth
plane_z - p.z, increasing away from the camera. Stored pixels are 16-bit:
0 is the background sentinel, object depths map linearly onto [1, 65535]
over [near, far].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import PointCloud, TriangleMesh
from .rotation import UnitQuaternion, to_matrix

__all__ = [
    "CameraModel",
    "DepthImage",
    "NoObjectPixelsError",
    "OutOfFrustumError",
    "RandomizationConfig",
    "default_camera",
    "dropout_pixels",
    "load_depth_image",
    "occlude_rectangle",
    "render_depth",
    "save_depth_image",
    "to_point_cloud",
]

MAX_STORED = 65535  # 16-bit quantization ceiling; 0 is reserved for background


class OutOfFrustumError(ValueError):
    """Every mesh vertex left the camera view volume."""


class NoObjectPixelsError(ValueError):
    """Operation requires at least one nonzero (object) pixel."""


@dataclass(frozen=True)
class CameraModel:
    """Orthographic camera looking down -z at the origin.

    half_extent is the half width/height of the square view window; near and
    far bound the representable depth range, measured from the camera plane
    at z = (near + far) / 2. The defaults leave margin around the canonical
    unit-radius object.
    """

    half_extent: float = 1.2
    near: float = 0.8
    far: float = 3.2

    def __post_init__(self):
        if self.half_extent < 1.0:
            raise ValueError("half_extent must be >= 1 so the unit object fits")
        if self.far - self.near < 2.0:
            raise ValueError("depth range must span >= 2 so the unit object fits")

    @property
    def plane_z(self) -> float:
        return (self.near + self.far) / 2.0

    @property
    def depth_scale(self) -> float:
        return (self.far - self.near) / (MAX_STORED - 1)

    @property
    def depth_offset(self) -> float:
        return self.near - self.depth_scale


@dataclass(frozen=True)
class DepthImage:
    """Quantized depth observation; values[r, c] == 0 marks background."""

    width: int
    height: int
    values: np.ndarray  # (height, width) uint16
    depth_scale: float
    depth_offset: float

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise ValueError("values shape does not match width/height")
        if self.values.dtype != np.uint16:
            raise ValueError("values must be uint16")

    def nonzero_mask(self) -> np.ndarray:
        return self.values != 0

    def dequantize(self) -> np.ndarray:
        """Metric depth per pixel; background pixels become NaN."""
        d = self.depth_offset + self.values.astype(float) * self.depth_scale
        d[self.values == 0] = np.nan
        return d


def default_camera() -> CameraModel:
    return CameraModel()


def _is_top_left(ax, ay, bx, by) -> bool:
    # y grows downward; top edge = horizontal going left, left edge = going down
    return (by == ay and bx < ax) or (by > ay)


def render_depth(
    mesh: TriangleMesh,
    orientation: UnitQuaternion,
    cam: CameraModel,
    width: int = 128,
    height: int = 128,
) -> DepthImage:
    """Z-buffer rasterization of the rotated mesh at pixel centers.

    Per covered pixel the nearest surface depth is kept and quantized;
    uncovered pixels store 0. Pixel centers exactly on a triangle edge
    follow the top-left fill rule. Deterministic for identical inputs.
    """
    verts = mesh.vertices @ to_matrix(orientation).T
    depths = cam.plane_z - verts[:, 2]

    inside = (
        (np.abs(verts[:, 0]) <= cam.half_extent)
        & (np.abs(verts[:, 1]) <= cam.half_extent)
        & (depths >= cam.near)
        & (depths <= cam.far)
    )
    if not inside.any():
        raise OutOfFrustumError("all mesh vertices are outside the view volume")

    # pixel-space coordinates: u right, v down, pixel (r, c) center at (c+0.5, r+0.5)
    su = width / (2.0 * cam.half_extent)
    sv = height / (2.0 * cam.half_extent)
    u = (verts[:, 0] + cam.half_extent) * su
    v = (cam.half_extent - verts[:, 1]) * sv

    zbuf = np.full((height, width), np.inf)
    scale = cam.depth_scale
    dmin, dmax = cam.near - 0.5 * scale, cam.far + 0.5 * scale

    for tri in mesh.triangles:
        i0, i1, i2 = tri
        x0, y0, d0 = u[i0], v[i0], depths[i0]
        x1, y1, d1 = u[i1], v[i1], depths[i1]
        x2, y2, d2 = u[i2], v[i2], depths[i2]

        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 == 0.0:
            continue
        if area2 < 0.0:  # rewind so edge functions are positive inside
            x1, y1, d1, x2, y2, d2 = x2, y2, d2, x1, y1, d1
            area2 = -area2

        cmin = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        cmax = min(width - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        rmin = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        rmax = min(height - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        if cmin > cmax or rmin > rmax:
            continue

        pc = np.arange(cmin, cmax + 1) + 0.5
        pr = np.arange(rmin, rmax + 1) + 0.5
        px, py = np.meshgrid(pc, pr)

        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)

        m0 = (w0 > 0) | ((w0 == 0) & _is_top_left(x1, y1, x2, y2))
        m1 = (w1 > 0) | ((w1 == 0) & _is_top_left(x2, y2, x0, y0))
        m2 = (w2 > 0) | ((w2 == 0) & _is_top_left(x0, y0, x1, y1))
        covered = m0 & m1 & m2
        if not covered.any():
            continue

        frag = (w0 * d0 + w1 * d1 + w2 * d2) / area2
        covered &= (frag >= dmin) & (frag <= dmax)

        window = zbuf[rmin : rmax + 1, cmin : cmax + 1]
        update = covered & (frag < window)
        window[update] = frag[update]

    values = np.zeros((height, width), dtype=np.uint16)
    hit = np.isfinite(zbuf)
    if hit.any():
        q = np.rint((zbuf[hit] - cam.depth_offset) / scale)
        values[hit] = np.clip(q, 1, MAX_STORED).astype(np.uint16)

    return DepthImage(
        width=width,
        height=height,
        values=values,
        depth_scale=cam.depth_scale,
        depth_offset=cam.depth_offset,
    )


@dataclass(frozen=True)
class RandomizationConfig:
    """Image-space randomization: occluder rectangle geometry and pixel dropout.

    The rectangle mimics a gripper occluding the held object; sizes are in
    pixels and assume roughly 128x128 images. Dropout imitates depth-sensor
    holes. Magnitudes are declared configuration, not ground truth.
    """

    rect_length: tuple[float, float] = (20.0, 60.0)
    rect_thickness: tuple[float, float] = (4.0, 10.0)
    dropout_p: float = 0.01


def _rect_mask(height, width, row0, col0, angle, length, thickness) -> np.ndarray:
    """Boolean mask of pixels inside a rotated rectangle centered on (row0, col0)."""
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dc = cc - col0
    dr = rr - row0
    along = dc * math.cos(angle) + dr * math.sin(angle)
    across = -dc * math.sin(angle) + dr * math.cos(angle)
    return (np.abs(along) <= length / 2.0) & (np.abs(across) <= thickness / 2.0)


def occlude_rectangle(
    img: DepthImage, rng: np.random.Generator, cfg: RandomizationConfig
) -> DepthImage:
    """Zero a random thin rectangle centered on a random object pixel."""
    rows, cols = np.nonzero(img.values)
    if len(rows) == 0:
        raise NoObjectPixelsError("cannot occlude an all-background image")
    pick = rng.integers(len(rows))
    angle = rng.uniform(0.0, 2.0 * math.pi)
    length = rng.uniform(*cfg.rect_length)
    thickness = rng.uniform(*cfg.rect_thickness)
    mask = _rect_mask(img.height, img.width, rows[pick], cols[pick], angle, length, thickness)
    values = img.values.copy()
    values[mask] = 0
    return DepthImage(img.width, img.height, values, img.depth_scale, img.depth_offset)


def dropout_pixels(img: DepthImage, p: float, rng: np.random.Generator) -> DepthImage:
    """Zero each nonzero pixel independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("dropout probability must be in [0, 1]")
    drop = (rng.random(img.values.shape) < p) & (img.values != 0)
    values = img.values.copy()
    values[drop] = 0
    return DepthImage(img.width, img.height, values, img.depth_scale, img.depth_offset)


def to_point_cloud(img: DepthImage, cam: CameraModel) -> PointCloud:
    """Back-project nonzero pixels through the orthographic camera.

    Inverse of the render mapping up to quantization error.
    """
    rows, cols = np.nonzero(img.values)
    if len(rows) == 0:
        raise NoObjectPixelsError("cannot back-project an all-background image")
    x = (cols + 0.5) * (2.0 * cam.half_extent / img.width) - cam.half_extent
    y = cam.half_extent - (rows + 0.5) * (2.0 * cam.half_extent / img.height)
    depth = img.depth_offset + img.values[rows, cols].astype(float) * img.depth_scale
    z = cam.plane_z - depth
    return PointCloud(np.column_stack([x, y, z]))


def save_depth_image(img: DepthImage, cam: CameraModel, path) -> None:
    """Persist as 16-bit binary PGM (P5, big-endian) plus a JSON sidecar."""
    path = Path(path)
    header = f"P5\n{img.width} {img.height}\n{MAX_STORED}\n".encode("ascii")
    path.write_bytes(header + img.values.astype(">u2").tobytes())
    sidecar = {
        "depth_scale": img.depth_scale,
        "depth_offset": img.depth_offset,
        "width": img.width,
        "height": img.height,
        "camera": {"half_extent": cam.half_extent, "near": cam.near, "far": cam.far},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def _parse_pgm_header(raw: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, data_offset) of a P5 header.

    Exactly one whitespace byte separates maxval from the sample data, so the
    header must be walked token by token; a bulk split would swallow data
    bytes that happen to be whitespace.
    """
    idx = 0
    tokens = []
    while len(tokens) < 4:
        while idx < len(raw) and raw[idx : idx + 1].isspace():
            idx += 1
        start = idx
        while idx < len(raw) and not raw[idx : idx + 1].isspace():
            idx += 1
        if start == idx:
            raise ValueError("incomplete PGM header")
        tokens.append(raw[start:idx])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    return int(tokens[1]), int(tokens[2]), int(tokens[3]), idx + 1


def load_depth_image(path) -> tuple[DepthImage, CameraModel]:
    """Bit-exact inverse of save_depth_image."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        width, height, maxval, offset = _parse_pgm_header(raw)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    if maxval != MAX_STORED:
        raise ValueError(f"{path}: expected maxval {MAX_STORED}, found {maxval}")
    data = raw[offset : offset + 2 * width * height]
    if len(data) != 2 * width * height:
        raise OSError(f"{path}: truncated pixel data")
    values = np.frombuffer(data, dtype=">u2").reshape(height, width).astype(np.uint16)

    sidecar = json.loads(Path(str(path) + ".json").read_text())
    cam = CameraModel(**sidecar["camera"])
    img = DepthImage(
        width=width,
        height=height,
        values=values,
        depth_scale=sidecar["depth_scale"],
        depth_offset=sidecar["depth_offset"],
    )
    return img, cam
