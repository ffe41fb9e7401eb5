"""Interchangeable rotation estimators: ground-truth oracle and ICP baseline.

Every estimator maps a (start image, goal image) pair to a canonicalized
unit-quaternion estimate of the relative rotation, expressed in the world
frame (goal = estimate composed after start). The learned regressor lives
in reorient.regressor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rotation
from .render import CameraModel, DepthImage, to_point_cloud
from .rotation import UnitQuaternion

__all__ = [
    "DegenerateCloudError",
    "IcpConfig",
    "IcpEstimator",
    "OracleEstimator",
    "RotationEstimate",
    "icp_align",
    "icp_predict",
    "kabsch_rotation",
    "oracle_predict",
]


class DegenerateCloudError(ValueError):
    """Point cloud cannot pin down a rotation (rank-deficient covariance)."""


@dataclass(frozen=True)
class RotationEstimate:
    """Canonicalized rotation estimate plus estimator-specific diagnostics."""

    q_hat: UnitQuaternion
    iterations: int = 0
    residual: float = 0.0
    fallback: bool = False  # estimator degenerated and substituted the identity


def oracle_predict(
    true_rotation: UnitQuaternion,
    noise_ratio: float,
    rng: np.random.Generator,
) -> RotationEstimate:
    """Ground truth perturbed by angle-proportional noise (simulation only).

    The estimate is the true rotation composed with a rotation about a
    uniformly random axis by angle noise_ratio * true_angle * |g| with g
    standard normal, mimicking predictors whose error grows with the actual
    angle difference. noise_ratio = 0 is the exact oracle.
    """
    theta = rotation.quat_to_angle(rotation.canonicalize(true_rotation))
    if noise_ratio == 0.0 or theta == 0.0:
        return RotationEstimate(q_hat=rotation.canonicalize(true_rotation))
    axis = rng.standard_normal(3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.standard_normal(3)
    noise_angle = noise_ratio * theta * abs(rng.standard_normal())
    noise_q = rotation.from_axis_angle(axis, noise_angle)
    q_hat = rotation.canonicalize(rotation.multiply(noise_q, true_rotation))
    return RotationEstimate(q_hat=q_hat)


class OracleEstimator:
    """Image-interface wrapper that reads the truth from a simulation handle.

    `truth_source` is any callable returning the current true relative
    rotation (e.g. SimEnvironment.true_relative_rotation). The images are
    accepted and ignored.
    """

    def __init__(self, truth_source, noise_ratio: float = 0.0, rng=None):
        self.truth_source = truth_source
        self.noise_ratio = noise_ratio
        self.rng = rng if rng is not None else np.random.default_rng()

    def __call__(self, img_s: DepthImage, img_g: DepthImage) -> RotationEstimate:
        return oracle_predict(self.truth_source(), self.noise_ratio, self.rng)


@dataclass(frozen=True)
class IcpConfig:
    max_iter: int = 50
    tol: float = 1e-8  # stop when the mean squared residual improves less than this
    max_points: int = 800  # stride-subsample denser clouds before matching


def kabsch_rotation(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Least-squares rotation R with R @ source_i ~ target_i (corresponded rows).

    Standard Kabsch: both sets are centered on their correspondence centroids,
    then the SVD of the cross-covariance gives R, with the determinant fix
    that excludes reflections.
    """
    if len(source) < 3:
        raise DegenerateCloudError("need at least 3 corresponded points")
    a = source - source.mean(axis=0)
    b = target - target.mean(axis=0)
    h = a.T @ b
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise DegenerateCloudError("correspondence covariance is rank-deficient")
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    return v @ np.diag([1.0, 1.0, d]) @ u.T


def _subsample(points: np.ndarray, cap: int) -> np.ndarray:
    if len(points) <= cap:
        return points
    idx = np.linspace(0, len(points) - 1, cap).astype(int)
    return points[idx]


def _nearest_indices(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    diff = src[:, None, :] - dst[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff).argmin(axis=1)


def icp_align(
    source: np.ndarray, target: np.ndarray, cfg: IcpConfig = IcpConfig()
) -> tuple[np.ndarray, int, float]:
    """Iterative closest point between centered clouds; returns (R, iters, residual).

    Alternates brute-force nearest-neighbor correspondences with the Kabsch
    solution until the mean squared residual stops improving by cfg.tol.
    The small residual translation between the matched subsets is tracked
    internally so correspondences stay honest, but only the rotation is
    reported; the clouds are expected to be pre-centered.
    """
    src = _subsample(source, cfg.max_points)
    dst = _subsample(target, cfg.max_points)
    r = np.eye(3)
    t = np.zeros(3)
    prev = math.inf
    residual = math.inf
    iters = 0
    for iters in range(1, cfg.max_iter + 1):
        moved = src @ r.T + t
        match = _nearest_indices(moved, dst)
        corresponded = dst[match]
        r = kabsch_rotation(src, corresponded)
        t = corresponded.mean(axis=0) - r @ src.mean(axis=0)
        residual = float(np.mean(np.sum((src @ r.T + t - corresponded) ** 2, axis=1)))
        if prev - residual < cfg.tol:
            break
        prev = residual
    return r, iters, residual


def icp_predict(
    img_s: DepthImage,
    img_g: DepthImage,
    cam: CameraModel,
    cfg: IcpConfig = IcpConfig(),
) -> RotationEstimate:
    """Estimate the start->goal rotation by registering back-projected clouds.

    Both clouds are centered at their own centroids first; the rotation-only
    problem has no translation component to recover. Initialized at the
    identity, which is sound for the bounded (<= 30 degree) rotations this
    pipeline produces.
    """
    cloud_s = to_point_cloud(img_s, cam).points
    cloud_g = to_point_cloud(img_g, cam).points
    src = cloud_s - cloud_s.mean(axis=0)
    dst = cloud_g - cloud_g.mean(axis=0)
    r, iters, residual = icp_align(src, dst, cfg)
    q_hat = rotation.canonicalize(rotation.from_matrix(r))
    return RotationEstimate(q_hat=q_hat, iterations=iters, residual=residual)


class IcpEstimator:
    """Image-interface adapter around icp_predict."""

    def __init__(self, cam: CameraModel, cfg: IcpConfig = IcpConfig()):
        self.cam = cam
        self.cfg = cfg

    def __call__(self, img_s: DepthImage, img_g: DepthImage) -> RotationEstimate:
        return icp_predict(img_s, img_g, self.cam, self.cfg)
