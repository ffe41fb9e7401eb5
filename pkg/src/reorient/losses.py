"""Rotation-regression losses and their gradients w.r.t. the predicted quaternion.

All losses are per-sample; dataset averaging belongs to the training loop.
Gradients are taken with respect to the four quaternion components directly;
chaining through the network's normalization layer is the estimator's job.
The arccos loss is evaluation-only in practice: its monotone surrogate
1 - <q, q_hat> is the numerically stable form used for optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import PointCloud
from .rotation import UnitQuaternion, to_matrix

__all__ = [
    "LossResult",
    "hybrid_loss",
    "mean_angle_loss",
    "shapematch_loss",
    "surrogate_loss",
]

SINGULARITY_MARGIN = 1e-9


@dataclass(frozen=True)
class LossResult:
    value: float
    gradient: np.ndarray  # d(loss)/d(q_hat), 4-vector
    singular: bool = False  # gradient undefined (|<q, q_hat>| -> 1); zeros returned


def mean_angle_loss(q: UnitQuaternion, q_hat: UnitQuaternion) -> LossResult:
    """Angle loss arccos(<q, q_hat>), the per-sample term of the dataset mean.

    Sign-sensitive by design (no absolute value), which rewards predictions
    with positive real part. The gradient -q / sqrt(1 - d^2) blows up as the
    prediction approaches +-q; there the result is flagged singular and a
    zero gradient is returned.
    """
    d = float(q.as_array() @ q_hat.as_array())
    value = float(np.arccos(np.clip(d, -1.0, 1.0)))
    if abs(d) >= 1.0 - SINGULARITY_MARGIN:
        return LossResult(value=value, gradient=np.zeros(4), singular=True)
    grad = -q.as_array() / np.sqrt(1.0 - d * d)
    return LossResult(value=value, gradient=grad)


def surrogate_loss(q: UnitQuaternion, q_hat: UnitQuaternion) -> LossResult:
    """Stable training form of the angle loss: 1 - <q, q_hat>, gradient -q.

    Shares its argmin with mean_angle_loss over any candidate set (arccos is
    strictly decreasing in the dot product).
    """
    d = float(q.as_array() @ q_hat.as_array())
    return LossResult(value=1.0 - d, gradient=-q.as_array())


def _rotation_jacobian(q: UnitQuaternion) -> np.ndarray:
    """d(to_matrix)/d(q) as a (4, 3, 3) stack, components ordered (qr, qi, qj, qk)."""
    w, x, y, z = q.qr, q.qi, q.qj, q.qk
    return 2.0 * np.array(
        [
            [[0, -z, y], [z, 0, -x], [-y, x, 0]],
            [[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]],
            [[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]],
            [[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]],
        ],
        dtype=float,
    )


def shapematch_loss(
    q: UnitQuaternion, q_hat: UnitQuaternion, points: PointCloud
) -> LossResult:
    """Point-set discrepancy between the cloud rotated by the prediction and by
    the ground truth, invariant to object symmetries and to the sign of q_hat.

    value = (1 / 2n) * sum_i min_j ||R(q_hat) x_i - R(q) x_j||^2.
    The gradient holds each argmin match fixed (standard subgradient of a
    min); ties resolve to the lowest index.
    """
    pts = points.points
    predicted = pts @ to_matrix(q_hat).T
    target = pts @ to_matrix(q).T

    diff = predicted[:, None, :] - target[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    match = np.argmin(sq, axis=1)
    residual = predicted - target[match]  # (n, 3)

    n = len(pts)
    value = float(np.einsum("ij,ij->", residual, residual)) / (2.0 * n)

    jac = _rotation_jacobian(q_hat)  # (4, 3, 3)
    # d/dq_k = (1/n) sum_i residual_i . (dR/dq_k x_i)
    grad = np.einsum("im,kmj,ij->k", residual, jac, pts) / n
    return LossResult(value=value, gradient=grad)


def hybrid_loss(
    q: UnitQuaternion, q_hat: UnitQuaternion, points: PointCloud, epoch: int
) -> LossResult:
    """Epoch 0 trains the surrogate angle loss to pin the quaternion sign;
    every later epoch switches to the symmetry-invariant shape loss."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch == 0:
        return surrogate_loss(q, q_hat)
    return shapematch_loss(q, q_hat, points)
