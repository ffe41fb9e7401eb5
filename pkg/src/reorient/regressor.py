"""Tiny trainable quaternion regressor with manual backpropagation.

Desk-scale stand-in for a convolutional backbone: each (downsampled) depth
image passes through a shared fully connected encoder, the two embeddings
are concatenated and run through two leaky-ReLU hidden layers with inverted
dropout, and a final linear layer regresses a 4-vector that is normalized
and canonicalized into a unit quaternion. Gradients, Adam, and the model
file format are all implemented here with plain numpy.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rotation
from .estimators import RotationEstimate
from .losses import hybrid_loss, shapematch_loss, surrogate_loss
from .mesh import PointCloud
from .render import DepthImage

__all__ = [
    "AdamState",
    "EpochMetrics",
    "RegressorEstimator",
    "RegressorModel",
    "ShapeMismatchError",
    "TrainConfig",
    "adam_step",
    "effective_learning_rate",
    "image_to_input",
    "init_regressor",
    "load_model",
    "regressor_backward",
    "regressor_forward",
    "save_model",
    "train",
]

MAGIC = b"RORQNET1"
PARAM_ORDER = ("W_enc", "b_enc", "W1", "b1", "W2", "b2", "W3", "b3")


class ShapeMismatchError(ValueError):
    """Model file shape table disagrees with its architecture header."""


@dataclass
class RegressorModel:
    """Parameter container; weights are (out, in) matrices, biases vectors."""

    input_pixels: int
    embed_dim: int
    hidden_dim: int
    downsample: int
    leaky_slope: float
    dropout_rate: float
    params: dict[str, np.ndarray]

    def expected_shapes(self) -> dict[str, tuple]:
        e, h, p = self.embed_dim, self.hidden_dim, self.input_pixels
        return {
            "W_enc": (e, p),
            "b_enc": (e,),
            "W1": (h, 2 * e),
            "b1": (h,),
            "W2": (h, h),
            "b2": (h,),
            "W3": (4, h),
            "b3": (4,),
        }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    lr_decay: float = 0.9
    decay_every: int = 5  # epochs
    l2: float = 1e-9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    learning_rate: float
    train_loss: float
    val_mean_angle_deg: float


def init_regressor(
    input_pixels: int,
    embed_dim: int = 64,
    hidden_dim: int = 128,
    downsample: int = 1,
    leaky_slope: float = 0.02,
    dropout_rate: float = 0.4,
    seed: int = 0,
) -> RegressorModel:
    """Fan-in scaled uniform weight init, zero biases."""
    rng = np.random.default_rng(seed)
    model = RegressorModel(
        input_pixels=input_pixels,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        downsample=downsample,
        leaky_slope=leaky_slope,
        dropout_rate=dropout_rate,
        params={},
    )
    for name, shape in model.expected_shapes().items():
        if len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[1])
            model.params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            model.params[name] = np.zeros(shape)
    return model


def image_to_input(img: DepthImage, downsample: int) -> np.ndarray:
    """Scale pixels to [0, 1] and average-pool by the downsample factor."""
    x = img.values.astype(float) / 65535.0
    if downsample > 1:
        h, w = x.shape
        if h % downsample or w % downsample:
            raise ValueError(
                f"image {w}x{h} not divisible by downsample factor {downsample}"
            )
        x = x.reshape(h // downsample, downsample, w // downsample, downsample).mean(
            axis=(1, 3)
        )
    return x.ravel()


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, z, slope * z)


def _leaky_grad(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, 1.0, slope)


def _forward_batch(
    model: RegressorModel,
    xs: np.ndarray,
    xg: np.ndarray,
    train_mode: bool,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, dict]:
    """Run the network on (B, pixels) inputs; returns (q_hat rows, cache)."""
    p = model.params
    slope = model.leaky_slope

    ze_s = xs @ p["W_enc"].T + p["b_enc"]
    ze_g = xg @ p["W_enc"].T + p["b_enc"]
    he_s = _leaky(ze_s, slope)
    he_g = _leaky(ze_g, slope)
    z = np.concatenate([he_s, he_g], axis=1)

    if train_mode:
        if rng is None:
            raise ValueError("train-mode forward needs a random source for dropout")
        keep = 1.0 - model.dropout_rate
        mask1 = (rng.random((xs.shape[0], model.hidden_dim)) < keep) / keep
        mask2 = (rng.random((xs.shape[0], model.hidden_dim)) < keep) / keep
    else:
        mask1 = mask2 = np.ones((xs.shape[0], model.hidden_dim))

    z1 = z @ p["W1"].T + p["b1"]
    h1 = _leaky(z1, slope) * mask1
    z2 = h1 @ p["W2"].T + p["b2"]
    h2 = _leaky(z2, slope) * mask2
    raw = h2 @ p["W3"].T + p["b3"]

    norms = np.linalg.norm(raw, axis=1)
    fallback = norms < 1e-12
    safe = np.where(fallback, 1.0, norms)
    u = raw / safe[:, None]
    u[fallback] = np.array([1.0, 0.0, 0.0, 0.0])
    sign = np.where(u[:, 0] < 0.0, -1.0, 1.0)
    q_hat = u * sign[:, None]

    cache = {
        "xs": xs, "xg": xg, "ze_s": ze_s, "ze_g": ze_g, "z": z,
        "z1": z1, "h1": h1, "mask1": mask1, "z2": z2, "h2": h2, "mask2": mask2,
        "raw": raw, "u": u, "norms": safe, "sign": sign, "fallback": fallback,
    }
    return q_hat, cache


def regressor_forward(
    model: RegressorModel,
    img_s: DepthImage,
    img_g: DepthImage,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[RotationEstimate, dict]:
    """Single-pair prediction. Eval mode is deterministic; train mode applies
    inverted dropout and needs rng. A raw output with vanishing norm falls
    back to the identity and is flagged."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    xs = image_to_input(img_s, model.downsample)[None, :]
    xg = image_to_input(img_g, model.downsample)[None, :]
    q_rows, cache = _forward_batch(model, xs, xg, mode == "train", rng)
    estimate = RotationEstimate(
        q_hat=rotation.UnitQuaternion.from_array(q_rows[0]),
        fallback=bool(cache["fallback"][0]),
    )
    return estimate, cache


def regressor_backward(
    model: RegressorModel,
    cache: dict,
    dq_hat: np.ndarray,
    l2: float = 0.0,
) -> dict[str, np.ndarray]:
    """Parameter gradients for d(loss)/d(q_hat) rows from a matching forward.

    Chains through canonicalization (a sign), the normalization Jacobian
    (I - u u^T) / ||raw||, and the MLP. Adds the 2 * l2 * w regularization
    term to every parameter.
    """
    p = model.params
    slope = model.leaky_slope
    dq = np.atleast_2d(dq_hat)

    du = dq * cache["sign"][:, None]
    u = cache["u"]
    radial = np.einsum("ij,ij->i", du, u)
    draw = (du - radial[:, None] * u) / cache["norms"][:, None]
    draw[cache["fallback"]] = 0.0

    grads = {}
    grads["W3"] = draw.T @ cache["h2"]
    grads["b3"] = draw.sum(axis=0)
    dh2 = draw @ p["W3"]

    dz2 = dh2 * cache["mask2"] * _leaky_grad(cache["z2"], slope)
    grads["W2"] = dz2.T @ cache["h1"]
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ p["W2"]

    dz1 = dh1 * cache["mask1"] * _leaky_grad(cache["z1"], slope)
    grads["W1"] = dz1.T @ cache["z"]
    grads["b1"] = dz1.sum(axis=0)
    dz = dz1 @ p["W1"]

    e = model.embed_dim
    dze_s = dz[:, :e] * _leaky_grad(cache["ze_s"], slope)
    dze_g = dz[:, e:] * _leaky_grad(cache["ze_g"], slope)
    grads["W_enc"] = dze_s.T @ cache["xs"] + dze_g.T @ cache["xg"]
    grads["b_enc"] = dze_s.sum(axis=0) + dze_g.sum(axis=0)

    if l2 != 0.0:
        for name in grads:
            grads[name] = grads[name] + 2.0 * l2 * p[name]
    return grads


def effective_learning_rate(base: float, epoch: int, decay: float = 0.9, every: int = 5) -> float:
    """Step-decayed learning rate: base * decay^(epoch // every)."""
    return base * decay ** (epoch // every)


def adam_step(
    model: RegressorModel,
    state: AdamState,
    grads: dict[str, np.ndarray],
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        model.params[name] -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _record_inputs(records, downsample: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs = np.stack([image_to_input(r.start_image, downsample) for r in records])
    xg = np.stack([image_to_input(r.goal_image, downsample) for r in records])
    qs = np.stack([r.relative_rotation.as_array() for r in records])
    return xs, xg, qs


def _mean_angle_deg(model: RegressorModel, xs, xg, qs) -> float:
    q_rows, _ = _forward_batch(model, xs, xg, train_mode=False, rng=None)
    dots = np.clip(np.abs(np.einsum("ij,ij->i", q_rows, qs)), -1.0, 1.0)
    return float(np.degrees(2.0 * np.arccos(dots)).mean())


def train(
    model: RegressorModel,
    train_records: list,
    val_records: list,
    point_clouds: dict[str, PointCloud],
    cfg: TrainConfig,
    loss: str = "hybrid",
) -> tuple[RegressorModel, list[EpochMetrics]]:
    """Seeded epoch loop with shuffled mini-batches and Adam updates.

    loss selects the optimized objective: "surrogate" (stable angle form),
    "shapematch", or "hybrid" (surrogate for epoch 0, then shapematch).
    ShapeMatch epochs need a vertex cloud per object id in point_clouds.
    Validation reports the mean rotation angle error in degrees.
    """
    if loss not in ("surrogate", "shapematch", "hybrid"):
        raise ValueError(f"unknown loss {loss!r}")
    if not train_records:
        raise ValueError("training set is empty")
    if loss in ("shapematch", "hybrid"):
        missing = {r.object_id for r in train_records} - set(point_clouds)
        if missing:
            raise ValueError(f"no vertex cloud for objects: {sorted(missing)}")

    xs, xg, qs = _record_inputs(train_records, model.downsample)
    object_ids = [r.object_id for r in train_records]
    quats = [r.relative_rotation for r in train_records]
    if val_records:
        vxs, vxg, vqs = _record_inputs(val_records, model.downsample)

    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    metrics: list[EpochMetrics] = []
    n = len(train_records)

    for epoch in range(cfg.epochs):
        lr = effective_learning_rate(cfg.learning_rate, epoch, cfg.lr_decay, cfg.decay_every)
        perm = rng.permutation(n)
        epoch_loss = 0.0

        for start in range(0, n, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            q_rows, cache = _forward_batch(model, xs[batch], xg[batch], True, rng)

            dq = np.zeros((len(batch), 4))
            batch_loss = 0.0
            for row, idx in enumerate(batch):
                q_hat = rotation.UnitQuaternion.from_array(q_rows[row])
                q_true = quats[idx]
                if loss == "surrogate":
                    result = surrogate_loss(q_true, q_hat)
                elif loss == "shapematch":
                    result = shapematch_loss(q_true, q_hat, point_clouds[object_ids[idx]])
                else:
                    result = hybrid_loss(q_true, q_hat, point_clouds[object_ids[idx]], epoch)
                batch_loss += result.value
                dq[row] = result.gradient
            dq /= len(batch)

            grads = regressor_backward(model, cache, dq, cfg.l2)
            adam_step(model, state, grads, lr, cfg)
            epoch_loss += batch_loss

        val_err = _mean_angle_deg(model, vxs, vxg, vqs) if val_records else float("nan")
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                learning_rate=lr,
                train_loss=epoch_loss / n,
                val_mean_angle_deg=val_err,
            )
        )
    return model, metrics


class RegressorEstimator:
    """Image-interface adapter: deterministic eval-mode prediction."""

    def __init__(self, model: RegressorModel):
        self.model = model

    def __call__(self, img_s: DepthImage, img_g: DepthImage) -> RotationEstimate:
        estimate, _ = regressor_forward(self.model, img_s, img_g, mode="eval")
        return estimate


def save_model(model: RegressorModel, path) -> None:
    """Binary model file: magic, JSON architecture header with a shape table,
    then raw little-endian float64 parameter data in a fixed order."""
    header = {
        "version": 1,
        "input_pixels": model.input_pixels,
        "embed_dim": model.embed_dim,
        "hidden_dim": model.hidden_dim,
        "downsample": model.downsample,
        "leaky_slope": model.leaky_slope,
        "dropout_rate": model.dropout_rate,
        "shapes": {name: list(model.params[name].shape) for name in PARAM_ORDER},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_model(path) -> RegressorModel:
    """Bit-exact inverse of save_model; validates magic, shapes, and length."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise OSError(f"{path}: not a regressor model file")
    header_len = struct.unpack("<I", data[len(MAGIC) : len(MAGIC) + 4])[0]
    header_end = len(MAGIC) + 4 + header_len
    if len(data) < header_end:
        raise OSError(f"{path}: truncated header")
    header = json.loads(data[len(MAGIC) + 4 : header_end].decode("utf-8"))

    model = RegressorModel(
        input_pixels=header["input_pixels"],
        embed_dim=header["embed_dim"],
        hidden_dim=header["hidden_dim"],
        downsample=header["downsample"],
        leaky_slope=header["leaky_slope"],
        dropout_rate=header["dropout_rate"],
        params={},
    )
    expected = model.expected_shapes()
    offset = header_end
    for name in PARAM_ORDER:
        shape = tuple(header["shapes"][name])
        if shape != expected[name]:
            raise ShapeMismatchError(
                f"{path}: parameter {name} has shape {shape}, expected {expected[name]}"
            )
        count = int(np.prod(shape))
        nbytes = count * 8
        if len(data) < offset + nbytes:
            raise OSError(f"{path}: truncated parameter data for {name}")
        model.params[name] = (
            np.frombuffer(data[offset : offset + nbytes], dtype="<f8")
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(data):
        raise OSError(f"{path}: trailing bytes after parameter data")
    return model
