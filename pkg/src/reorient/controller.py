"""Closed-loop reorientation controller running against a rendered simulation.

Each iteration captures a depth image of the object at its current
orientation, asks the estimator for the rotation to the goal image, stops if
the predicted angle is below the threshold, and otherwise slerps a fraction
eta of the way toward the composed target.

The composition switch selects how the prediction is applied:
"right" composes current * q_hat (the controller algorithm taken literally),
"left" composes q_hat * current (a world-frame relative rotation, which is
what the estimators in this package produce). With an exact predictor the
left setting realizes exact geometric decay of the angle error; the right
setting deviates by rotation non-commutativity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rotation
from .mesh import TriangleMesh
from .render import (
    CameraModel,
    DepthImage,
    RandomizationConfig,
    dropout_pixels,
    occlude_rectangle,
    render_depth,
)
from .rotation import UnitQuaternion

__all__ = [
    "ControllerConfig",
    "ControllerTrace",
    "EvaluationResult",
    "SimEnvironment",
    "TraceRow",
    "TrialResult",
    "evaluate_controller",
    "run_controller",
]

INITIAL_ANGLE_BOUND_DEG = 30.0  # estimators are only trained/valid below this


@dataclass(frozen=True)
class ControllerConfig:
    max_iterations: int = 100  # K
    eta: float = 0.2
    delta_deg: float = 0.5
    composition: str = "right"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if self.delta_deg <= 0.0:
            raise ValueError("delta_deg must be positive")
        if self.composition not in ("right", "left"):
            raise ValueError("composition must be 'right' or 'left'")


@dataclass
class SimEnvironment:
    """Simulated object state: mesh, pose, camera, and a hidden goal pose.

    The goal orientation is used only for error reporting and by the oracle
    estimator; image-based estimators never see it.
    """

    mesh: TriangleMesh
    camera: CameraModel
    orientation: UnitQuaternion
    goal_orientation: UnitQuaternion
    width: int = 128
    height: int = 128
    randomize_captures: bool = False
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    rng: np.random.Generator | None = None

    def capture(self) -> DepthImage:
        img = render_depth(self.mesh, self.orientation, self.camera, self.width, self.height)
        if self.randomize_captures:
            if self.rng is None:
                raise ValueError("randomized captures need a random source")
            img = occlude_rectangle(img, self.rng, self.randomization)
            img = dropout_pixels(img, self.randomization.dropout_p, self.rng)
        return img

    def render_goal(self) -> DepthImage:
        return render_depth(self.mesh, self.goal_orientation, self.camera, self.width, self.height)

    def true_relative_rotation(self) -> UnitQuaternion:
        """World-frame rotation taking the current orientation to the goal."""
        return rotation.rotation_difference(self.goal_orientation, self.orientation)

    def true_error_deg(self) -> float:
        return math.degrees(rotation.angle_between(self.orientation, self.goal_orientation))


@dataclass(frozen=True)
class TraceRow:
    k: int  # capture index; 0 is the initial state (no prediction yet)
    orientation: UnitQuaternion
    prediction: UnitQuaternion | None
    pred_angle_deg: float  # NaN on the k=0 row
    true_err_deg: float


@dataclass(frozen=True)
class ControllerTrace:
    rows: list[TraceRow]
    status: str  # "converged" | "max_iterations"
    iterations: int  # captures performed
    steps: int  # slerp updates performed (iterations - 1 when converged)
    initial_angle_exceeded: bool  # started beyond the 30-degree assumption

    @property
    def final_true_err_deg(self) -> float:
        return self.rows[-1].true_err_deg

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def run_controller(
    env: SimEnvironment,
    estimator,
    goal_image: DepthImage,
    cfg: ControllerConfig = ControllerConfig(),
) -> ControllerTrace:
    """Drive the environment toward the goal image; returns the full trace.

    The stop rule uses the *predicted* angle, so a broken estimator that
    reports zero rotation stops immediately; true errors are recorded in the
    trace for evaluation only.
    """
    initial_err = env.true_error_deg()
    rows = [
        TraceRow(
            k=0,
            orientation=env.orientation,
            prediction=None,
            pred_angle_deg=float("nan"),
            true_err_deg=initial_err,
        )
    ]
    status = "max_iterations"
    steps = 0
    iterations = 0

    for k in range(1, cfg.max_iterations + 1):
        iterations = k
        image = env.capture()
        estimate = estimator(image, goal_image)
        q_hat = estimate.q_hat
        pred_deg = math.degrees(rotation.quat_to_angle(q_hat))

        if pred_deg <= cfg.delta_deg:
            rows.append(
                TraceRow(k, env.orientation, q_hat, pred_deg, env.true_error_deg())
            )
            status = "converged"
            break

        if cfg.composition == "right":
            target = rotation.multiply(env.orientation, q_hat)
        else:
            target = rotation.multiply(q_hat, env.orientation)
        env.orientation = rotation.slerp(env.orientation, target, cfg.eta)
        steps += 1
        rows.append(TraceRow(k, env.orientation, q_hat, pred_deg, env.true_error_deg()))

    return ControllerTrace(
        rows=rows,
        status=status,
        iterations=iterations,
        steps=steps,
        initial_angle_exceeded=initial_err > INITIAL_ANGLE_BOUND_DEG + 1e-9,
    )


@dataclass(frozen=True)
class TrialResult:
    object_id: str
    trial: int
    final_err_deg: float
    converged: bool
    steps: int


@dataclass(frozen=True)
class EvaluationResult:
    trials: list[TrialResult]
    traces: list[ControllerTrace]

    def final_errors(self) -> np.ndarray:
        return np.array([t.final_err_deg for t in self.trials])

    def summary(self) -> dict:
        errs = self.final_errors()
        return {
            "trials": len(self.trials),
            "median_final_err_deg": float(np.median(errs)),
            "mean_final_err_deg": float(errs.mean()),
            "p90_final_err_deg": float(np.percentile(errs, 90)),
            "convergence_rate": float(np.mean([t.converged for t in self.trials])),
        }


def evaluate_controller(
    meshes: list[tuple[str, TriangleMesh]],
    estimator_factory,
    trials_per_object: int,
    rng: np.random.Generator,
    cfg: ControllerConfig = ControllerConfig(),
    camera: CameraModel | None = None,
    width: int = 128,
    height: int = 128,
    initial_angle_deg: float = 30.0,
) -> EvaluationResult:
    """Run repeated controller trials from random start/goal orientations.

    Per trial the goal orientation is uniform on SO(3) and the start is a
    rotation of initial_angle_deg about a uniformly random axis away from it.
    estimator_factory(env) builds the estimator for each trial, which lets
    the oracle bind to the trial's environment; image-based estimators
    ignore the argument.
    """
    if trials_per_object < 1:
        raise ValueError("trials_per_object must be >= 1")
    camera = camera if camera is not None else CameraModel()
    trials: list[TrialResult] = []
    traces: list[ControllerTrace] = []

    for object_id, mesh in meshes:
        for trial in range(trials_per_object):
            goal_q = rotation.sample_uniform_so3(rng)
            axis = rng.standard_normal(3)
            while np.linalg.norm(axis) < 1e-12:
                axis = rng.standard_normal(3)
            offset = rotation.from_axis_angle(axis, math.radians(initial_angle_deg))
            start_q = rotation.multiply(offset, goal_q)

            env = SimEnvironment(
                mesh=mesh,
                camera=camera,
                orientation=start_q,
                goal_orientation=goal_q,
                width=width,
                height=height,
            )
            goal_image = env.render_goal()
            trace = run_controller(env, estimator_factory(env), goal_image, cfg)
            traces.append(trace)
            trials.append(
                TrialResult(
                    object_id=object_id,
                    trial=trial,
                    final_err_deg=trace.final_true_err_deg,
                    converged=trace.converged,
                    steps=trace.steps,
                )
            )
    return EvaluationResult(trials=trials, traces=traces)
