"""Command line surface: dataset generation, filtering, training, evaluation.

Every command writes a resolved-config snapshot next to its outputs, is
deterministic under a fixed --seed, and exits 0 only when all outputs were
written. Usage errors exit 2; runtime and I/O failures exit 1. Report
commands emit CSV/JSON plus matplotlib figures rendered from the same data.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import rotation
from .controller import ControllerConfig, evaluate_controller
from .dataset import (
    GenerationConfig,
    generate_dataset,
    read_dataset,
    read_manifest,
)
from .estimators import IcpConfig, IcpEstimator, OracleEstimator, oracle_predict
from .losses import shapematch_loss
from .mesh import load_obj, sample_vertices, symmetry_score
from .regressor import (
    RegressorEstimator,
    TrainConfig,
    init_regressor,
    load_model,
    save_model,
    train,
)
from .render import CameraModel, RandomizationConfig, render_depth, save_depth_image

__all__ = ["main"]


class UsageError(Exception):
    """Bad argument values; maps to exit code 2."""


def _load_meshes(mesh_dir) -> list[tuple[str, object]]:
    mesh_dir = Path(mesh_dir)
    if not mesh_dir.exists():
        raise OSError(f"mesh directory not found: {mesh_dir}")
    paths = sorted(mesh_dir.glob("*.obj"))
    if not paths:
        raise UsageError(f"no .obj meshes in {mesh_dir}")
    return [(p.stem, load_obj(p)) for p in paths]


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_snapshot(args: argparse.Namespace, target) -> None:
    """Resolved key=value snapshot next to the outputs."""
    skip = {"func", "config", "command"}
    pairs = {k: v for k, v in vars(args).items() if k not in skip and not callable(v)}
    target = Path(target)
    path = target / "resolved_config.txt" if target.is_dir() else Path(str(target) + ".config.txt")
    lines = [f"{k}={v}" for k, v in sorted(pairs.items())]
    path.write_text("\n".join(lines) + "\n")


def _camera_from_manifest(config: dict) -> CameraModel:
    return CameraModel(
        half_extent=float(config["camera.half_extent"]),
        near=float(config["camera.near"]),
        far=float(config["camera.far"]),
    )


def _quat_csv(q) -> list[float]:
    return [q.qr, q.qi, q.qj, q.qk]


# ---------------------------------------------------------------- commands


def cmd_gen_dataset(args) -> int:
    if args.per_object < 1:
        raise UsageError("--per-object must be >= 1")
    if args.max_angle_deg <= 0 or args.max_angle_deg > 30.0:
        raise UsageError("--max-angle-deg must be in (0, 30]")
    meshes = _load_meshes(args.meshes)
    out = Path(args.out)
    cfg = GenerationConfig(
        width=args.image_size,
        height=args.image_size,
        max_angle=math.radians(args.max_angle_deg),
        randomize=not args.no_randomize,
        randomization=RandomizationConfig(
            rect_length=(args.rect_length_min, args.rect_length_max),
            rect_thickness=(args.rect_thickness_min, args.rect_thickness_max),
            dropout_p=args.dropout_p,
        ),
    )
    manifest = generate_dataset(meshes, args.per_object, args.seed, cfg, out)
    _write_snapshot(args, out)
    print(f"wrote {len(manifest.entries)} records to {out / 'manifest.jsonl'}")
    return 0


def cmd_symmetry_filter(args) -> int:
    meshes = _load_meshes(args.meshes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for object_id, mesh in meshes:
        score = symmetry_score(mesh)
        rows.append([object_id, f"{score:.12g}", int(score < args.threshold)])
    _write_csv(out, ["object_id", "score", "flagged"], rows)
    _write_snapshot(args, out)
    flagged = sum(int(r[2]) for r in rows)
    print(f"scored {len(rows)} meshes, flagged {flagged} as symmetric -> {out}")
    return 0


def cmd_train(args) -> int:
    if not 0.0 < args.val_fraction < 1.0:
        raise UsageError("--val-fraction must be in (0, 1)")
    records = read_dataset(args.dataset)
    if not records:
        raise UsageError("dataset is empty")

    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(records))
    n_val = max(1, int(len(records) * args.val_fraction))
    val_records = [records[i] for i in perm[:n_val]]
    train_records = [records[i] for i in perm[n_val:]]

    img = records[0].start_image
    if args.downsample == "auto":
        downsample = max(1, img.width // 32)
    else:
        downsample = int(args.downsample)
    if img.width % downsample or img.height % downsample:
        raise UsageError(f"downsample {downsample} does not divide {img.width}x{img.height}")
    input_pixels = (img.width // downsample) * (img.height // downsample)

    loss = {"mean": "surrogate", "shapematch": "shapematch", "hybrid": "hybrid"}[args.loss]
    clouds = {}
    if loss in ("shapematch", "hybrid"):
        if not args.meshes:
            raise UsageError(f"--loss {args.loss} needs --meshes for vertex clouds")
        cloud_rng = np.random.default_rng(args.seed)
        for object_id, mesh in _load_meshes(args.meshes):
            clouds[object_id] = sample_vertices(mesh, args.vertex_cap, cloud_rng)

    model = init_regressor(
        input_pixels=input_pixels,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        downsample=downsample,
        seed=args.seed,
    )
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        l2=args.l2,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    model, metrics = train(model, train_records, val_records, clouds, cfg, loss=loss)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.bin")
    _write_csv(
        out / "metrics.csv",
        ["epoch", "lr", "train_loss", "val_mean_angle_deg"],
        [[m.epoch, f"{m.learning_rate:.8g}", f"{m.train_loss:.8g}", f"{m.val_mean_angle_deg:.6g}"]
         for m in metrics],
    )
    from .plots import plot_training_curves

    plot_training_curves(metrics, out / "training_curves.png")
    _write_snapshot(args, out)
    print(
        f"trained {args.epochs} epochs (loss={args.loss}); "
        f"final val mean angle error {metrics[-1].val_mean_angle_deg:.3f} deg; "
        f"model -> {out / 'model.bin'}"
    )
    return 0


def cmd_eval_estimator(args) -> int:
    manifest = read_manifest(args.dataset)
    records = read_dataset(args.dataset)
    camera = _camera_from_manifest(manifest.config)
    rng = np.random.default_rng(args.seed)

    if args.estimator == "icp":
        icp = IcpEstimator(camera, IcpConfig(max_iter=args.icp_max_iter, tol=args.icp_tol))
        predict = lambda rec: icp(rec.start_image, rec.goal_image)
    elif args.estimator == "regressor":
        if not args.model:
            raise UsageError("--estimator regressor needs --model")
        reg = RegressorEstimator(load_model(args.model))
        predict = lambda rec: reg(rec.start_image, rec.goal_image)
    else:
        predict = lambda rec: oracle_predict(rec.relative_rotation, args.noise_ratio, rng)

    clouds = {}
    if args.meshes:
        cloud_rng = np.random.default_rng(args.seed)
        for object_id, mesh in _load_meshes(args.meshes):
            clouds[object_id] = sample_vertices(mesh, args.vertex_cap, cloud_rng)

    rows = []
    true_angles = []
    errors = []
    sm_losses = []
    for rec in records:
        estimate = predict(rec)
        q_true = rotation.canonicalize(rec.relative_rotation)
        true_deg = math.degrees(rotation.quat_to_angle(q_true))
        err_deg = math.degrees(rotation.angle_between(estimate.q_hat, q_true))
        row = [rec.object_id, f"{true_deg:.6f}", f"{err_deg:.6f}", f"{true_deg:.6f}"]
        if clouds:
            sm = shapematch_loss(q_true, estimate.q_hat, clouds[rec.object_id]).value
            row.append(f"{sm:.8g}")
            sm_losses.append(sm)
        rows.append(row)
        true_angles.append(true_deg)
        errors.append(err_deg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["object_id", "true_angle_deg", "err_deg", "identity_err_deg"]
    if clouds:
        header.append("shapematch_loss")
    _write_csv(out / "per_sample.csv", header, rows)

    true_angles = np.array(true_angles)
    errors = np.array(errors)
    edges = np.arange(0.0, 30.0 + args.bin_width_deg, args.bin_width_deg)
    bin_rows = []
    bin_means = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (true_angles >= lo) & (true_angles < hi)
        mean_err = float(errors[mask].mean()) if mask.any() else float("nan")
        bin_means.append(mean_err)
        bin_rows.append([f"{lo:g}", f"{hi:g}", int(mask.sum()), f"{mean_err:.6f}"])
    _write_csv(out / "binned.csv", ["bin_lo_deg", "bin_hi_deg", "count", "mean_err_deg"], bin_rows)

    from .plots import plot_error_vs_angle

    plot_error_vs_angle(true_angles, errors, edges, np.array(bin_means),
                        out / "error_vs_angle.png")
    _write_snapshot(args, out)
    print(
        f"evaluated {args.estimator} on {len(records)} records: "
        f"mean err {errors.mean():.3f} deg (identity baseline {true_angles.mean():.3f} deg)"
    )
    return 0


def cmd_run_controller(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    try:
        cfg = ControllerConfig(
            max_iterations=args.max_iter,
            eta=args.eta,
            delta_deg=args.delta,
            composition=args.composition,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    meshes = _load_meshes(args.meshes)
    camera = CameraModel()
    rng = np.random.default_rng(args.seed)

    if args.estimator == "icp":
        icp_cfg = IcpConfig(max_iter=args.icp_max_iter, tol=args.icp_tol)
        factory = lambda env: IcpEstimator(camera, icp_cfg)
    elif args.estimator == "regressor":
        if not args.model:
            raise UsageError("--estimator regressor needs --model")
        reg = RegressorEstimator(load_model(args.model))
        factory = lambda env: reg
    else:
        factory = lambda env: OracleEstimator(env.true_relative_rotation, args.noise_ratio, rng)

    result = evaluate_controller(
        meshes,
        factory,
        args.trials,
        rng,
        cfg,
        camera=camera,
        width=args.image_size,
        height=args.image_size,
        initial_angle_deg=args.initial_angle_deg,
    )

    out = Path(args.out)
    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "trials.csv",
        ["object_id", "trial", "final_err_deg", "converged", "steps"],
        [[t.object_id, t.trial, f"{t.final_err_deg:.6f}", int(t.converged), t.steps]
         for t in result.trials],
    )
    for i, trace in enumerate(result.traces):
        _write_csv(
            traces_dir / f"trial_{i:04d}.csv",
            ["k", "qr", "qi", "qj", "qk", "pred_angle_deg", "true_err_deg"],
            [[row.k, *(f"{c:.12g}" for c in _quat_csv(row.orientation)),
              f"{row.pred_angle_deg:.6f}", f"{row.true_err_deg:.6f}"]
             for row in trace.rows],
        )

    summary = result.summary()
    summary["config"] = {
        "K": cfg.max_iterations,
        "eta": cfg.eta,
        "delta_deg": cfg.delta_deg,
        "composition": cfg.composition,
        "estimator": args.estimator,
        "noise_ratio": args.noise_ratio,
        "initial_angle_deg": args.initial_angle_deg,
        "seed": args.seed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    from .plots import plot_error_histogram

    plot_error_histogram(result.final_errors(), out / "final_error_hist.png")
    _write_snapshot(args, out)
    print(
        f"{len(result.trials)} trials: median final error "
        f"{summary['median_final_err_deg']:.3f} deg, "
        f"convergence rate {summary['convergence_rate']:.2f} -> {out / 'summary.json'}"
    )
    return 0


def cmd_render(args) -> int:
    raw = np.array(args.quat, dtype=float)
    if np.linalg.norm(raw) < 1e-12:
        raise UsageError("quaternion has (near-)zero norm")
    q = rotation.normalize(raw)

    out = Path(args.out)
    if out.exists() and not args.force:
        raise OSError(f"{out} already exists (use --force to overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)

    mesh = load_obj(args.mesh)
    camera = CameraModel()
    img = render_depth(mesh, q, camera, args.image_size, args.image_size)
    save_depth_image(img, camera, out)
    _write_snapshot(args, out)
    print(f"rendered {args.mesh} at {[round(c, 6) for c in _quat_csv(q)]} -> {out}")
    return 0


# ---------------------------------------------------------------- plumbing


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="reorient",
        description="Depth-image object reorientation pipeline",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    by_name = {}

    def common(sub):
        sub.add_argument("--seed", type=int, default=0, help="global RNG seed")
        sub.add_argument("--config", type=str, default=None,
                         help="key=value config file; explicit flags override it")

    p = subs.add_parser("gen-dataset", help="generate a paired depth-image dataset")
    common(p)
    p.add_argument("--meshes", required=True, help="directory of .obj meshes")
    p.add_argument("--per-object", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--max-angle-deg", type=float, default=30.0)
    p.add_argument("--no-randomize", action="store_true",
                   help="skip occlusion and dropout on start images")
    p.add_argument("--rect-length-min", type=float, default=20.0)
    p.add_argument("--rect-length-max", type=float, default=60.0)
    p.add_argument("--rect-thickness-min", type=float, default=4.0)
    p.add_argument("--rect-thickness-max", type=float, default=10.0)
    p.add_argument("--dropout-p", type=float, default=0.01)
    p.set_defaults(func=cmd_gen_dataset)
    by_name["gen-dataset"] = p

    p = subs.add_parser("symmetry-filter", help="score meshes for rotational symmetry")
    common(p)
    p.add_argument("--meshes", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--threshold", type=float, default=1e-3,
                   help="flag meshes with score strictly below this")
    p.set_defaults(func=cmd_symmetry_filter)
    by_name["symmetry-filter"] = p

    p = subs.add_parser("train", help="train the quaternion regressor")
    common(p)
    p.add_argument("--dataset", required=True, help="manifest.jsonl path")
    p.add_argument("--out", required=True)
    p.add_argument("--meshes", default=None, help="mesh dir (needed for shapematch/hybrid)")
    p.add_argument("--loss", choices=["mean", "shapematch", "hybrid"], default="hybrid")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.002)
    p.add_argument("--l2", type=float, default=1e-9)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--downsample", default="auto",
                   help="input pooling factor, or 'auto' for ~32x32 inputs")
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--vertex-cap", type=int, default=500)
    p.set_defaults(func=cmd_train)
    by_name["train"] = p

    p = subs.add_parser("eval-estimator", help="per-sample estimator error report")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", choices=["oracle", "icp", "regressor"], default="oracle")
    p.add_argument("--model", default=None)
    p.add_argument("--noise-ratio", type=float, default=0.0)
    p.add_argument("--meshes", default=None,
                   help="mesh dir; adds a shapematch_loss column")
    p.add_argument("--vertex-cap", type=int, default=500)
    p.add_argument("--bin-width-deg", type=float, default=5.0)
    p.add_argument("--icp-max-iter", type=int, default=50)
    p.add_argument("--icp-tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_eval_estimator)
    by_name["eval-estimator"] = p

    p = subs.add_parser("run-controller", help="closed-loop reorientation trials")
    common(p)
    p.add_argument("--meshes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", choices=["oracle", "icp", "regressor"], default="oracle")
    p.add_argument("--model", default=None)
    p.add_argument("--noise-ratio", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=20, help="trials per object")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--eta", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.5, help="stop threshold, degrees")
    p.add_argument("--composition", choices=["right", "left"], default="right")
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--initial-angle-deg", type=float, default=30.0)
    p.add_argument("--icp-max-iter", type=int, default=50)
    p.add_argument("--icp-tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_run_controller)
    by_name["run-controller"] = p

    p = subs.add_parser("render", help="render one mesh orientation to PGM")
    common(p)
    p.add_argument("--mesh", required=True, help="single .obj path")
    p.add_argument("--quat", type=float, nargs=4, required=True,
                   metavar=("QR", "QI", "QJ", "QK"))
    p.add_argument("--out", required=True, help="output .pgm path")
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_render)
    by_name["render"] = p

    return parser, by_name


def _find_config_arg(argv: list[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def _apply_config_file(path: str, sub: argparse.ArgumentParser) -> None:
    """Use key=value pairs as subcommand defaults; unknown keys are rejected."""
    actions = {a.dest: a for a in sub._actions}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        dest = key.strip().replace("-", "_")
        if dest in ("config", "command", "func") or dest not in actions:
            raise UsageError(f"{path}:{lineno}: unknown config key {key.strip()!r}")
        action = actions[dest]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            parsed = value.strip().lower() in ("1", "true", "yes", "on")
        elif action.nargs not in (None, "?"):
            parsed = [action.type(v) if action.type else v for v in value.split()]
        elif action.type is not None:
            parsed = action.type(value.strip())
        else:
            parsed = value.strip()
        sub.set_defaults(**{dest: parsed})
        action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, by_name = _build_parser()

    try:
        config_path = _find_config_arg(argv)
        if config_path is not None:
            command = next((a for a in argv if not a.startswith("-")), None)
            if command in by_name:
                _apply_config_file(config_path, by_name[command])
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else 2
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/I-O failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
