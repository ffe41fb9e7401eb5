"""Synthetic training-set generation: paired depth images with known rotations.

Each record holds a start image, goal image, and the constrained relative
rotation between them. Records are seeded individually from
(global seed, object id, index) so parallel generation matches serial runs
byte for byte. Layout on disk: one directory per object with paired
`{i}_s.pgm` / `{i}_g.pgm` files and a JSONL manifest whose first line is a
header carrying the count, seed, and config snapshot.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rotation
from .mesh import TriangleMesh
from .render import (
    CameraModel,
    DepthImage,
    RandomizationConfig,
    dropout_pixels,
    load_depth_image,
    occlude_rectangle,
    render_depth,
    save_depth_image,
)
from .rotation import UnitQuaternion

__all__ = [
    "ConstraintViolationError",
    "DatasetManifest",
    "DatasetRecord",
    "GenerationConfig",
    "TooFewObjectsError",
    "generate_dataset",
    "generate_record",
    "read_dataset",
    "read_manifest",
    "split_train_test",
]

MANIFEST_NAME = "manifest.jsonl"


class ConstraintViolationError(ValueError):
    """A stored quaternion fails the dataset sampling constraints."""


class TooFewObjectsError(ValueError):
    """Object-level split would leave one side empty."""


@dataclass(frozen=True)
class GenerationConfig:
    width: int = 128
    height: int = 128
    camera: CameraModel = field(default_factory=CameraModel)
    max_angle: float = math.pi / 6
    randomize: bool = True
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)

    def to_flat_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "camera.half_extent": self.camera.half_extent,
            "camera.near": self.camera.near,
            "camera.far": self.camera.far,
            "max_angle": self.max_angle,
            "randomize": self.randomize,
            "rect_length_min": self.randomization.rect_length[0],
            "rect_length_max": self.randomization.rect_length[1],
            "rect_thickness_min": self.randomization.rect_thickness[0],
            "rect_thickness_max": self.randomization.rect_thickness[1],
            "dropout_p": self.randomization.dropout_p,
        }


@dataclass(frozen=True)
class DatasetRecord:
    """One training tuple: images, their relative rotation, and provenance."""

    start_image: DepthImage
    goal_image: DepthImage
    relative_rotation: UnitQuaternion
    object_id: str
    start_orientation: UnitQuaternion


@dataclass(frozen=True)
class ManifestEntry:
    object_id: str
    start_path: str  # relative to the manifest directory
    goal_path: str
    relative_rotation: UnitQuaternion
    start_orientation: UnitQuaternion


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    seed: int
    config: dict
    entries: list[ManifestEntry]


def generate_record(
    mesh: TriangleMesh,
    rng: np.random.Generator,
    cfg: GenerationConfig,
    object_id: str = "",
) -> DatasetRecord:
    """Sample one (start image, goal image, rotation) tuple.

    The start orientation is uniform over SO(3); the relative rotation is
    constrained to at most cfg.max_angle. Occlusion and dropout apply to the
    start image only (the gripper occludes the held object; goals stay clean).
    """
    start_q = rotation.sample_uniform_so3(rng)
    rel_q = rotation.sample_constrained(rng, cfg.max_angle)
    goal_q = rotation.multiply(rel_q, start_q)

    start_img = render_depth(mesh, start_q, cfg.camera, cfg.width, cfg.height)
    goal_img = render_depth(mesh, goal_q, cfg.camera, cfg.width, cfg.height)
    if cfg.randomize:
        start_img = occlude_rectangle(start_img, rng, cfg.randomization)
        start_img = dropout_pixels(start_img, cfg.randomization.dropout_p, rng)

    return DatasetRecord(
        start_image=start_img,
        goal_image=goal_img,
        relative_rotation=rel_q,
        object_id=object_id,
        start_orientation=start_q,
    )


def record_seed(global_seed: int, object_id: str, index: int) -> np.random.SeedSequence:
    """Stable per-record seed; makes generation order-independent."""
    digest = hashlib.sha256(object_id.encode("utf-8")).digest()
    return np.random.SeedSequence(
        [global_seed, int.from_bytes(digest[:8], "little"), index]
    )


def _worker_count() -> int:
    cap = int(os.environ.get("REORIENT_THREADS", "1"))
    return max(1, min(cap, os.cpu_count() or 1))


def generate_dataset(
    meshes: list[tuple[str, TriangleMesh]],
    per_object: int,
    seed: int,
    cfg: GenerationConfig,
    out_dir,
) -> DatasetManifest:
    """Generate per_object records for every mesh and persist them under out_dir.

    Deterministic for a fixed seed regardless of REORIENT_THREADS.
    """
    if per_object < 1:
        raise ValueError("per_object must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [
        (object_id, mesh, i)
        for object_id, mesh in meshes
        for i in range(per_object)
    ]

    def build(job):
        object_id, mesh, i = job
        rng = np.random.default_rng(record_seed(seed, object_id, i))
        return generate_record(mesh, rng, cfg, object_id)

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(build, jobs))
    else:
        records = [build(job) for job in jobs]

    entries = []
    for (object_id, _, i), record in zip(jobs, records):
        obj_dir = out_dir / object_id
        obj_dir.mkdir(exist_ok=True)
        start_rel = f"{object_id}/{i}_s.pgm"
        goal_rel = f"{object_id}/{i}_g.pgm"
        save_depth_image(record.start_image, cfg.camera, out_dir / start_rel)
        save_depth_image(record.goal_image, cfg.camera, out_dir / goal_rel)
        entries.append(
            ManifestEntry(
                object_id=object_id,
                start_path=start_rel,
                goal_path=goal_rel,
                relative_rotation=record.relative_rotation,
                start_orientation=record.start_orientation,
            )
        )

    manifest = DatasetManifest(root=out_dir, seed=seed, config=cfg.to_flat_dict(), entries=entries)
    _write_manifest(manifest)
    return manifest


def _quat_list(q: UnitQuaternion) -> list[float]:
    return [q.qr, q.qi, q.qj, q.qk]


def _write_manifest(manifest: DatasetManifest) -> None:
    lines = [
        json.dumps(
            {
                "kind": "reorient-dataset",
                "count": len(manifest.entries),
                "seed": manifest.seed,
                "config": manifest.config,
            },
            sort_keys=True,
        )
    ]
    for e in manifest.entries:
        lines.append(
            json.dumps(
                {
                    "object_id": e.object_id,
                    "start": e.start_path,
                    "goal": e.goal_path,
                    "quaternion": _quat_list(e.relative_rotation),
                    "start_orientation": _quat_list(e.start_orientation),
                },
                sort_keys=True,
            )
        )
    (manifest.root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")

    config_lines = [f"{k}={v}" for k, v in sorted(manifest.config.items())]
    config_lines.append(f"seed={manifest.seed}")
    (manifest.root / "config.txt").write_text("\n".join(config_lines) + "\n")


def read_manifest(manifest_path) -> DatasetManifest:
    """Load the manifest header and entry list (no image data)."""
    manifest_path = Path(manifest_path)
    lines = manifest_path.read_text().splitlines()
    if not lines:
        raise OSError(f"{manifest_path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("kind") != "reorient-dataset":
        raise OSError(f"{manifest_path}: not a dataset manifest")
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        entries.append(
            ManifestEntry(
                object_id=rec["object_id"],
                start_path=rec["start"],
                goal_path=rec["goal"],
                relative_rotation=UnitQuaternion.from_array(rec["quaternion"]),
                start_orientation=UnitQuaternion.from_array(rec["start_orientation"]),
            )
        )
    if len(entries) != header["count"]:
        raise OSError(
            f"{manifest_path}: header count {header['count']} != {len(entries)} entries"
        )
    return DatasetManifest(
        root=manifest_path.parent,
        seed=header["seed"],
        config=header["config"],
        entries=entries,
    )


def read_dataset(manifest_path) -> list[DatasetRecord]:
    """Load all records referenced by a manifest, re-validating invariants."""
    manifest = read_manifest(manifest_path)
    max_angle = float(manifest.config.get("max_angle", math.pi / 6))
    records = []
    for e in manifest.entries:
        q = e.relative_rotation
        if not rotation.satisfies_constraints(q, max_angle):
            raise ConstraintViolationError(
                f"{e.object_id}: stored quaternion {q} violates sampling constraints"
            )
        start_file = manifest.root / e.start_path
        goal_file = manifest.root / e.goal_path
        if not start_file.exists() or not goal_file.exists():
            raise OSError(f"missing image file for record {e.object_id}/{e.start_path}")
        start_img, _ = load_depth_image(start_file)
        goal_img, _ = load_depth_image(goal_file)
        records.append(
            DatasetRecord(
                start_image=start_img,
                goal_image=goal_img,
                relative_rotation=q,
                object_id=e.object_id,
                start_orientation=e.start_orientation,
            )
        )
    return records


def split_train_test(
    object_ids: list, train_fraction: float, rng: np.random.Generator
) -> tuple[list, list]:
    """Disjoint object-level split: floor(n * fraction) train, remainder test."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(object_ids)
    n_train = int(n * train_fraction)
    if n_train < 1 or n - n_train < 1:
        raise TooFewObjectsError(
            f"cannot split {n} objects into non-empty sets at fraction {train_fraction}"
        )
    perm = rng.permutation(n)
    train = [object_ids[i] for i in perm[:n_train]]
    test = [object_ids[i] for i in perm[n_train:]]
    return train, test
