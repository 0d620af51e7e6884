"""Labelled radiograph collections: ingestion, splits, class weights, synthesis."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .imaging import GrayImage, ImageError, read_image, write_image

logger = logging.getLogger(__name__)

N_GRADES = 5
IMAGE_SUFFIXES = (".png", ".pgm")


class DatasetError(ValueError):
    """Raised for malformed dataset layouts or infeasible splits."""


class RawSample(NamedTuple):
    image: GrayImage
    grade: int
    source_id: str


@dataclass(frozen=True, eq=False)
class LabeledSample:
    tensor: np.ndarray
    grade: int
    source_id: str

    def __post_init__(self):
        if self.grade not in range(N_GRADES):
            raise DatasetError(f"KL grade must be in 0..4, got {self.grade}")

    @property
    def binary_label(self) -> int:
        return remap_binary(self.grade)


@dataclass
class SplitSet:
    train: list
    val: list
    test: list
    seed: int
    ratios: tuple = (0.7, 0.15, 0.15)

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


@dataclass(frozen=True, eq=False)
class ClassWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1 or np.any(~np.isfinite(w)) or np.any(w < 0):
            raise DatasetError(f"class weights must be a vector of non-negative reals, got {w}")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassWeights":
        return cls(np.ones(n_classes))


def remap_binary(grade: int) -> int:
    """Collapse KL grades to detection labels: {0, 1} -> 0, {2, 3, 4} -> 1."""
    if isinstance(grade, (bool, np.bool_)) or int(grade) != grade or not 0 <= grade < N_GRADES:
        raise DatasetError(f"KL grade must be an integer in 0..4, got {grade!r}")
    return int(grade >= 2)


def class_weights(labels, n_classes: int) -> ClassWeights:
    """Inverse-frequency weights ``N / (n_classes * count_c)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DatasetError(f"labels must lie in 0..{n_classes - 1}")
    counts = np.bincount(labels, minlength=n_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise DatasetError(f"class weight undefined: classes {missing.tolist()} have no samples")
    return ClassWeights(labels.size / (n_classes * counts.astype(np.float64)))


def ingest(root, n_classes: int = N_GRADES) -> list[RawSample]:
    """Read ``root/<grade>/*.png|*.pgm`` into (image, grade, source_id) triples.

    Unreadable files are skipped with a warning.  Subdirectories whose name
    is not a grade in ``0..n_classes-1`` are rejected.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"data root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise DatasetError(f"no classes found under {root}")
    for d in class_dirs:
        if not d.name.isdigit() or int(d.name) >= n_classes:
            raise DatasetError(f"unknown class directory {d} (expected 0..{n_classes - 1})")

    samples = []
    skipped = 0
    for d in sorted(class_dirs, key=lambda p: int(p.name)):
        grade = int(d.name)
        for f in sorted(d.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                img = read_image(f)
            except (OSError, ImageError, ValueError) as exc:
                logger.warning("skipping unreadable image %s: %s", f, exc)
                skipped += 1
                continue
            samples.append(RawSample(img, grade, f"{d.name}/{f.name}"))
    counts = Counter(s.grade for s in samples)
    logger.info(
        "ingested %d images from %s, per class %s, skipped %d",
        len(samples), root, [counts.get(c, 0) for c in range(n_classes)], skipped,
    )
    return samples


def class_histogram(grades, n_classes: int = N_GRADES) -> list[int]:
    return np.bincount(np.asarray(grades, dtype=np.int64), minlength=n_classes).tolist()


def stratified_split(samples: Sequence, ratios=(0.7, 0.15, 0.15), seed: int = 0,
                     label=lambda s: s.grade) -> SplitSet:
    """Shuffle each class under ``seed`` and cut it proportionally into train/val/test.

    Within a split, samples keep their input order.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must be three non-negative reals summing to 1, got {ratios}")
    if ratios[0] <= 0:
        raise DatasetError("the train ratio must be positive")
    ids = [s.source_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError("source_id values must be unique")

    labels = np.array([label(s) for s in samples], dtype=np.int64)
    rng = np.random.default_rng(seed)
    assign = np.empty(len(samples), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 3:
            raise DatasetError(f"class {c} has {idx.size} samples; at least 3 are required")
        idx = idx[rng.permutation(idx.size)]
        n = idx.size
        n_train = min(n, int(np.floor(ratios[0] * n + 0.5)))
        n_val = min(n - n_train, int(np.floor(ratios[1] * n + 0.5)))
        if ratios[2] == 0.0:
            n_val = n - n_train
        assign[idx[:n_train]] = 0
        assign[idx[n_train:n_train + n_val]] = 1
        assign[idx[n_train + n_val:]] = 2

    parts = [[s for s, a in zip(samples, assign) if a == k] for k in range(3)]
    if not parts[2]:
        logger.warning("stratified split produced an empty test set (ratios %s)", ratios)
    if not parts[1]:
        logger.warning("stratified split produced an empty validation set (ratios %s)", ratios)
    return SplitSet(parts[0], parts[1], parts[2], seed=seed, ratios=ratios)


def write_manifest(splits: SplitSet, path) -> None:
    """Persist ``(source_id, grade, split)`` rows as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "grade", "split"])
        for name, part in splits.items():
            for s in part:
                w.writerow([s.source_id, int(s.grade), name])


def read_manifest(path) -> dict[str, tuple[int, str]]:
    with open(path, newline="") as fh:
        return {r["source_id"]: (int(r["grade"]), r["split"]) for r in csv.DictReader(fh)}


def apply_manifest(samples: Sequence, manifest: dict, seed: int = 0) -> SplitSet:
    """Rebuild a :class:`SplitSet` from a persisted manifest."""
    parts = {"train": [], "val": [], "test": []}
    for s in samples:
        if s.source_id not in manifest:
            continue
        grade, split = manifest[s.source_id]
        if grade != s.grade:
            raise DatasetError(f"{s.source_id}: manifest grade {grade} != directory grade {s.grade}")
        parts[split].append(s)
    missing = set(manifest) - {s.source_id for s in samples}
    if missing:
        raise DatasetError(f"{len(missing)} manifest entries not found in data, e.g. {sorted(missing)[0]}")
    return SplitSet(parts["train"], parts["val"], parts["test"], seed=seed, ratios=())


# Gap widths as a fraction of image height, grade 0 (healthy) to 4 (severe).
_GAP_FRACTION = (0.22, 0.17, 0.12, 0.08, 0.04)


# Per-grade sample counts shaped like the OAI class distribution (8.7:1 imbalance).
DEFAULT_SYNTH_COUNTS = (130, 60, 90, 45, 15)


def synthesize(counts=DEFAULT_SYNTH_COUNTS, width: int = 32, height: int = 32, seed: int = 0,
               gap_jitter: int = 1) -> list[RawSample]:
    """Draw knee-like images whose inter-band gap narrows with KL grade.

    Two bright horizontal bands (femur, tibia) are separated by a dark gap.
    Noise grows with grade, and grades 3-4 get bright speckles next to the
    gap.  Output is deterministic under ``seed``.
    """
    counts = [int(c) for c in counts]
    if len(counts) != N_GRADES or any(c < 0 for c in counts):
        raise DatasetError(f"expected 5 non-negative class counts, got {counts}")
    if width < 32 or height < 32:
        raise DatasetError(f"synthetic images must be at least 32x32, got {width}x{height}")
    rng = np.random.default_rng(seed)
    out = []
    rows = np.arange(height)[:, None]
    for grade, n in enumerate(counts):
        for i in range(n):
            gap = int(round(_GAP_FRACTION[grade] * height)) + int(rng.integers(-gap_jitter, gap_jitter + 1))
            gap = max(1, gap)
            centre = height // 2 + int(rng.integers(-2, 3))
            g0 = centre - gap // 2
            g1 = g0 + gap
            top = int(0.1 * height) + int(rng.integers(0, 3))
            bottom = height - int(0.1 * height) - int(rng.integers(0, 3))
            bone = rng.uniform(170, 215)
            background = rng.uniform(25, 55)
            band = ((rows >= top) & (rows < g0)) | ((rows >= g1) & (rows < bottom))
            img = np.where(band, bone, background) * np.ones((1, width))
            # shading across the joint so the bands are not perfectly flat
            img += rng.uniform(-12, 12) * np.linspace(-1, 1, width)[None, :]
            img += rng.normal(0.0, 6.0 + 4.0 * grade, size=(height, width))
            if grade >= 3:
                for _ in range(3 * (grade - 2)):
                    y = g0 - 1 if rng.random() < 0.5 else g1
                    x = int(rng.integers(1, width - 1))
                    y = min(max(y, 0), height - 1)
                    img[y, x - 1:x + 2] = 255.0
            px = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
            out.append(RawSample(GrayImage(px), grade, f"{grade}/synth_{grade}_{i:05d}.png"))
    return out


def write_dataset(samples: Sequence[RawSample], root) -> None:
    """Write samples under ``root/<grade>/`` using their source ids as paths."""
    root = Path(root)
    for s in samples:
        path = root / s.source_id
        path.parent.mkdir(parents=True, exist_ok=True)
        write_image(s.image, path)
