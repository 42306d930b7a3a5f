"""Image preprocessing, ten-crop over-sampling, manifests and folds.

Images are float arrays ``[H, W, 3]`` with values in [0, 1]. On disk they
are 8-bit RGB PNGs, decoded by dividing by 255.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    CropTooLarge,
    EmptyImage,
    EmptyList,
    LabelOutOfRange,
    LengthMismatch,
    ManifestError,
    TooFewRecords,
)
from .network import ModelParams, Prediction, predict
from .tensor import Rng

AGE_GROUPS = ("0-2", "4-6", "8-13", "15-20", "25-32", "38-43", "48-53", "60+")
GENDERS = ("male", "female")
MANIFEST_HEADER = ("path", "age", "gender", "fold")

CROP_NAMES = ("top_left", "top_right", "bottom_left", "bottom_right", "center")


# -- resizing and cropping ----------------------------------------------------

def _sample_grid(n_in: int, n_out: int):
    """Corner-aligned source coordinates, mirror-symmetric by construction."""
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        i = np.arange(n_out, dtype=np.float64)
        scale = (n_in - 1) / (n_out - 1)
        pos = np.where(2 * i <= n_out - 1, i * scale, (n_in - 1) - (n_out - 1 - i) * scale)
    lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def scale_to(image, size: int) -> np.ndarray:
    """Bilinear resize to ``size x size`` with corner-aligned sampling."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise EmptyImage(f"expected a non-empty [H, W, C] image, got shape {img.shape}")
    if size < 1:
        raise ValueError("size must be >= 1")
    h, w, _ = img.shape
    if (h, w) == (size, size):
        return img.copy()
    img = img.astype(np.float64)
    y0, y1, fy = _sample_grid(h, size)
    x0, x1, fx = _sample_grid(w, size)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(out, 0.0, 1.0)


def _center_crop(img, crop):
    """Center crop; an odd margin is split by averaging the two nearest integer offsets."""
    h, w, _ = img.shape
    ys = sorted({(h - crop) // 2, (h - crop + 1) // 2})
    xs = sorted({(w - crop) // 2, (w - crop + 1) // 2})
    parts = [img[y:y + crop, x:x + crop] for y in ys for x in xs]
    if len(parts) == 1:
        return parts[0].copy()
    acc = parts[0].astype(np.float64)
    for p in parts[1:]:
        acc = acc + p
    return (acc / len(parts)).astype(img.dtype)


def oversample(image, crop: int = 227) -> list[np.ndarray]:
    """Ten crops: four corners and the center, then the horizontal mirror of each."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    if crop > h or crop > w:
        raise CropTooLarge(f"crop {crop} larger than image {h}x{w}")
    crops = [
        img[:crop, :crop],
        img[:crop, w - crop:],
        img[h - crop:, :crop],
        img[h - crop:, w - crop:],
        _center_crop(img, crop),
    ]
    crops = [np.ascontiguousarray(c) for c in crops]
    return crops + [np.ascontiguousarray(c[:, ::-1]) for c in crops]


def scaled_size(input_size: int) -> int:
    """Resize target before cropping; 256 for the standard 227 input."""
    return int(round(input_size * 256 / 227))


def single_crop(image, input_size: int) -> np.ndarray:
    """Resize then take the center crop: the one-view path used for training."""
    return _center_crop(scale_to(image, scaled_size(input_size)), input_size)


# -- averaging and oversampled prediction ------------------------------------

def average_predictions(preds: Sequence[Prediction]) -> Prediction:
    if not preds:
        raise EmptyList("need at least one prediction")
    na, ng = len(preds[0].age_probs), len(preds[0].gender_probs)
    if any(len(p.age_probs) != na or len(p.gender_probs) != ng for p in preds):
        raise LengthMismatch("probability vectors differ in length")
    age = np.zeros(na, dtype=np.float64)
    gender = np.zeros(ng, dtype=np.float64)
    for p in preds:  # fixed order keeps the sum reproducible
        age += p.age_probs
        gender += p.gender_probs
    return Prediction(age / len(preds), gender / len(preds))


def predict_oversampled(params: ModelParams, image, scale: int | None = None) -> Prediction:
    size = params.config.input_size
    scaled = scale_to(image, scale or scaled_size(size))
    return average_predictions([predict(params, c) for c in oversample(scaled, size)])


# -- manifests ----------------------------------------------------------------

@dataclass
class ImageRecord:
    age_class: int
    gender_class: int
    fold: int | None = None
    path: str | None = None
    image: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.age_class < len(AGE_GROUPS):
            raise LabelOutOfRange(f"age class {self.age_class} outside [0, {len(AGE_GROUPS)})")
        if not 0 <= self.gender_class < len(GENDERS):
            raise LabelOutOfRange(f"gender class {self.gender_class} outside [0, {len(GENDERS)})")
        if self.fold is not None and self.fold < 0:
            raise ManifestError(f"fold must be >= 0, got {self.fold}")
        if self.image is not None and (self.image.ndim != 3 or self.image.shape[2] != 3):
            raise ManifestError(f"image must be [H, W, 3], got {self.image.shape}")


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    root: Path | None = None
    age_groups: tuple = AGE_GROUPS
    genders: tuple = GENDERS

    def __post_init__(self):
        if not self.records:
            raise ManifestError("manifest is empty")
        folds = [r.fold for r in self.records]
        if any(f is not None for f in folds):
            if any(f is None for f in folds):
                raise ManifestError("either every record carries a fold or none does")
            if set(folds) != set(range(max(folds) + 1)):
                raise ManifestError(f"fold ids must be contiguous from 0, got {sorted(set(folds))}")

    def __len__(self):
        return len(self.records)

    @property
    def has_folds(self) -> bool:
        return self.records[0].fold is not None

    @property
    def num_folds(self) -> int:
        return max(r.fold for r in self.records) + 1 if self.has_folds else 0

    def load_image(self, index: int) -> np.ndarray:
        rec = self.records[index]
        if rec.image is not None:
            return rec.image
        path = Path(rec.path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return read_image(path)


def read_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def write_image(path, image) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            rel, age, gender, fold = (x.strip() for x in row)
            try:
                records.append(ImageRecord(int(age), int(gender),
                                           int(fold) if fold else None, path=rel))
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return DatasetManifest(records, root=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.path, r.age_class, r.gender_class, "" if r.fold is None else r.fold])


# -- folds --------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: tuple
    validation: tuple
    test: tuple


def kfold_split(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> list[Split]:
    """One ``(train, validation, test)`` split per fold.

    Records with preset folds keep them: fold ``i`` is the test set, fold
    ``(i + 1) % k`` the validation set. Otherwise indices are shuffled with
    ``seed`` and cut into ``k`` near-equal parts.
    """
    n = len(manifest)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise TooFewRecords(f"{n} records cannot form {k} folds")
    if manifest.has_folds:
        if manifest.num_folds != k:
            raise ManifestError(f"manifest has {manifest.num_folds} preset folds, asked for {k}")
        groups = [[] for _ in range(k)]
        for i, r in enumerate(manifest.records):
            groups[r.fold].append(i)
    else:
        order = Rng(seed).permutation(n)
        groups = [sorted(int(i) for i in part) for part in np.array_split(order, k)]
    splits = []
    for i in range(k):
        v = (i + 1) % k
        train = sorted(j for g, grp in enumerate(groups) if g not in (i, v) for j in grp)
        splits.append(Split(tuple(train), tuple(groups[v]), tuple(groups[i])))
    return splits


# -- synthetic data -----------------------------------------------------------

# stripe cycles per 64 pixels, one bucket per age class
SYNTH_CYCLES_PER_64 = (4, 6, 8, 10, 12, 14, 17, 20)
MIN_SYNTH_SIZE = 32


def synth_frequencies(size: int) -> tuple[int, ...]:
    """Integer stripe counts for an image of ``size`` rows (distinct for size >= 32)."""
    return tuple(int(round(c * size / 64)) for c in SYNTH_CYCLES_PER_64)


def synth_image(size: int, age_class: int, gender_class: int, rng: Rng) -> np.ndarray:
    """Horizontal stripes whose count encodes age; a left/right ramp whose sign encodes gender."""
    freq = synth_frequencies(size)[age_class]
    phase = rng.random(()) * 2 * math.pi
    amp = 0.25 + 0.10 * rng.random(())
    slope = 0.10 + 0.10 * rng.random(())
    tint = 0.05 * (2 * rng.random(3) - 1)
    y = np.arange(size)[:, None, None]
    x = np.arange(size)[None, :, None]
    stripes = amp * np.sin(2 * math.pi * freq * y / size + phase)
    sign = 1.0 if gender_class == 1 else -1.0
    ramp = sign * slope * (x / (size - 1) - 0.5)
    img = 0.5 + tint[None, None, :] + stripes + ramp
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_labels_from_pixels(image) -> tuple[int, int]:
    """Recover ``(age, gender)`` from a synthetic image without knowing its seed."""
    img = np.asarray(image, dtype=np.float64)
    size = img.shape[0]
    rows = img.mean(axis=(1, 2))
    spectrum = np.abs(np.fft.rfft(rows - rows.mean()))
    age = int(np.argmax([spectrum[f] for f in synth_frequencies(size)]))
    cols = img.mean(axis=(0, 2))
    half = size // 2
    gender = int(cols[size - half:].mean() > cols[:half].mean())
    return age, gender


def synth_dataset(n: int, size: int = 64, seed: int = 0, folds: int = 5) -> DatasetManifest:
    """``n`` learnable-by-construction images with balanced labels and preset folds."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < MIN_SYNTH_SIZE:
        raise ValueError(f"size must be >= {MIN_SYNTH_SIZE}")
    rng = Rng(seed)
    ages = rng.permutation(np.resize(np.arange(len(AGE_GROUPS)), n))
    genders = rng.permutation(np.resize(np.arange(len(GENDERS)), n))
    fold_ids = rng.permutation(np.resize(np.arange(folds), n)) if folds and n >= folds else [None] * n
    records = []
    for i in range(n):
        img = synth_image(size, int(ages[i]), int(genders[i]), rng)
        fold = None if fold_ids[i] is None else int(fold_ids[i])
        records.append(ImageRecord(int(ages[i]), int(genders[i]), fold,
                                   path=f"images/{i:05d}.png", image=img))
    return DatasetManifest(records)


def materialize(manifest: DatasetManifest, directory) -> Path:
    """Write in-memory images as PNGs plus ``manifest.csv``; returns the manifest path."""
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    out = []
    for i, r in enumerate(manifest.records):
        rel = r.path or f"images/{i:05d}.png"
        (directory / rel).parent.mkdir(parents=True, exist_ok=True)
        write_image(directory / rel, manifest.load_image(i))
        out.append(replace(r, path=rel, image=None))
    path = directory / "manifest.csv"
    write_manifest(DatasetManifest(out), path)
    return path
