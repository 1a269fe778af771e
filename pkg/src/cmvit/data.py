"""Image ingestion, normalization, balancing, splitting, batching, synthetic corpora.

Images on disk are binary PPM (P6, maxval 255). A dataset is described by a
manifest CSV with header ``path,label`` (paths relative to the manifest), or
by the directory convention ``<root>/real/*.ppm`` (label 0) and
``<root>/fake/*.ppm`` (label 1).
"""

from __future__ import annotations

import csv
import io
import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ContractError, ParseError
from .tensor import Tensor, get_default_dtype

log = logging.getLogger(__name__)

CLASS_NAMES = ("real", "fake")
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


# ----------------------------------------------------------------------------
# PPM / PGM


def _read_header(data: bytes, magic: bytes) -> tuple[int, int, int]:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ParseError("truncated header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != magic:
        raise ParseError(f"bad magic {fields[0][:4]!r}, expected {magic!r}")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ParseError("non-numeric header field") from None
    if maxval != 255:
        raise ParseError(f"maxval {maxval} unsupported (need 255)")
    if width < 1 or height < 1:
        raise ParseError(f"bad dimensions {width}x{height}")
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise ParseError("missing whitespace after header")
    return width, height, pos + 1


def _decode(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    width, height, offset = _read_header(data, magic)
    need = width * height * channels
    payload = data[offset : offset + need]
    if len(payload) != need:
        raise ParseError(f"payload has {len(payload)} bytes, expected {need}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return img.copy() if channels == 3 else img[..., 0].copy()


def load_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 image into an HxWx3 uint8 array."""
    return _decode(data, b"P6", 3)


def load_pgm(data: bytes) -> np.ndarray:
    """Decode a binary P5 image into an HxW uint8 array."""
    return _decode(data, b"P5", 1)


def load_any(data: bytes) -> np.ndarray:
    """P6 -> HxWx3, P5 -> HxW."""
    if data[:2] == b"P5":
        return load_pgm(data)
    return load_ppm(data)


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def normalize(image: np.ndarray) -> Tensor:
    """HxWx3 uint8 -> [3,H,W] tensor of v/255."""
    arr = np.asarray(image, dtype=np.float64).transpose(2, 0, 1) / 255.0
    return Tensor(arr)


# ----------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class Sample:
    path: Path
    label: int

    @property
    def source_id(self) -> str:
        return str(self.path)


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple[Sample, ...]
    provenance: tuple[str, ...] = ()
    num_classes: int = 2

    def __post_init__(self):
        for s in self.samples:
            if not 0 <= s.label < self.num_classes:
                raise ContractError(f"label {s.label} of {s.source_id} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels(), minlength=self.num_classes).tolist()

    def with_samples(self, samples, note: str) -> DatasetManifest:
        return replace(self, samples=tuple(samples), provenance=self.provenance + (note,))


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "label"]:
            raise ParseError(f"{path}: header must be 'path,label', got {reader.fieldnames}")
        try:
            samples = [Sample(base / row["path"], int(row["label"])) for row in reader]
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad row ({exc})") from None
    return DatasetManifest(tuple(samples), (f"manifest {path.name}",))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "label"])
    for s in manifest.samples:
        rel = os.path.relpath(Path(s.path).resolve(), path.parent.resolve())
        writer.writerow([Path(rel).as_posix(), s.label])
    path.write_text(buf.getvalue())


def discover(root: str | Path) -> DatasetManifest:
    """Build a manifest from ``root/real/*.ppm`` and ``root/fake/*.ppm``."""
    root = Path(root)
    samples = []
    for label, name in enumerate(CLASS_NAMES):
        samples += [Sample(p, label) for p in sorted((root / name).glob("*.ppm"))]
    if not samples:
        raise ContractError(f"no images found under {root}/real or {root}/fake")
    return DatasetManifest(tuple(samples), (f"discovered {root}",))


def open_dataset(path: str | Path) -> DatasetManifest:
    """Manifest file, a directory containing ``manifest.csv``, or a real/fake directory."""
    path = Path(path)
    if path.is_file():
        return read_manifest(path)
    if (path / "manifest.csv").is_file():
        return read_manifest(path / "manifest.csv")
    return discover(path)


def balance_undersample(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Reduce every class to the minority count by seeded sampling without replacement.

    Kept samples retain their original relative order.
    """
    labels = manifest.labels()
    counts = manifest.class_counts()
    if min(counts) == 0:
        empty = [c for c, n in enumerate(counts) if n == 0]
        raise ContractError(f"class(es) {empty} have no samples")
    target = min(counts)
    rng = np.random.default_rng(seed)
    keep = np.zeros(len(labels), dtype=bool)
    for c in range(manifest.num_classes):
        idx = np.flatnonzero(labels == c)
        keep[rng.choice(idx, size=target, replace=False)] = True
    kept = [s for s, k in zip(manifest.samples, keep) if k]
    return manifest.with_samples(kept, f"balance_undersample seed={seed} per_class={target}")


def split(manifest: DatasetManifest, val_fraction: float = 0.2, seed: int = 0):
    """Stratified seeded partition into (train, val)."""
    if not 0 < val_fraction < 1:
        raise ContractError(f"val_fraction must be in (0, 1), got {val_fraction}")
    labels = manifest.labels()
    rng = np.random.default_rng(seed)
    is_val = np.zeros(len(labels), dtype=bool)
    for c in range(manifest.num_classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        is_val[idx[: int(round(len(idx) * val_fraction))]] = True
    note = f"split val_fraction={val_fraction} seed={seed}"
    train = [s for s, v in zip(manifest.samples, is_val) if not v]
    val = [s for s, v in zip(manifest.samples, is_val) if v]
    return manifest.with_samples(train, note + " part=train"), manifest.with_samples(val, note + " part=val")


# ----------------------------------------------------------------------------
# loading and batching


class ImageStore:
    """Decoded images cached by path; size-checked against ``image_size``."""

    def __init__(self, image_size: int):
        self.image_size = image_size
        self._cache: dict[Path, np.ndarray] = {}

    def get(self, sample: Sample) -> np.ndarray:
        img = self._cache.get(sample.path)
        if img is None:
            try:
                img = load_ppm(Path(sample.path).read_bytes())
            except ParseError as exc:
                raise ParseError(f"{sample.source_id}: {exc}") from None
            s = self.image_size
            if img.shape[:2] != (s, s):
                raise ContractError(
                    f"{sample.source_id}: image is {img.shape[1]}x{img.shape[0]}, expected {s}x{s}"
                )
            self._cache[sample.path] = img
        return img

    def batch(self, samples) -> tuple[Tensor, np.ndarray]:
        imgs = np.stack([self.get(s) for s in samples]).astype(np.float64)
        x = Tensor(imgs.transpose(0, 3, 1, 2) / 255.0, dtype=get_default_dtype())
        return x, np.array([s.label for s in samples], dtype=np.int64)


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(shuffle_seed ^ epoch).permutation(n)


def batch_iter(
    manifest: DatasetManifest,
    store: ImageStore,
    batch_size: int = 64,
    shuffle_seed: int | None = 0,
    epoch: int = 0,
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield (images [B,3,S,S], labels [B]); the last batch may be short.

    With ``shuffle_seed=None`` the manifest order is kept.
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    n = len(manifest)
    order = np.arange(n) if shuffle_seed is None else epoch_order(n, shuffle_seed, epoch)
    for start in range(0, n, batch_size):
        yield store.batch([manifest.samples[i] for i in order[start : start + batch_size]])


# ----------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SyntheticSpec:
    """Knobs for the two synthetic classes (intensities on the 0..255 scale)."""

    noise: float = 6.0
    texture_amplitude: tuple[float, float] = (28.0, 48.0)
    periods: tuple[int, ...] = field(default=(2, 3, 4))


def _smooth_base(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    lo = rng.uniform(30, 110, size=3)
    hi = rng.uniform(140, 225, size=3)
    return lo + (hi - lo) * ramp[..., None]


def _texture(rng: np.random.Generator, size: int, spec: SyntheticSpec) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    period = int(rng.choice(spec.periods))
    kind = rng.integers(3)
    if kind == 0:
        pattern = ((xx // max(period // 2, 1) + yy // max(period // 2, 1)) % 2) * 2.0 - 1.0
    elif kind == 1:
        pattern = np.sign(np.sin(2 * np.pi * (xx + rng.uniform(0, period)) / period)) + 0.0
    else:
        pattern = np.sign(np.sin(2 * np.pi * (yy + rng.uniform(0, period)) / period)) + 0.0
    amp = rng.uniform(*spec.texture_amplitude)
    return amp * pattern[..., None] * rng.uniform(0.7, 1.0, size=3)


def synth_image(rng: np.random.Generator, label: int, size: int, spec: SyntheticSpec | None = None) -> np.ndarray:
    """Class 0: smooth colour ramp + mild noise. Class 1: the same plus a high-frequency texture."""
    spec = spec or SyntheticSpec()
    img = _smooth_base(rng, size)
    if label == 1:
        img = img + _texture(rng, size, spec)
    img = img + rng.normal(0, spec.noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def gen_synthetic(n_per_class: int, size: int, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Write ``real/`` and ``fake/`` PPM files plus ``manifest.csv`` under ``out_dir``."""
    if size < 1 or size & (size - 1):
        raise ContractError(f"size must be a power of two, got {size}")
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    samples = []
    for label, name in enumerate(CLASS_NAMES):
        (out / name).mkdir(parents=True, exist_ok=True)
    for i in range(n_per_class):
        for label, name in enumerate(CLASS_NAMES):
            path = out / name / f"{name}_{i:05d}.ppm"
            path.write_bytes(encode_ppm(synth_image(rng, label, size)))
            samples.append(Sample(path, label))
    manifest = DatasetManifest(tuple(samples), (f"gen_synthetic n={n_per_class} size={size} seed={seed}",))
    write_manifest(manifest, out / "manifest.csv")
    log.info("wrote %d images to %s", len(samples), out)
    return manifest
