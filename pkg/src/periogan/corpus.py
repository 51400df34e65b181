"""Corpus ingestion, pixel conversion, augmentation and batching.

Images are handled as single-channel float arrays scaled to [-1, 1] so the
tanh head of every generator and the training data share one range.
"""
from __future__ import annotations

import enum
import fnmatch
import hashlib
import json
import logging
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import EmptyCorpus, InvalidBatchSize, InvalidPolicy, InvalidTarget, IOFailure

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg")

# (width, height). Both 80-pixel variants are kept because the source disagrees
# with itself (80x160 in the text, 80x60 in a table caption).
TARGET_SIZES = {
    "80x160": (80, 160),
    "80x60": (80, 60),
    "320x240": (320, 240),
    "640x480": (640, 480),
}


class EyeSide(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class Gender(str, enum.Enum):
    FEMALE = "female"
    MALE = "male"
    UNKNOWN = "unknown"


class ClassLabel(str, enum.Enum):
    BONAFIDE = "bonafide"
    ATTACK = "attack"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    eye_side: EyeSide
    gender: Gender
    class_label: ClassLabel
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"record {self.id}: non-positive size {self.width}x{self.height}")
        # accept plain strings from JSON
        object.__setattr__(self, "eye_side", EyeSide(self.eye_side))
        object.__setattr__(self, "gender", Gender(self.gender))
        object.__setattr__(self, "class_label", ClassLabel(self.class_label))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eye_side"] = self.eye_side.value
        d["gender"] = self.gender.value
        d["class_label"] = self.class_label.value
        return d


@dataclass(frozen=True)
class IngestFailure:
    path: str
    reason: str


def records_checksum(records: Sequence[ImageRecord]) -> str:
    payload = json.dumps([r.to_dict() for r in records], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Manifest:
    records: tuple[ImageRecord, ...]
    source_resolution: tuple[int, int]
    checksum: str = ""
    failures: tuple[IngestFailure, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "failures", tuple(self.failures))
        object.__setattr__(self, "source_resolution", tuple(self.source_resolution))
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted(k for k, v in Counter(ids).items() if v > 1)
            raise ValueError(f"duplicate record ids: {dupes[:5]}")
        expected = records_checksum(self.records)
        if not self.checksum:
            object.__setattr__(self, "checksum", expected)
        elif self.checksum != expected:
            raise IOFailure("manifest checksum does not match its records")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def filter(self, **labels) -> "Manifest":
        """Sub-manifest whose records match every given label, e.g. ``gender="male"``."""
        keep = [r for r in self.records if all(getattr(r, k) == v for k, v in labels.items())]
        return Manifest(keep, self.source_resolution)

    def to_json(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "source_resolution": list(self.source_resolution),
            "checksum": self.checksum,
            "records": [r.to_dict() for r in self.records],
            "failures": [asdict(f) for f in self.failures],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Manifest":
        version = doc.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise IOFailure(f"unsupported manifest schema version {version!r}")
        return cls(
            records=[ImageRecord(**r) for r in doc["records"]],
            source_resolution=tuple(doc["source_resolution"]),
            checksum=doc["checksum"],
            failures=[IngestFailure(**f) for f in doc.get("failures", [])],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IOFailure(f"cannot read manifest {path}: {exc}") from exc
        return cls.from_json(doc)


# --------------------------------------------------------------------------
# labeling


@dataclass(frozen=True)
class LabelRule:
    """Assigns label fields to files whose relative path matches ``pattern``.

    ``pattern`` is a glob unless prefixed with ``re:``, in which case it is a
    regular expression searched in the relative path.
    """

    pattern: str
    eye_side: str | None = None
    gender: str | None = None
    class_label: str | None = None

    def matches(self, relpath: str) -> bool:
        if self.pattern.startswith("re:"):
            return re.search(self.pattern[3:], relpath) is not None
        return fnmatch.fnmatch(relpath, self.pattern) or fnmatch.fnmatch(os.path.basename(relpath), self.pattern)


@dataclass(frozen=True)
class Labeling:
    rules: tuple[LabelRule, ...] = ()
    defaults: dict = field(default_factory=lambda: {"gender": "unknown", "class_label": "bonafide"})

    @classmethod
    def from_dict(cls, doc: dict) -> "Labeling":
        rules = tuple(LabelRule(**r) for r in doc.get("rules", []))
        defaults = {"gender": "unknown", "class_label": "bonafide"}
        defaults.update(doc.get("defaults", {}))
        return cls(rules, defaults)

    @classmethod
    def load(cls, path) -> "Labeling":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def label(self, relpath: str) -> dict:
        """First matching rule wins per field; unmatched fields fall back to defaults."""
        out = {}
        for name in ("eye_side", "gender", "class_label"):
            for rule in self.rules:
                value = getattr(rule, name)
                if value is not None and rule.matches(relpath):
                    out[name] = value
                    break
            else:
                if name in self.defaults:
                    out[name] = self.defaults[name]
        return out


def ingest_directory(directory, labeling: Labeling | dict | None = None) -> Manifest:
    """Walk ``directory`` recursively and build a manifest of every decodable image.

    Files that fail to decode or cannot be labeled end up in
    ``Manifest.failures`` rather than being dropped silently.
    """
    root = Path(directory)
    if not root.is_dir() or not os.access(root, os.R_OK):
        raise IOFailure(f"cannot read directory {directory}")
    if labeling is None:
        labeling = Labeling()
    elif isinstance(labeling, dict):
        labeling = Labeling.from_dict(labeling)

    candidates = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not candidates:
        raise EmptyCorpus(f"no images found under {directory}")

    records, failures = [], []
    for p in candidates:
        rel = p.relative_to(root).as_posix()
        try:
            with Image.open(p) as im:
                im.load()
                width, height = im.size
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            failures.append(IngestFailure(str(p), f"decode error: {exc}"))
            continue
        labels = labeling.label(rel)
        missing = {"eye_side", "gender", "class_label"} - labels.keys()
        if missing:
            failures.append(IngestFailure(str(p), f"no labeling rule for {sorted(missing)}"))
            continue
        try:
            records.append(ImageRecord(id=rel, path=str(p), width=width, height=height, **labels))
        except ValueError as exc:
            failures.append(IngestFailure(str(p), f"bad label: {exc}"))

    for f in failures:
        logger.warning("skipped %s (%s)", f.path, f.reason)
    if not records:
        raise EmptyCorpus(f"no decodable images under {directory} ({len(failures)} failures)")
    resolution = Counter((r.width, r.height) for r in records).most_common(1)[0][0]
    return Manifest(records, resolution, failures=failures)


# --------------------------------------------------------------------------
# pixel tensors


@dataclass(frozen=True)
class PixelTensor:
    data: np.ndarray
    layout: str = "HW"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != len(self.layout):
            raise ValueError(f"layout {self.layout!r} does not match array of ndim {data.ndim}")
        if not np.all(np.isfinite(data)) or data.min() < -1 or data.max() > 1:
            raise ValueError("pixel values must lie in [-1, 1]")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[self.layout.index("H")]

    @property
    def width(self) -> int:
        return self.data.shape[self.layout.index("W")]

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint((self.data + 1.0) * 127.5), 0, 255).astype(np.uint8)


def to_pixels(array_u8: np.ndarray) -> np.ndarray:
    return array_u8.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def load_image(path, target: tuple[int, int] | None = None) -> PixelTensor:
    """Decode an image as grayscale, scale to [-1, 1] and optionally resize to ``target`` (w, h)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError) as exc:
        raise IOFailure(f"cannot decode {path}: {exc}") from exc
    img = PixelTensor(to_pixels(arr))
    if target is not None and (img.width, img.height) != tuple(target):
        img = resize(img, target)
    return img


def save_image(img: PixelTensor, path) -> None:
    Image.fromarray(img.to_uint8()).save(path)


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize(img: PixelTensor, target: tuple[int, int]) -> PixelTensor:
    """Bilinear resize to ``target`` = (width, height)."""
    w, h = target
    if w <= 0 or h <= 0:
        raise InvalidTarget(f"target size must be positive, got {target}")
    if img.layout not in ("HW", "HWC"):
        raise InvalidTarget(f"resize expects HW or HWC layout, got {img.layout}")
    src = img.data
    if (img.width, img.height) == (w, h):
        return PixelTensor(src.copy(), img.layout)
    ylo, yhi, fy = _bilinear_axis(src.shape[0], h)
    xlo, xhi, fx = _bilinear_axis(src.shape[1], w)
    if src.ndim == 3:
        fy, fx = fy[:, None, None], fx[None, :, None]
    else:
        fy, fx = fy[:, None], fx[None, :]
    s = src.astype(np.float64)
    top = s[ylo][:, xlo] + (s[ylo][:, xhi] - s[ylo][:, xlo]) * fx
    bot = s[yhi][:, xlo] + (s[yhi][:, xhi] - s[yhi][:, xlo]) * fx
    out = top + (bot - top) * fy
    return PixelTensor(np.clip(out, -1.0, 1.0).astype(src.dtype), img.layout)


def center_crop_square(img: PixelTensor, side: int) -> PixelTensor:
    """Center-crop to a square and resize to ``side`` x ``side``."""
    h, w = img.height, img.width
    m = min(h, w)
    top, left = (h - m) // 2, (w - m) // 2
    cropped = PixelTensor(img.data[top:top + m, left:left + m], img.layout)
    return resize(cropped, (side, side))


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class TransformSpec:
    name: str
    low: float = 0.0
    high: float = 0.0


DEFAULT_TRANSFORMS = (
    TransformSpec("flip"),
    TransformSpec("rotate", -5.0, 5.0),        # degrees
    TransformSpec("brightness", -0.10, 0.10),  # relative gain
    TransformSpec("noise", 0.0, 0.02),         # std on the [-1, 1] scale
)
_KNOWN = {"flip", "rotate", "brightness", "noise"}
_BOUNDS = {"rotate": (-45.0, 45.0), "brightness": (-1.0, 1.0), "noise": (0.0, 1.0)}


@dataclass(frozen=True)
class AugmentationPolicy:
    occurrence_probability: float = 0.75
    transforms: tuple[TransformSpec, ...] = DEFAULT_TRANSFORMS
    rng_seed: int = 0

    def __post_init__(self):
        p = self.occurrence_probability
        if not 0.0 <= p <= 1.0:
            raise InvalidPolicy(f"occurrence_probability must be in [0, 1], got {p}")
        object.__setattr__(self, "transforms", tuple(
            t if isinstance(t, TransformSpec) else TransformSpec(**t) for t in self.transforms))
        for t in self.transforms:
            if t.name not in _KNOWN:
                raise InvalidPolicy(f"unknown transform {t.name!r}")
            if t.name in _BOUNDS:
                lo, hi = _BOUNDS[t.name]
                if not (lo <= t.low <= t.high <= hi):
                    raise InvalidPolicy(f"{t.name}: range [{t.low}, {t.high}] outside [{lo}, {hi}]")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def plan_transforms(policy: AugmentationPolicy, rng: np.random.Generator) -> list[tuple[str, float]]:
    """Draw which transforms fire (each independently with the policy probability) and their parameters.

    The same number of random draws is consumed whatever fires, so the
    stream stays aligned across images.
    """
    plan = []
    for t in policy.transforms:
        fire = rng.random() < policy.occurrence_probability
        value = rng.uniform(t.low, t.high) if t.high > t.low else t.low
        if fire:
            plan.append((t.name, float(value)))
    return plan


def augment(img: PixelTensor, policy: AugmentationPolicy, rng: np.random.Generator | None = None) -> PixelTensor:
    if rng is None:
        rng = policy.rng()
    plan = plan_transforms(policy, rng)
    if not plan:
        return PixelTensor(img.data.copy(), img.layout)
    x = img.data.astype(np.float64)
    for name, value in plan:
        if name == "flip":
            x = x[:, ::-1]
        elif name == "rotate":
            x = ndimage.rotate(x, value, axes=(1, 0), reshape=False, order=1, mode="reflect")
        elif name == "brightness":
            x = (x + 1.0) * (1.0 + value) - 1.0
        elif name == "noise":
            x = x + rng.normal(0.0, value, size=x.shape)
    return PixelTensor(np.clip(x, -1.0, 1.0).astype(img.data.dtype), img.layout)


# --------------------------------------------------------------------------
# batching


class Batch(NamedTuple):
    ids: list[str]
    data: np.ndarray  # (B, 1, H, W) float32


def batch_order(n: int, size: int, shuffle_seed: int | None) -> list[np.ndarray]:
    if size < 1:
        raise InvalidBatchSize(f"batch size must be >= 1, got {size}")
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def batches(manifest: Manifest, size: int, shuffle_seed: int | None = 0,
            target: tuple[int, int] | None = None,
            policy: AugmentationPolicy | None = None) -> Iterator[Batch]:
    """Yield one epoch of batches; every record appears exactly once, the last batch may be short."""
    chunks = batch_order(len(manifest), size, shuffle_seed)
    aug_rng = policy.rng() if policy is not None else None
    for idx in chunks:
        recs = [manifest.records[i] for i in idx]
        arrays = []
        for r in recs:
            img = load_image(r.path, target)
            if policy is not None:
                img = augment(img, policy, aug_rng)
            arrays.append(img.data)
        yield Batch([r.id for r in recs], np.stack(arrays)[:, None].astype(np.float32))


def load_array(manifest: Manifest, target: tuple[int, int]) -> np.ndarray:
    """Decode the full manifest into one (N, 1, H, W) float32 array."""
    return np.stack([load_image(r.path, target).data for r in manifest.records])[:, None].astype(np.float32)
