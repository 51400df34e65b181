"""Presentation-attack-detection scoring and ISO/IEC 30107-3 error rates.

Score convention: higher means more bona fide. A sample is accepted as bona
fide when ``score >= threshold`` (ties go to bona fide), so

    APCER = #{attack   : score >= t} / #attack
    BPCER = #{bonafide : score <  t} / #bonafide
    ACER  = (APCER + BPCER) / 2
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import PixelTensor
from .errors import MissingClass
from .quality import as_batch

logger = logging.getLogger(__name__)

BONAFIDE = "bonafide"
ATTACK = "attack"
GROUND_TRUTHS = (BONAFIDE, ATTACK)
DEFAULT_THRESHOLD = 0.5
TIE_RULE = "score >= threshold is a bona fide decision"

# D-EER (%) per generator family on the GFI-UND experiments, plus the
# single-threshold result for the best set. Report-only.
REFERENCE_DEER = {"cgan": 41.1, "wgan": 35.02, "wgan_gp": 25.01, "stylegan2_lite": 10.01}
REFERENCE_ISO = {"apcer": 0.3244, "bpcer": 0.0, "acer_reported": 0.1603, "acer_as_mean": 0.1622}


@dataclass(frozen=True)
class PADScore:
    sample_id: str
    ground_truth: str
    score: float

    def __post_init__(self):
        if self.ground_truth not in GROUND_TRUTHS:
            raise ValueError(f"ground_truth must be one of {GROUND_TRUTHS}, got {self.ground_truth!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} for {self.sample_id} outside [0, 1]")


@dataclass(frozen=True)
class ScoreError:
    sample_id: str
    ground_truth: str
    error: str


@dataclass(frozen=True)
class ISOMetricsReport:
    threshold: float
    apcer: float
    bpcer: float
    acer: float
    n_attack: int
    n_bonafide: int
    attacks_accepted: int
    bonafide_rejected: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DETPoint:
    threshold: float
    apcer: float
    bpcer: float


@dataclass(frozen=True)
class DETCurve:
    """Operating points ordered by ascending threshold (APCER falls, BPCER rises)."""

    points: tuple[DETPoint, ...]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "apcer", "bpcer"])
            for p in self.points:
                w.writerow([repr(p.threshold), repr(p.apcer), repr(p.bpcer)])


class PADClassifier(Protocol):
    id: str

    def score(self, image: PixelTensor) -> float:
        ...


# --------------------------------------------------------------------------
# metrics


def _split(scores: Iterable[PADScore]) -> tuple[np.ndarray, np.ndarray]:
    att, bf = [], []
    for s in scores:
        (att if s.ground_truth == ATTACK else bf).append(s.score)
    if not att or not bf:
        raise MissingClass(f"need both classes, got {len(att)} attack and {len(bf)} bona fide scores")
    return np.sort(np.asarray(att, dtype=np.float64)), np.sort(np.asarray(bf, dtype=np.float64))


def _rates(att_sorted: np.ndarray, bf_sorted: np.ndarray, threshold: float) -> tuple[int, int]:
    accepted = len(att_sorted) - int(np.searchsorted(att_sorted, threshold, side="left"))
    rejected = int(np.searchsorted(bf_sorted, threshold, side="left"))
    return accepted, rejected


def iso_metrics(scores: Sequence[PADScore], threshold: float = DEFAULT_THRESHOLD) -> ISOMetricsReport:
    att, bf = _split(scores)
    accepted, rejected = _rates(att, bf, threshold)
    apcer = accepted / len(att)
    bpcer = rejected / len(bf)
    return ISOMetricsReport(threshold, apcer, bpcer, (apcer + bpcer) / 2, len(att), len(bf), accepted, rejected)


def det_curve(scores: Sequence[PADScore]) -> DETCurve:
    """One point per distinct score plus the -inf / +inf sentinels."""
    att, bf = _split(scores)
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([att, bf])), [np.inf]])
    accepted = len(att) - np.searchsorted(att, thresholds, side="left")
    rejected = np.searchsorted(bf, thresholds, side="left")
    return DETCurve(tuple(
        DETPoint(float(t), int(a) / len(att), int(r) / len(bf))
        for t, a, r in zip(thresholds, accepted, rejected)
    ))


def d_eer(curve: DETCurve) -> tuple[float, float]:
    """Equal-error rate and its threshold.

    Walking the staircase by ascending threshold, find the first point where
    APCER no longer exceeds BPCER. Of that point and its predecessor, the one
    with the smaller |APCER - BPCER| gives EER = (APCER + BPCER) / 2.
    """
    pts = curve.points
    for i, p in enumerate(pts):
        if p.apcer <= p.bpcer:
            cand = [p] if i == 0 else [pts[i - 1], p]
            best = min(cand, key=lambda q: (abs(q.apcer - q.bpcer), -q.threshold))
            return (best.apcer + best.bpcer) / 2, best.threshold
    last = pts[-1]
    return (last.apcer + last.bpcer) / 2, last.threshold


# --------------------------------------------------------------------------
# classifiers


class ConstantClassifier:
    """Returns the same score for every image; useful as a protocol stub."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)
        self.id = f"constant:{self.value}"

    def score(self, image) -> float:
        return self.value


class FileScoreClassifier:
    """Looks up externally produced scores by sample id (CSV: sample_id,ground_truth,score)."""

    def __init__(self, path):
        self.path = str(path)
        self.id = f"file:{self.path}"
        self.table = {s.sample_id: s for s in read_scores(path)}

    def score_id(self, sample_id: str) -> float:
        try:
            return self.table[sample_id].score
        except KeyError:
            raise KeyError(f"no score for sample {sample_id!r} in {self.path}") from None

    def score(self, image) -> float:
        raise TypeError("file-backed classifier scores by sample id, not by pixels")


class _BaselineNet(nn.Module):
    def __init__(self, width: int = 16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(1, width, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(width, 2 * width, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(2 * width, 2 * width, 3, padding=1), nn.ReLU(),
        )
        # mean, std and high-pass energy pooled so print texture is visible
        self.head = nn.Linear(4 * width + 1, 1)

    def forward(self, x):
        f = self.body(x)
        hp = x - F.avg_pool2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), 3, stride=1)
        energy = hp.pow(2).mean(dim=(1, 2, 3), keepdim=False)[:, None]
        return self.head(torch.cat([f.mean(dim=(2, 3)), f.std(dim=(2, 3)), 10 * energy], dim=1)).squeeze(1)


def print_attack(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Simulated printed copy: contrast loss, halftone-like dot pattern and sensor noise."""
    h, w = img.shape[-2:]
    gain = rng.uniform(0.5, 0.8)
    period = rng.integers(2, 4)
    yy, xx = np.mgrid[0:h, 0:w]
    dots = ((yy % period == 0) ^ (xx % period == 0)).astype(np.float32)
    out = img * gain + rng.uniform(-0.1, 0.1) + 0.15 * (dots - 0.5) + rng.normal(0, 0.05, img.shape)
    return np.clip(out, -1, 1).astype(np.float32)


class BaselineCNNClassifier:
    """Small CNN trained on bona fide corpus images against synthesized print/noise attacks."""

    def __init__(self, size: tuple[int, int] = (64, 64), seed: int = 0, width: int = 16):
        self.size = tuple(size)
        self.seed = seed
        torch.manual_seed(seed)
        self.net = _BaselineNet(width)
        self.id = f"baseline-cnn-s{seed}"

    def _prep(self, arr: np.ndarray) -> torch.Tensor:
        x = torch.from_numpy(as_batch(arr))
        w, h = self.size
        if x.shape[-2:] != (h, w):
            x = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)
        return x

    def fit(self, bonafide, epochs: int = 30, lr: float = 1e-3, batch_size: int = 32) -> "BaselineCNNClassifier":
        rng = np.random.default_rng(self.seed)
        bf = self._prep(as_batch(bonafide)).numpy()
        att = np.stack([print_attack(x, rng) for x in bf])
        x = torch.from_numpy(np.concatenate([bf, att]))
        y = torch.cat([torch.ones(len(bf)), torch.zeros(len(att))])
        opt = torch.optim.Adam(self.net.parameters(), lr=lr)
        gen = torch.Generator().manual_seed(self.seed)
        self.net.train()
        for _ in range(epochs):
            perm = torch.randperm(len(x), generator=gen)
            for i in range(0, len(x), batch_size):
                idx = perm[i:i + batch_size]
                loss = F.binary_cross_entropy_with_logits(self.net(x[idx]), y[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
        self.net.eval()
        return self

    def score_batch(self, images) -> np.ndarray:
        with torch.no_grad():
            return torch.sigmoid(self.net(self._prep(as_batch(images)))).double().numpy()

    def score(self, image) -> float:
        return float(self.score_batch([image])[0])

    def save(self, path) -> None:
        torch.save({"size": self.size, "seed": self.seed, "state": self.net.state_dict()}, path)

    @classmethod
    def load(cls, path) -> "BaselineCNNClassifier":
        blob = torch.load(path, map_location="cpu")
        clf = cls(tuple(blob["size"]), blob["seed"])
        clf.net.load_state_dict(blob["state"])
        clf.net.eval()
        return clf


# --------------------------------------------------------------------------
# scoring and the experiment


@dataclass(frozen=True)
class LabeledImage:
    sample_id: str
    ground_truth: str
    image: PixelTensor | None = None


def score_set(clf, images: Sequence[LabeledImage]) -> tuple[list[PADScore], list[ScoreError]]:
    """Score every image in order; a failing sample becomes a ScoreError and the run continues."""
    scores, errors = [], []
    for item in images:
        if item.ground_truth not in GROUND_TRUTHS:
            raise ValueError(f"{item.sample_id}: ground truth must be bonafide or attack")
        try:
            if isinstance(clf, FileScoreClassifier):
                value = clf.score_id(item.sample_id)
            else:
                value = float(clf.score(item.image))
            if not (0.0 <= value <= 1.0) or math.isnan(value):
                raise ValueError(f"classifier returned {value}, outside [0, 1]")
            scores.append(PADScore(item.sample_id, item.ground_truth, value))
        except Exception as exc:  # per-sample isolation is the contract
            logger.warning("scoring failed for %s: %s", item.sample_id, exc)
            errors.append(ScoreError(item.sample_id, item.ground_truth, str(exc)))
    return scores, errors


@dataclass
class ExperimentReport:
    classifier_id: str
    threshold: float
    scores: list[PADScore]
    errors: list[ScoreError]
    iso: ISOMetricsReport
    iso_at_eer: ISOMetricsReport
    det: DETCurve
    eer: float
    eer_threshold: float
    fraction_pai_bonafide: float
    tie_rule: str = TIE_RULE
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "classifier_id": self.classifier_id,
            "tie_rule": self.tie_rule,
            "threshold": self.threshold,
            "iso": self.iso.to_dict(),
            "iso_at_eer_threshold": self.iso_at_eer.to_dict(),
            "d_eer": self.eer,
            "d_eer_threshold": self.eer_threshold,
            "fraction_pai_classified_bonafide": self.fraction_pai_bonafide,
            "n_scores": len(self.scores),
            "errors": [asdict(e) for e in self.errors],
            "provenance": self.provenance,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        self.det.to_csv(out / "det.csv")
        write_scores(self.scores, out / "scores.csv")


def unknown_attack_experiment(pai: Sequence[LabeledImage], bonafide: Sequence[LabeledImage], clf,
                              threshold: float = DEFAULT_THRESHOLD) -> ExperimentReport:
    """Present ``pai`` to ``clf`` as an unseen attack species alongside ``bonafide`` presentations."""
    pai = [LabeledImage(i.sample_id, ATTACK, i.image) for i in pai]
    bonafide = [LabeledImage(i.sample_id, BONAFIDE, i.image) for i in bonafide]
    if not pai or not bonafide:
        raise MissingClass(f"need a non-empty PAI set and bona fide set, got {len(pai)} / {len(bonafide)}")
    scores, errors = score_set(clf, pai + bonafide)
    iso = iso_metrics(scores, threshold)
    curve = det_curve(scores)
    eer, eer_t = d_eer(curve)
    return ExperimentReport(
        classifier_id=getattr(clf, "id", type(clf).__name__),
        threshold=threshold,
        scores=scores,
        errors=errors,
        iso=iso,
        iso_at_eer=iso_metrics(scores, eer_t),
        det=curve,
        eer=eer,
        eer_threshold=eer_t,
        fraction_pai_bonafide=iso.apcer,
    )


# --------------------------------------------------------------------------
# score files


def read_scores(path) -> list[PADScore]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"sample_id", "ground_truth", "score"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header sample_id,ground_truth,score")
        return [PADScore(r["sample_id"], r["ground_truth"], float(r["score"])) for r in reader]


def write_scores(scores: Sequence[PADScore], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "ground_truth", "score"])
        for s in scores:
            w.writerow([s.sample_id, s.ground_truth, repr(s.score)])
