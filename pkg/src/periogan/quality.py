"""Image-set fidelity measures: Frechet distance over deep features, LoG sharpness, exact t-SNE."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from torch import nn

from .corpus import PixelTensor
from .errors import EmbedError, InsufficientSamples, InvalidPerplexity, ShapeError

logger = logging.getLogger(__name__)

FID_JITTER = 1e-6
SMALL_SAMPLE_WARNING = 2048
INCEPTION_WEIGHTS_ENV = "PERIOGAN_INCEPTION_WEIGHTS"

# Reference values from the GFI-UND experiments, kept for comparison only; never asserted.
REFERENCE_VALUES = {
    "fid_best_stylegan2": 16.29,
    "fid_fake_vs_synthetic": 120.73,
    "sharpness_mean_corpus": 30.63,
    "sharpness_mean_synthetic": 29.362,
}


# --------------------------------------------------------------------------
# embedders


def as_batch(images) -> np.ndarray:
    """Stack PixelTensors / arrays into an (N, 1, H, W) float32 array."""
    if isinstance(images, np.ndarray):
        arr = images
    elif isinstance(images, torch.Tensor):
        arr = images.detach().cpu().numpy()
    else:
        arr = np.stack([im.data if isinstance(im, PixelTensor) else np.asarray(im) for im in images])
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4 or arr.shape[1] != 1:
        raise EmbedError(f"expected single-channel images, got array of shape {arr.shape}")
    return arr.astype(np.float32, copy=False)


class EmbeddingModel:
    """A frozen feature extractor from [-1, 1] grayscale images to ``dim``-vectors."""

    id: str = "abstract"
    dim: int = 0

    def descriptor(self) -> dict:
        return {"id": self.id, "dim": self.dim, "preprocess": self.preprocess}

    preprocess: dict = {}

    def features(self, batch: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class LiteCNNEmbedder(EmbeddingModel):
    """Fixed random-weight convolutional features (mean and std pooled at three depths).

    Weights come from a fixed seed, so values are comparable across machines
    and runs without downloading anything.
    """

    def __init__(self, seed: int = 1234, size: int = 64, width: int = 32):
        self.id = f"lite-cnn-s{seed}-r{size}-w{width}"
        self.size = size
        self.preprocess = {"resize": [size, size], "channels": 1, "range": [-1, 1]}
        gen = torch.Generator().manual_seed(seed)
        chans = [1, width, 2 * width, 4 * width]
        self.convs = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            w = torch.randn(cout, cin, 3, 3, generator=gen) * (2.0 / (cin * 9)) ** 0.5
            b = torch.randn(cout, generator=gen) * 0.1
            self.convs.append((w, b))
        self.dim = 2 * sum(chans[1:])

    def features(self, batch: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(batch, size=(self.size, self.size), mode="bilinear", align_corners=False)
        pooled = []
        for w, b in self.convs:
            x = F.leaky_relu(F.conv2d(x, w, b, padding=1), 0.2)
            mean = x.mean(dim=(2, 3))
            var = (x * x).mean(dim=(2, 3)) - mean * mean
            pooled += [mean, var.clamp_min(0).sqrt()]
            x = F.avg_pool2d(x, 2)
        return torch.cat(pooled, dim=1)


class InceptionEmbedder(EmbeddingModel):
    """Pre-trained Inception-v3, final average-pool features (2048-D).

    Weights are read from ``weights_path`` or the ``PERIOGAN_INCEPTION_WEIGHTS``
    environment variable, falling back to the torchvision download cache.
    """

    id = "inception-v3-pool3"
    preprocess = {"resize": [299, 299], "channels": 3, "range": "imagenet-normalized"}

    def __init__(self, weights_path: str | None = None, load_weights: bool = True):
        from torchvision.models import inception_v3

        self.net = inception_v3(weights=None, aux_logits=False, init_weights=False)
        self.dim = self.net.fc.in_features
        self.net.fc = nn.Identity()
        if load_weights:
            self._load(weights_path or os.environ.get(INCEPTION_WEIGHTS_ENV))
        self.net.eval()

    def _load(self, path):
        try:
            if path:
                state = torch.load(path, map_location="cpu")
            else:
                from torchvision.models import Inception_V3_Weights
                state = Inception_V3_Weights.IMAGENET1K_V1.get_state_dict(progress=False)
        except Exception as exc:  # network or file failures both end here
            raise EmbedError(f"Inception-v3 weights unavailable: {exc}") from exc
        state = {k: v for k, v in state.items() if not k.startswith(("fc.", "AuxLogits."))}
        self.net.load_state_dict(state, strict=False)

    def features(self, batch: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(batch, size=(299, 299), mode="bilinear", align_corners=False)
        x = (x + 1) / 2
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        x = (x.expand(-1, 3, -1, -1) - mean) / std
        return self.net(x)


def get_embedder(embedder_id: str = "inception-v3", fallback: bool = False) -> EmbeddingModel:
    """Resolve an embedder by id. With ``fallback`` a missing Inception asset yields the lite CNN."""
    if embedder_id.startswith("lite-cnn"):
        return LiteCNNEmbedder()
    if embedder_id.startswith("inception"):
        try:
            return InceptionEmbedder()
        except EmbedError:
            if not fallback:
                raise
            logger.warning("Inception-v3 weights unavailable, falling back to the lite CNN embedder")
            return LiteCNNEmbedder()
    raise EmbedError(f"unknown embedder {embedder_id!r}")


def embed(images, model: EmbeddingModel, batch_size: int = 64) -> np.ndarray:
    """Feature matrix with one row per input image, in input order."""
    try:
        arr = as_batch(images)
    except (ValueError, TypeError) as exc:
        raise EmbedError(f"cannot preprocess images: {exc}") from exc
    if len(arr) == 0:
        raise EmbedError("cannot embed an empty image set")
    out = []
    with torch.no_grad():
        for i in range(0, len(arr), batch_size):
            out.append(model.features(torch.from_numpy(arr[i:i + batch_size])).double().numpy())
    return np.concatenate(out)


# --------------------------------------------------------------------------
# Frechet distance


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_summary(features) -> GaussianSummary:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {x.shape[0]}")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / (x.shape[0] - 1)
    return GaussianSummary(mu, (cov + cov.T) / 2, x.shape[0])


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((a + a.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> tuple[float, float]:
    """Tr((cov_a cov_b)^(1/2)) and the smallest eigenvalue of the symmetrized product.

    The product shares its spectrum with sqrt(A) B sqrt(A), which is symmetric
    PSD, so the trace is the sum of square roots of that matrix's eigenvalues.
    """
    root_a = _psd_sqrt(cov_a)
    m = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((m + m.T) / 2)
    return float(np.sqrt(np.clip(vals, 0, None)).sum()), float(vals.min())


@dataclass(frozen=True)
class FrechetResult:
    value: float
    raw: float
    jitter: float


def frechet_details(a: GaussianSummary, b: GaussianSummary, eps: float = FID_JITTER) -> FrechetResult:
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ShapeError(f"summary dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    cov_a, cov_b = a.cov, b.cov
    tr_sqrt, min_eig = trace_sqrt_product(cov_a, cov_b)
    jitter = 0.0
    scale = max(np.abs(cov_a).max(initial=0), np.abs(cov_b).max(initial=0), 1.0)
    if min_eig < -1e-10 * scale ** 2:
        # product root numerically non-real: regularize both covariances
        jitter = eps
        offset = eps * np.eye(a.dim)
        cov_a, cov_b = cov_a + offset, cov_b + offset
        tr_sqrt, _ = trace_sqrt_product(cov_a, cov_b)
    raw = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return FrechetResult(max(raw, 0.0), raw, jitter)


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """||u_a - u_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at zero."""
    return frechet_details(a, b).value


@dataclass
class FIDReport:
    fid: float
    fid_raw: float
    n_a: int
    n_b: int
    embedder_id: str
    jitter: float = 0.0
    small_sample_warning: bool = False
    summaries: tuple = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("summaries")
        return d


def fid_from_features(feat_a, feat_b, embedder_id: str = "precomputed") -> FIDReport:
    sa, sb = gaussian_summary(feat_a), gaussian_summary(feat_b)
    res = frechet_details(sa, sb)
    warn = min(sa.n, sb.n) < SMALL_SAMPLE_WARNING
    if warn:
        logger.info("FID from %d/%d samples is biased (< %d per side)", sa.n, sb.n, SMALL_SAMPLE_WARNING)
    return FIDReport(res.value, res.raw, sa.n, sb.n, embedder_id, res.jitter, warn, (sa, sb))


def fid(set_a, set_b, model: EmbeddingModel) -> FIDReport:
    return fid_from_features(embed(set_a, model), embed(set_b, model), model.id)


def rank_by_fid(named_reports: dict[str, FIDReport]) -> list[tuple[str, FIDReport]]:
    """Sort reports by ascending FID; refuses to mix embedders."""
    ids = {r.embedder_id for r in named_reports.values()}
    if len(ids) > 1:
        raise ValueError(f"FID values from different embedders are not comparable: {sorted(ids)}")
    return sorted(named_reports.items(), key=lambda kv: kv[1].fid)


def write_fid_report(report: FIDReport, path_stem, extra: dict | None = None) -> None:
    row = {**report.to_dict(), **(extra or {})}
    with open(f"{path_stem}.json", "w") as fh:
        json.dump(row, fh, indent=2, default=str)
    with open(f"{path_stem}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow({k: (json.dumps(v) if isinstance(v, (dict, list)) else v) for k, v in row.items()})


# --------------------------------------------------------------------------
# sharpness


def log_kernel(sigma: float = 1.5, size: int = 9) -> np.ndarray:
    """Zero-sum Laplacian-of-Gaussian kernel."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    xx, yy = np.meshgrid(r, r)
    rr = (xx ** 2 + yy ** 2) / (2 * sigma ** 2)
    k = (rr - 1) * np.exp(-rr) / (np.pi * sigma ** 4)
    return k - k.mean()


_LOG = log_kernel()


def sharpness(img) -> float:
    """100 x mean squared LoG response (sigma 1.5, 9x9)."""
    x = np.asarray(img.data if isinstance(img, PixelTensor) else img, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"sharpness expects a single HxW image, got shape {x.shape}")
    # shifting by the minimum is exact, so constant offsets cancel bit-for-bit
    x = x - x.min()
    response = ndimage.convolve(x, _LOG, mode="reflect")
    return float(100.0 * np.mean(response ** 2))


# --------------------------------------------------------------------------
# t-SNE


@dataclass
class ProjectionMap:
    points: np.ndarray
    labels: list
    perplexity: float
    n_iter: int
    seed: int
    kl_history: list = field(default_factory=list, repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "label"])
            for (x, y), lab in zip(self.points, self.labels):
                w.writerow([repr(float(x)), repr(float(y)), lab])


def _sq_dists(x: np.ndarray) -> np.ndarray:
    s = (x ** 2).sum(axis=1)
    d = s[:, None] + s[None, :] - 2 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _conditional_p(dists: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 100) -> np.ndarray:
    """Row-wise Gaussian affinities with precision found by bisection to match ``perplexity``."""
    n = dists.shape[0]
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        d = np.delete(dists[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            e = np.exp(-(d - d.min()) * beta)
            total = e.sum()
            h = np.log(total) + beta * np.sum((d - d.min()) * e) / total
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        p[i, np.arange(n) != i] = e / total
    return p


def _kl_and_grad(p: np.ndarray, y: np.ndarray, need_grad: bool = True):
    num = 1.0 / (1.0 + _sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    kl = float(np.sum(p * np.log(p / q)))
    if not need_grad:
        return kl, None
    w = (p - q) * num
    grad = 4.0 * (np.diag(w.sum(axis=1)) - w) @ y
    return kl, grad


def tsne_project(features, labels: Sequence | None = None, perplexity: float = 30.0, n_iter: int = 1000,
                 learning_rate: float = 200.0, early_exaggeration: float = 12.0,
                 exaggeration_iters: int = 250, seed: int = 0) -> ProjectionMap:
    """Exact O(n^2) t-SNE to two dimensions.

    After the early-exaggeration phase every accepted step is checked to not
    increase KL(P || Q); a step that would is replaced by a plain gradient
    step with backtracking, so the recorded KL history is non-increasing.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if perplexity <= 0 or n < 3 * perplexity:
        raise InvalidPerplexity(f"{n} points cannot support perplexity {perplexity} (need n >= 3*perplexity)")
    labels = list(labels) if labels is not None else [""] * n
    if len(labels) != n:
        raise ShapeError("one label per feature row required")

    p = _conditional_p(_sq_dists(x), perplexity)
    p = np.maximum((p + p.T) / (2 * n), 1e-12)

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []
    kl = None
    for it in range(n_iter):
        exaggerating = it < exaggeration_iters
        p_it = p * early_exaggeration if exaggerating else p
        momentum = 0.5 if it < exaggeration_iters else 0.8
        _, grad = _kl_and_grad(p_it, y)
        gains = np.where(np.sign(grad) != np.sign(update), gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, 0.01)
        cand_update = momentum * update - learning_rate * gains * grad
        cand = y + cand_update
        cand -= cand.mean(axis=0)
        if exaggerating:
            y, update = cand, cand_update
            continue
        if kl is None:
            kl, _ = _kl_and_grad(p, y, need_grad=False)
            history.append(kl)
        cand_kl, _ = _kl_and_grad(p, cand, need_grad=False)
        if cand_kl > kl:
            update = np.zeros_like(y)
            gains = np.ones_like(y)
            step = learning_rate
            for _ in range(30):
                step /= 2
                cand = y - step * grad
                cand -= cand.mean(axis=0)
                cand_kl, _ = _kl_and_grad(p, cand, need_grad=False)
                if cand_kl <= kl:
                    break
            else:
                history.append(kl)
                continue
            cand_update = cand - y
        y, update, kl = cand, cand_update, cand_kl
        history.append(kl)
    return ProjectionMap(y, labels, perplexity, n_iter, seed, history)
