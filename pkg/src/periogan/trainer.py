"""Training orchestration, checkpoints, image generation and learning-rate sweeps."""
from __future__ import annotations

import base64
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import ganzoo
from .corpus import AugmentationPolicy, Manifest, PixelTensor, augment, center_crop_square, load_image, save_image
from .errors import ChecksumError, ConditioningError, DivergedRun, InvalidConfig
from .quality import embed, fid_from_features, get_embedder

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
STYLEGAN_DEFAULT_RESOLUTION = 256
ALLOWED_OPTIMIZERS = {
    "cgan": ("adam",),
    "wgan": ("rmsprop",),
    "wgan_gp": ("adam",),
    "stylegan2_lite": ("adam",),
}
DEFAULT_BETAS = {
    "cgan": (0.5, 0.999),
    "wgan_gp": (0.5, 0.9),
    "stylegan2_lite": (0.0, 0.99),
}


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str
    image_size: tuple[int, int] = (320, 240)
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    batch_size: int = 60
    budget: float = 1.0
    budget_unit: str = "kimg"  # kimg | epochs | steps
    eval_every_kimg: float = 200.0
    seed: int = 0
    data_seed: int = 0
    z_dim: int | None = None
    base_channels: int = 32
    betas: tuple[float, float] | None = None
    n_critic: int | None = None
    gp_lambda: float = 10.0
    clip_c: float = 0.01
    non_saturating: bool = True
    augment_p: float = 0.75
    fid_samples: int = 1000
    embedder: str = "lite-cnn"
    log_every: int = 1
    samples_per_eval: int = 16
    divergence_limit: float = 1e6
    divergence_patience: int = 100

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if self.betas is not None:
            object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        self.validate()

    def validate(self) -> None:
        if self.model_kind not in ganzoo.MODEL_KINDS:
            raise InvalidConfig(f"unknown model_kind {self.model_kind!r}")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.budget > 0:
            raise InvalidConfig("budget must be > 0")
        if self.budget_unit not in ("kimg", "epochs", "steps"):
            raise InvalidConfig(f"unknown budget unit {self.budget_unit!r}")
        if not self.eval_every_kimg > 0:
            raise InvalidConfig("eval_every_kimg must be > 0")
        if self.optimizer not in ALLOWED_OPTIMIZERS[self.model_kind]:
            raise InvalidConfig(f"{self.model_kind} must be trained with {ALLOWED_OPTIMIZERS[self.model_kind]}, "
                                f"not {self.optimizer!r}")
        if min(self.image_size) < 1:
            raise InvalidConfig(f"bad image size {self.image_size}")
        if self.critic_steps < 1 or self.gp_lambda <= 0 or self.clip_c <= 0:
            raise InvalidConfig("n_critic, gp_lambda and clip_c must be positive")
        if not 0 <= self.augment_p <= 1:
            raise InvalidConfig("augment_p must be in [0, 1]")
        if self.fid_samples < 2 or self.log_every < 1:
            raise InvalidConfig("fid_samples must be >= 2 and log_every >= 1")

    @property
    def critic_steps(self) -> int:
        if self.n_critic is not None:
            return self.n_critic
        return 5 if self.model_kind in ("wgan", "wgan_gp") else 1

    @property
    def adam_betas(self) -> tuple[float, float]:
        return self.betas or DEFAULT_BETAS.get(self.model_kind, (0.5, 0.999))

    def train_size(self) -> tuple[tuple[int, int], str | None]:
        """Resolution the networks actually use, plus a note when it differs from ``image_size``."""
        w, h = self.image_size
        if self.model_kind == "stylegan2_lite" and (w != h or w & (w - 1) or w < 8):
            r = STYLEGAN_DEFAULT_RESOLUTION
            return (r, r), f"stylegan2_lite trains on a {r}x{r} center-crop-and-resize of the {w}x{h} target"
        return (w, h), None

    def total_steps(self, dataset_size: int) -> int:
        if self.budget_unit == "steps":
            return int(math.ceil(self.budget))
        images = self.budget * 1000 if self.budget_unit == "kimg" else self.budget * dataset_size
        return int(math.ceil(images / self.batch_size))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_size"] = list(self.image_size)
        if self.betas is not None:
            d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def format_kimg(images_seen: int) -> str:
    return f"{images_seen // 1000}.{images_seen % 1000:03d}"


@dataclass
class LogRow:
    step: int
    images_seen: int
    loss_d: float
    loss_g: float
    fid: float = math.nan
    wall_s: float = math.nan

    @property
    def kimg(self) -> float:
        return self.images_seen / 1000


@dataclass
class RunLog:
    config: TrainConfig
    rows: list[LogRow] = field(default_factory=list)
    checkpoints: dict[int, str] = field(default_factory=dict)  # images_seen -> path
    best_images_seen: int | None = None
    status: str = "running"
    error: str | None = None
    notes: list[str] = field(default_factory=list)
    run_dir: str | None = None

    def fid_series(self) -> list[tuple[float, float]]:
        return [(r.kimg, r.fid) for r in self.rows if not math.isnan(r.fid)]

    @property
    def best_fid(self) -> float:
        series = [f for _, f in self.fid_series()]
        return min(series) if series else math.nan

    def runlog_csv(self) -> str:
        """CSV text for runlog.csv; wall-clock stays out so reruns are byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kimg", "loss_d", "loss_g", "fid", "wall_s"])
        for r in self.rows:
            w.writerow([format_kimg(r.images_seen), _fmt(r.loss_d), _fmt(r.loss_g), _fmt(r.fid), ""])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kimg", "wall_s"])
        for r in self.rows:
            if not math.isnan(r.fid):
                w.writerow([format_kimg(r.images_seen), f"{r.wall_s:.3f}"])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "status": self.status,
            "error": self.error,
            "model_kind": self.config.model_kind,
            "config_hash": self.config.config_hash(),
            "best_fid": None if math.isnan(self.best_fid) else self.best_fid,
            "best_kimg": None if self.best_images_seen is None else format_kimg(self.best_images_seen),
            "best_checkpoint": self.checkpoints.get(self.best_images_seen),
            "checkpoints": {format_kimg(k): v for k, v in self.checkpoints.items()},
            "notes": self.notes,
        }


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def read_runlog_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_kind: str
    generator: torch.nn.Module
    critic: torch.nn.Module | None
    images_seen: int
    config: dict
    config_hash: str
    rng_state: dict = field(default_factory=dict)

    @property
    def kimg(self) -> float:
        return self.images_seen / 1000

    def save(self, path) -> None:
        tensors = {"generator": self.generator.state_dict()}
        if self.critic is not None:
            tensors["critic"] = self.critic.state_dict()
        buf = io.BytesIO()
        torch.save(tensors, buf)
        blob = buf.getvalue()
        meta = {
            "version": CHECKPOINT_VERSION,
            "model_kind": self.model_kind,
            "generator": self.generator.descriptor(),
            "critic": self.critic.descriptor() if self.critic is not None else None,
            "images_seen": self.images_seen,
            "config": self.config,
            "config_hash": self.config_hash,
            "rng_state": self.rng_state,
            "tensors_sha256": hashlib.sha256(blob).hexdigest(),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            zf.writestr("meta.json", json.dumps(meta, indent=2, sort_keys=True))
            zf.writestr("tensors.pt", blob)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with zipfile.ZipFile(path) as zf:
                meta = json.loads(zf.read("meta.json"))
                blob = zf.read("tensors.pt")
        except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as exc:
            raise ChecksumError(f"corrupt checkpoint {path}: {exc}") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ChecksumError(f"unsupported checkpoint version {meta.get('version')!r}")
        if hashlib.sha256(blob).hexdigest() != meta["tensors_sha256"]:
            raise ChecksumError(f"checkpoint {path} failed its checksum")
        tensors = torch.load(io.BytesIO(blob), map_location="cpu")
        gen = ganzoo.rebuild(meta["generator"])
        gen.load_state_dict(tensors["generator"])
        critic = None
        if meta["critic"] is not None:
            critic = ganzoo.rebuild(meta["critic"])
            critic.load_state_dict(tensors["critic"])
        gen.eval()
        return cls(meta["model_kind"], gen, critic, meta["images_seen"], meta["config"], meta["config_hash"],
                   meta.get("rng_state", {}))

    @property
    def id(self) -> str:
        return f"{self.config_hash}@{format_kimg(self.images_seen)}"


# --------------------------------------------------------------------------
# data


def prepare_corpus(manifest: Manifest, config: TrainConfig) -> tuple[np.ndarray, np.ndarray | None, list[str]]:
    """Decode the manifest at training resolution.

    Returns images (N, 1, H, W), gender class indices (cGAN only) and notes.
    """
    size, note = config.train_size()
    notes = [note] if note else []
    arrays = []
    for rec in manifest.records:
        if note:
            img = center_crop_square(load_image(rec.path), size[0])
        else:
            img = load_image(rec.path, size)
        arrays.append(img.data)
    images = np.stack(arrays)[:, None].astype(np.float32)
    labels = None
    if config.model_kind == "cgan":
        genders = [r.gender.value for r in manifest.records]
        if any(g not in ganzoo.GENDERS for g in genders):
            raise InvalidConfig("cgan training needs every record labeled female or male")
        labels = np.array([ganzoo.GENDERS.index(g) for g in genders], dtype=np.int64)
    return images, labels, notes


class _Sampler:
    """Endless stream of fixed-size index batches over shuffled epochs."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.buffer = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while len(self.buffer) < self.batch_size:
            self.buffer = np.concatenate([self.buffer, self.rng.permutation(self.n)])
        idx, self.buffer = self.buffer[:self.batch_size], self.buffer[self.batch_size:]
        return idx


def _make_optimizer(config: TrainConfig, params):
    if config.optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=config.learning_rate)
    return torch.optim.Adam(params, lr=config.learning_rate, betas=config.adam_betas)


def _set_reference_path() -> None:
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


# --------------------------------------------------------------------------
# training


CriticHook = Callable[[int, torch.nn.Module], None]


class _Trainer:
    def __init__(self, config: TrainConfig, images: np.ndarray, labels: np.ndarray | None,
                 run_dir: Path | None, on_critic_step: CriticHook | None):
        self.cfg = config
        self.images = images
        self.labels = labels
        self.run_dir = run_dir
        self.on_critic_step = on_critic_step
        self.kind = config.model_kind
        size = (images.shape[-1], images.shape[-2])
        self.gen, self.critic = ganzoo.build_models(self.kind, size, config.z_dim, config.base_channels, config.seed)
        self.z_dim = self.gen.z_dim
        self.opt_g = _make_optimizer(config, self.gen.parameters())
        self.opt_d = _make_optimizer(config, self.critic.parameters())
        self.torch_rng = torch.Generator().manual_seed(config.seed + 1)
        self.data_rng = np.random.default_rng(config.data_seed)
        self.sampler = _Sampler(len(images), config.batch_size, self.data_rng)
        self.policy = AugmentationPolicy(config.augment_p, rng_seed=config.data_seed)
        self.aug_rng = self.policy.rng()
        self.embedder = get_embedder(config.embedder, fallback=True)
        self.real_features = embed(images, self.embedder)
        self.eval_z = ganzoo.sample_latent(config.seed + 2, config.fid_samples, self.z_dim)
        self.eval_y = None
        if self.kind == "cgan":
            self.eval_y = ganzoo.one_hot([i % 2 for i in range(config.fid_samples)])
        self.images_seen = 0
        self.step = 0

    def real_batch(self) -> tuple[torch.Tensor, torch.Tensor | None]:
        idx = self.sampler.next()
        batch = self.images[idx]
        if self.cfg.augment_p > 0:
            batch = np.stack([augment(PixelTensor(b[0]), self.policy, self.aug_rng).data for b in batch])[:, None]
        y = None
        if self.labels is not None:
            y = ganzoo.one_hot(self.labels[idx].tolist())
        return torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)), y

    def fake(self, n: int, y: torch.Tensor | None) -> torch.Tensor:
        z = ganzoo.sample_latent(self.torch_rng, n, self.z_dim)
        if isinstance(self.gen, ganzoo.StyleGAN2Generator):
            return self.gen(z, noise_rng=self.torch_rng)
        return self.gen(z, y)

    def _critic(self, x, y):
        return self.critic(x) if y is None else self.critic(x, y)

    def train_step(self) -> tuple[float, float]:
        cfg = self.cfg
        wasserstein = self.kind in ("wgan", "wgan_gp")
        loss_d = None
        for _ in range(cfg.critic_steps):
            real, y = self.real_batch()
            fake = self.fake(real.shape[0], y).detach()
            s_real, s_fake = self._critic(real, y), self._critic(fake, y)
            if wasserstein:
                loss_d = ganzoo.wasserstein_critic_loss(s_real, s_fake)
                if self.kind == "wgan_gp":
                    loss_d = loss_d + ganzoo.gradient_penalty(self.critic, real, fake, self.torch_rng, cfg.gp_lambda)
            else:
                loss_d, _ = ganzoo.adversarial_losses_from_logits(s_real, s_fake, cfg.non_saturating)
            self.opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            self.opt_d.step()
            if self.kind == "wgan":
                ganzoo.clip_weights(self.critic, cfg.clip_c)
            if self.on_critic_step is not None:
                self.on_critic_step(self.step, self.critic)

        y = None if self.labels is None else self.generator_labels()
        fake = self.fake(cfg.batch_size, y)
        s_fake = self._critic(fake, y)
        if wasserstein:
            loss_g = ganzoo.wasserstein_generator_loss(s_fake)
        elif cfg.non_saturating:
            loss_g = torch.nn.functional.softplus(-s_fake).mean()
        else:
            loss_g = -torch.nn.functional.softplus(s_fake).mean()
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()

        self.step += 1
        self.images_seen += cfg.batch_size
        return loss_d.item(), loss_g.item()

    def generator_labels(self) -> torch.Tensor:
        # generator-side labels follow the empirical class frequencies
        idx = self.data_rng.integers(0, len(self.labels), self.cfg.batch_size)
        return ganzoo.one_hot(self.labels[idx].tolist())

    def evaluate(self) -> float:
        self.gen.eval()
        with torch.no_grad():
            outs = []
            noise = torch.Generator().manual_seed(self.cfg.seed + 3)
            for i in range(0, len(self.eval_z), 250):
                z = self.eval_z[i:i + 250]
                if isinstance(self.gen, ganzoo.StyleGAN2Generator):
                    outs.append(self.gen(z, noise_rng=noise))
                else:
                    outs.append(self.gen(z, None if self.eval_y is None else self.eval_y[i:i + 250]))
        self.gen.train()
        fake = torch.cat(outs).numpy()
        if self.run_dir is not None and self.cfg.samples_per_eval:
            sample_dir = self.run_dir / "samples" / format_kimg(self.images_seen)
            sample_dir.mkdir(parents=True, exist_ok=True)
            for j in range(min(self.cfg.samples_per_eval, len(fake))):
                save_image(PixelTensor(fake[j, 0]), sample_dir / f"{j:04d}.png")
        return fid_from_features(self.real_features, embed(fake, self.embedder), self.embedder.id).fid

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.kind, self.gen, self.critic, self.images_seen, self.cfg.to_dict(),
                          self.cfg.config_hash(),
                          {"torch": base64.b64encode(self.torch_rng.get_state().numpy().tobytes()).decode(),
                           "numpy": json.loads(json.dumps(self.data_rng.bit_generator.state, default=int))})


def train(config: TrainConfig, manifest: Manifest, run_dir=None, overwrite: bool = False,
          on_critic_step: CriticHook | None = None, reference_path: bool = True) -> RunLog:
    """Train one model family on ``manifest`` and return its RunLog.

    FID is evaluated (and a checkpoint written when ``run_dir`` is given) at
    kimg 0, every ``eval_every_kimg`` and at the end of the budget.
    ``on_critic_step(step, critic)`` runs after every critic update.
    """
    if len(manifest) == 0:
        raise InvalidConfig("cannot train on an empty manifest")
    if reference_path:
        _set_reference_path()
    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        if (run_path / "runlog.csv").exists() and not overwrite:
            raise FileExistsError(f"{run_path} already holds a run; pass overwrite/--force to replace it")
        run_path.mkdir(parents=True, exist_ok=True)
        (run_path / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))

    images, labels, notes = prepare_corpus(manifest, config)
    t = _Trainer(config, images, labels, run_path, on_critic_step)
    log = RunLog(config, notes=notes, run_dir=str(run_path) if run_path else None)
    for n in notes:
        logger.info(n)
    total = config.total_steps(len(manifest))
    eval_every = int(round(config.eval_every_kimg * 1000))
    start = time.perf_counter()
    runaway = 0

    def do_eval(row: LogRow):
        row.fid = t.evaluate()
        row.wall_s = time.perf_counter() - start
        if log.best_images_seen is None or row.fid < log.best_fid:
            log.best_images_seen = t.images_seen
        if run_path is not None:
            path = run_path / "checkpoints" / f"ckpt_{format_kimg(t.images_seen)}.bin"
            t.checkpoint().save(path)
            log.checkpoints[t.images_seen] = str(path.relative_to(run_path))
        else:
            log.checkpoints[t.images_seen] = ""
        logger.info("kimg %s  fid %.3f", format_kimg(t.images_seen), row.fid)

    try:
        first = LogRow(0, 0, math.nan, math.nan)
        log.rows.append(first)
        do_eval(first)
        for step in range(1, total + 1):
            before = t.images_seen
            loss_d, loss_g = t.train_step()
            if not (math.isfinite(loss_d) and math.isfinite(loss_g)):
                raise DivergedRun(f"non-finite loss at step {step}", _last_finite(log))
            runaway = runaway + 1 if max(abs(loss_d), abs(loss_g)) > config.divergence_limit else 0
            if runaway >= config.divergence_patience:
                raise DivergedRun(f"|loss| above {config.divergence_limit} for {runaway} steps", _last_finite(log))
            crossed = t.images_seen // eval_every > before // eval_every
            if step % config.log_every == 0 or crossed or step == total:
                row = LogRow(step, t.images_seen, loss_d, loss_g)
                log.rows.append(row)
                if crossed or step == total:
                    do_eval(row)
        log.status = "completed"
    except DivergedRun as exc:
        log.status = "diverged"
        log.error = str(exc)
        _persist(log, run_path)
        exc.runlog = log
        raise
    _persist(log, run_path)
    return log


def _last_finite(log: RunLog) -> LogRow | None:
    for row in reversed(log.rows):
        if math.isfinite(row.loss_d) and math.isfinite(row.loss_g):
            return row
    return None


def _persist(log: RunLog, run_path: Path | None) -> None:
    if run_path is None:
        return
    (run_path / "runlog.csv").write_text(log.runlog_csv())
    (run_path / "timing.csv").write_text(log.timing_csv())
    (run_path / "run.json").write_text(json.dumps(log.summary(), indent=2, sort_keys=True))


# --------------------------------------------------------------------------
# generation


def latent_seed(seed: int, index: int) -> int:
    """Independent 63-bit stream seed for image ``index`` of generation seed ``seed``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class Provenance:
    index: int
    seed: int
    latent_seed: int
    gender: str | None
    checkpoint_id: str
    file: str = ""


def regenerate(ckpt: Checkpoint, seed: int, index: int, y: str | None = None) -> np.ndarray:
    """Image ``index`` of the set generated from ``seed`` -- identical to ``generate``'s output."""
    s = latent_seed(seed, index)
    gen = ckpt.generator
    z = ganzoo.sample_latent(s, 1, gen.z_dim)
    cond = None
    if gen.n_classes:
        if y is None:
            raise ConditioningError("conditional checkpoint needs a gender label")
        cond = ganzoo.one_hot(y)
    elif y is not None:
        raise ConditioningError(f"{ckpt.model_kind} checkpoint is unconditional")
    out = ganzoo.generator_forward(gen, z, cond, noise_seed=s + 1)
    return out[0, 0].numpy()


def generate(ckpt: Checkpoint, n: int, seed: int, y: str | Sequence[str] | None = None,
             out_dir=None) -> tuple[np.ndarray, list[Provenance]]:
    """Generate ``n`` images, each reproducible from (checkpoint, seed, index).

    ``y`` is one gender for every image or a per-image sequence (cGAN only).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(y, str) or y is None:
        labels = [y] * n
    else:
        labels = list(y)
        if len(labels) != n:
            raise ConditioningError("need one label per generated image")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    images, prov = [], []
    for i in range(n):
        img = regenerate(ckpt, seed, i, labels[i])
        images.append(img)
        fname = ""
        if out_dir is not None:
            fname = f"{seed}_{i:05d}.png"
            save_image(PixelTensor(img), Path(out_dir) / fname)
        prov.append(Provenance(i, seed, latent_seed(seed, i), labels[i], ckpt.id, fname))
    if out_dir is not None:
        write_provenance(prov, Path(out_dir) / "provenance.csv")
    return np.stack(images)[:, None], prov


def write_provenance(prov: Sequence[Provenance], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "seed", "latent_seed", "gender", "checkpoint_id", "file"])
        for p in prov:
            w.writerow([p.index, p.seed, p.latent_seed, p.gender or "", p.checkpoint_id, p.file])


# --------------------------------------------------------------------------
# sweeps


def hyperparameter_sweep(base: TrainConfig, axis: str, values: Sequence, manifest: Manifest,
                         workspace=None, overwrite: bool = False) -> list[RunLog]:
    """One independent run per value of ``axis``; a diverging run does not stop its siblings.

    With a workspace, each run gets its own directory and a merged
    ``sweep_curves.csv`` (value, kimg, fid) is written alongside.
    """
    if not values:
        raise InvalidConfig("sweep needs at least one value")
    if axis not in {f.name for f in dataclasses.fields(TrainConfig)}:
        raise InvalidConfig(f"unknown sweep axis {axis!r}")
    logs = []
    root = Path(workspace) if workspace is not None else None
    for v in values:
        cfg = dataclasses.replace(base, **{axis: v})
        run_dir = root / f"{axis}={v}" if root is not None else None
        try:
            logs.append(train(cfg, manifest, run_dir, overwrite=overwrite))
        except DivergedRun as exc:
            logger.warning("sweep run %s=%s diverged: %s", axis, v, exc)
            logs.append(exc.runlog)
    if root is not None:
        with open(root / "sweep_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([axis, "kimg", "fid", "status"])
            for v, log in zip(values, logs):
                for r in log.rows:
                    if not math.isnan(r.fid):
                        w.writerow([v, format_kimg(r.images_seen), repr(r.fid), log.status])
    return logs
