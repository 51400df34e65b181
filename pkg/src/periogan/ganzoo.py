"""Generator / critic architectures and the adversarial objectives.

Four model families are supported:

* ``cgan``           DCGAN-style generator and discriminator conditioned on gender.
* ``wgan``           same backbone, Wasserstein critic with weight clipping.
* ``wgan_gp``        same backbone, Wasserstein critic with gradient penalty.
* ``stylegan2_lite`` 8-layer mapping network, modulated/demodulated
                     convolutions, per-layer noise injection, skip-connection
                     synthesis.

Every network carries a ``descriptor()`` so checkpoints can rebuild it.
"""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConditioningError, DomainError, EmptyBatch, InvalidBound, ShapeError

MODEL_KINDS = ("cgan", "wgan", "wgan_gp", "stylegan2_lite")
GENDERS = ("female", "male")
STYLE_DIM = 512


def _torch_rng(rng) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(int(rng))
    return g


def sample_latent(rng, n: int, d_z: int) -> torch.Tensor:
    """``n`` i.i.d. standard-normal latent codes of dimension ``d_z``.

    ``rng`` is either a seed or a ``torch.Generator`` (advanced in place).
    """
    if n < 1 or d_z < 1:
        raise ValueError(f"need n >= 1 and d_z >= 1, got n={n}, d_z={d_z}")
    return torch.randn(n, d_z, generator=_torch_rng(rng))


def one_hot(labels, n_classes: int = len(GENDERS)) -> torch.Tensor:
    """Encode gender names or class indices as one-hot rows."""
    if isinstance(labels, (str, int)):
        labels = [labels]
    idx = [GENDERS.index(v) if isinstance(v, str) else int(v) for v in labels]
    if any(i < 0 or i >= n_classes for i in idx):
        raise ConditioningError(f"label index out of range: {idx}")
    return F.one_hot(torch.tensor(idx, dtype=torch.long), n_classes).float()


def _check_condition(y: torch.Tensor | None, n_classes: int, batch: int) -> None:
    if n_classes == 0:
        if y is not None:
            raise ConditioningError("unconditional model received a condition label")
        return
    if y is None:
        raise ConditioningError("conditional model requires a condition label")
    if y.shape != (batch, n_classes):
        raise ConditioningError(f"condition shape {tuple(y.shape)} != ({batch}, {n_classes})")
    if not torch.all(y.sum(dim=1) == 1) or not torch.all((y == 0) | (y == 1)):
        raise ConditioningError("condition rows must be one-hot")


def ladder(size: int, steps: int) -> list[int]:
    """Spatial sizes from coarse to fine, each at least half the next (ceil-halving)."""
    sizes = [size]
    for _ in range(steps):
        sizes.append(math.ceil(sizes[-1] / 2))
    return sizes[::-1]


# --------------------------------------------------------------------------
# DCGAN-style backbone (cGAN, WGAN, WGAN-GP)


class DCGANGenerator(nn.Module):
    """Four transposed-convolution blocks from a projected latent to a (1, H, W) image.

    Non-power-of-two targets are reached by center-cropping each doubled map
    to the next rung of :func:`ladder`.
    """

    n_blocks = 4

    def __init__(self, image_size: tuple[int, int], z_dim: int = 128, n_classes: int = 0, base_channels: int = 32):
        super().__init__()
        self.image_size = tuple(image_size)
        self.z_dim = z_dim
        self.n_classes = n_classes
        self.base_channels = base_channels
        w, h = self.image_size
        self.heights = ladder(h, self.n_blocks)
        self.widths = ladder(w, self.n_blocks)
        ch = [base_channels * m for m in (8, 4, 2, 1)] + [1]
        self.project = nn.Linear(z_dim + n_classes, ch[0] * self.heights[0] * self.widths[0])
        self.project_norm = nn.BatchNorm2d(ch[0])
        self.blocks = nn.ModuleList()
        for i in range(self.n_blocks):
            self.blocks.append(nn.ConvTranspose2d(ch[i], ch[i + 1], 4, 2, 1))
        self.norms = nn.ModuleList(nn.BatchNorm2d(c) for c in ch[1:-1])

    def descriptor(self) -> dict:
        return {"family": "dcgan_generator", "image_size": list(self.image_size), "z_dim": self.z_dim,
                "n_classes": self.n_classes, "base_channels": self.base_channels}

    def forward(self, z: torch.Tensor, y: torch.Tensor | None = None) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.z_dim:
            raise ShapeError(f"expected latent of shape (n, {self.z_dim}), got {tuple(z.shape)}")
        _check_condition(y, self.n_classes, z.shape[0])
        if y is not None:
            z = torch.cat([z, y.to(z.dtype)], dim=1)
        x = self.project(z).view(z.shape[0], -1, self.heights[0], self.widths[0])
        x = F.relu(self.project_norm(x))
        for i, conv in enumerate(self.blocks):
            x = _crop(conv(x), self.heights[i + 1], self.widths[i + 1])
            if i < self.n_blocks - 1:
                x = F.relu(self.norms[i](x))
        return torch.tanh(x)


def _crop(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    top = (x.shape[-2] - h) // 2
    left = (x.shape[-1] - w) // 2
    return x[..., top:top + h, left:left + w]


class DCGANCritic(nn.Module):
    """Strided-convolution critic; returns one unbounded score (logit) per image.

    A conditional critic receives the label as an extra input plane.
    ``norm`` is ``"batch"``, ``"layer"`` or ``"none"``; gradient-penalty
    critics must not use batch statistics.
    """

    def __init__(self, image_size: tuple[int, int], n_classes: int = 0, base_channels: int = 32,
                 n_blocks: int = 4, norm: str = "none", max_mult: int = 8):
        super().__init__()
        self.image_size = tuple(image_size)
        self.n_classes = n_classes
        self.base_channels = base_channels
        self.n_blocks = n_blocks
        self.norm = norm
        self.max_mult = max_mult
        w, h = self.image_size
        if n_classes:
            self.label_plane = nn.Linear(n_classes, h * w)
        in_ch = 1 + (1 if n_classes else 0)
        layers: list[nn.Module] = []
        for i in range(n_blocks):
            out_ch = base_channels * min(2 ** i, max_mult)
            layers.append(nn.Conv2d(in_ch, out_ch, 4, 2, 1))
            if i > 0 and norm == "batch":
                layers.append(nn.BatchNorm2d(out_ch))
            elif i > 0 and norm == "layer":
                layers.append(nn.GroupNorm(1, out_ch))
            layers.append(nn.LeakyReLU(0.2))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        # each k4/s2/p1 conv maps n -> floor(n / 2)
        fh, fw = h, w
        for _ in range(n_blocks):
            fh, fw = fh // 2, fw // 2
        if fh < 1 or fw < 1:
            raise ShapeError(f"image {w}x{h} too small for {n_blocks} strided blocks")
        self.head = nn.Linear(in_ch * fh * fw, 1)

    def descriptor(self) -> dict:
        return {"family": "dcgan_critic", "image_size": list(self.image_size), "n_classes": self.n_classes,
                "base_channels": self.base_channels, "n_blocks": self.n_blocks, "norm": self.norm,
                "max_mult": self.max_mult}

    def forward(self, x: torch.Tensor, y: torch.Tensor | None = None) -> torch.Tensor:
        _check_condition(y, self.n_classes, x.shape[0])
        if y is not None:
            plane = self.label_plane(y.to(x.dtype)).view(x.shape[0], 1, x.shape[-2], x.shape[-1])
            x = torch.cat([x, plane], dim=1)
        return self.head(self.features(x).flatten(1)).squeeze(1)


# --------------------------------------------------------------------------
# StyleGAN2-lite


class MappingNetwork(nn.Module):
    """Eight fully-connected layers turning z into the intermediate latent w."""

    def __init__(self, z_dim: int = STYLE_DIM, w_dim: int = STYLE_DIM, n_layers: int = 8):
        super().__init__()
        self.z_dim, self.w_dim, self.n_layers = z_dim, w_dim, n_layers
        dims = [z_dim] + [w_dim] * n_layers
        self.layers = nn.ModuleList(nn.Linear(dims[i], dims[i + 1]) for i in range(n_layers))

    def descriptor(self) -> dict:
        return {
            "family": "mapping",
            "layers": [{"type": "affine", "in": l.in_features, "out": l.out_features, "activation": "lrelu_0.2"}
                       for l in self.layers],
        }

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.z_dim:
            raise ShapeError(f"mapping expects latent of shape (n, {self.z_dim}), got {tuple(z.shape)}")
        x = z * torch.rsqrt(z.pow(2).mean(dim=1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return x


def mapping_forward(mapping: MappingNetwork, z: torch.Tensor) -> torch.Tensor:
    return mapping(z)


class ModulatedConv2d(nn.Module):
    """Convolution whose weights are scaled per input channel by a style and then demodulated."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, w_dim: int, demodulate: bool = True):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.demodulate = demodulate
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.affine = nn.Linear(w_dim, in_ch)
        nn.init.ones_(self.affine.bias)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        b = x.shape[0]
        style = self.affine(w)  # (b, in)
        weight = self.scale * self.weight[None] * style[:, None, :, None, None]
        if self.demodulate:
            weight = weight * torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        weight = weight.reshape(b * self.out_ch, self.in_ch, self.kernel, self.kernel)
        out = F.conv2d(x.reshape(1, b * self.in_ch, *x.shape[2:]), weight, padding=self.kernel // 2, groups=b)
        return out.reshape(b, self.out_ch, *out.shape[2:]) + self.bias[None, :, None, None]


class NoiseInjection(nn.Module):
    def __init__(self, strength: float = 0.1):
        super().__init__()
        self.strength = nn.Parameter(torch.tensor(float(strength)))

    def forward(self, x: torch.Tensor, noise_rng: torch.Generator | None) -> torch.Tensor:
        noise = torch.randn(x.shape[0], 1, *x.shape[2:], generator=noise_rng, dtype=x.dtype)
        return x + self.strength * noise


class StyleLayer(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, w_dim: int):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, 3, w_dim)
        self.noise = NoiseInjection()

    def forward(self, x, w, noise_rng):
        return F.leaky_relu(self.noise(self.conv(x, w), noise_rng), 0.2)


class StyleGAN2Generator(nn.Module):
    """Mapping network plus a skip-connection synthesis network at a square power-of-two resolution."""

    def __init__(self, resolution: int = 256, z_dim: int = STYLE_DIM, w_dim: int = STYLE_DIM,
                 max_channels: int = 64, min_channels: int = 8):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise ShapeError(f"resolution must be a power of two >= 8, got {resolution}")
        self.resolution, self.z_dim, self.w_dim = resolution, z_dim, w_dim
        self.max_channels, self.min_channels = max_channels, min_channels
        self.image_size = (resolution, resolution)
        self.n_classes = 0
        self.mapping = MappingNetwork(z_dim, w_dim)
        n_up = int(math.log2(resolution)) - 2
        ch = [max(min_channels, max_channels // 2 ** i) for i in range(n_up + 1)]
        self.const = nn.Parameter(torch.randn(1, ch[0], 4, 4))
        self.layers = nn.ModuleList()
        self.to_img = nn.ModuleList()
        in_ch = ch[0]
        for i, c in enumerate(ch):
            block = nn.ModuleList([StyleLayer(in_ch, c, w_dim), StyleLayer(c, c, w_dim)])
            self.layers.append(block)
            self.to_img.append(ModulatedConv2d(c, 1, 1, w_dim, demodulate=False))
            in_ch = c

    def descriptor(self) -> dict:
        return {"family": "stylegan2_lite_generator", "resolution": self.resolution, "z_dim": self.z_dim,
                "w_dim": self.w_dim, "max_channels": self.max_channels, "min_channels": self.min_channels,
                "mapping": self.mapping.descriptor(), "noise_layers": 2 * len(self.layers)}

    def synthesize(self, w: torch.Tensor, noise_rng: torch.Generator | None = None) -> torch.Tensor:
        x = self.const.expand(w.shape[0], -1, -1, -1)
        img = None
        for i, (block, to_img) in enumerate(zip(self.layers, self.to_img)):
            if i > 0:
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            for layer in block:
                x = layer(x, w, noise_rng)
            skip = to_img(x, w)
            if img is None:
                img = skip
            else:
                img = F.interpolate(img, scale_factor=2, mode="bilinear", align_corners=False) + skip
        return torch.tanh(img)

    def forward(self, z: torch.Tensor, y: torch.Tensor | None = None,
                noise_rng: torch.Generator | None = None) -> torch.Tensor:
        _check_condition(y, 0, z.shape[0])
        return self.synthesize(self.mapping(z), noise_rng)


# --------------------------------------------------------------------------
# construction


def build_models(kind: str, image_size: tuple[int, int], z_dim: int | None = None,
                 base_channels: int = 32, seed: int = 0) -> tuple[nn.Module, nn.Module]:
    """Instantiate (generator, critic) for ``kind`` with deterministic initial weights."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    torch.manual_seed(seed)
    if kind == "stylegan2_lite":
        w, h = image_size
        if w != h:
            raise ShapeError("stylegan2_lite needs a square power-of-two image size")
        gen = StyleGAN2Generator(w, z_dim or STYLE_DIM, STYLE_DIM, max_channels=2 * base_channels)
        n_blocks = int(math.log2(w)) - 2
        critic = DCGANCritic((w, h), 0, base_channels // 2 or 1, n_blocks=n_blocks, norm="none")
        return gen, critic
    n_classes = len(GENDERS) if kind == "cgan" else 0
    gen = DCGANGenerator(image_size, z_dim or 128, n_classes, base_channels)
    norm = {"cgan": "batch", "wgan": "none", "wgan_gp": "layer"}[kind]
    critic = DCGANCritic(image_size, n_classes, base_channels, norm=norm)
    return gen, critic


def rebuild(descriptor: dict) -> nn.Module:
    """Recreate an (uninitialised) network from its descriptor."""
    d = dict(descriptor)
    family = d.pop("family")
    if family == "dcgan_generator":
        return DCGANGenerator(tuple(d["image_size"]), d["z_dim"], d["n_classes"], d["base_channels"])
    if family == "dcgan_critic":
        return DCGANCritic(tuple(d["image_size"]), d["n_classes"], d["base_channels"], d["n_blocks"], d["norm"],
                           d.get("max_mult", 8))
    if family == "stylegan2_lite_generator":
        return StyleGAN2Generator(d["resolution"], d["z_dim"], d["w_dim"], d["max_channels"], d["min_channels"])
    raise ValueError(f"unknown network family {family!r}")


def generator_forward(gen: nn.Module, z: torch.Tensor, y: torch.Tensor | None = None,
                      noise_seed: int | None = None) -> torch.Tensor:
    """Evaluate a generator in inference mode; StyleGAN noise is drawn from ``noise_seed``."""
    was_training = gen.training
    gen.eval()
    try:
        with torch.no_grad():
            if isinstance(gen, StyleGAN2Generator):
                rng = _torch_rng(noise_seed) if noise_seed is not None else None
                return gen(z, y, noise_rng=rng)
            return gen(z, y)
    finally:
        gen.train(was_training)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# --------------------------------------------------------------------------
# losses


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def adversarial_losses(d_real, d_fake, non_saturating: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy min-max losses from post-sigmoid scores.

    loss_D = -E[log D(x)] - E[log(1 - D(G(z)))]
    loss_G = -E[log D(G(z))]        (non-saturating, default)
           =  E[log(1 - D(G(z)))]   (saturating)
    """
    d_real, d_fake = _as_tensor(d_real), _as_tensor(d_fake)
    for name, s in (("d_real", d_real), ("d_fake", d_fake)):
        if s.numel() == 0:
            raise EmptyBatch(f"{name} is empty")
        if not torch.all((s >= 0) & (s <= 1)):
            raise DomainError(f"{name} scores must lie in [0, 1]")
    loss_d = -torch.log(d_real).mean() - torch.log1p(-d_fake).mean()
    if non_saturating:
        loss_g = -torch.log(d_fake).mean()
    else:
        loss_g = torch.log1p(-d_fake).mean()
    return loss_d, loss_g


def adversarial_losses_from_logits(logit_real: torch.Tensor, logit_fake: torch.Tensor,
                                   non_saturating: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Same losses as :func:`adversarial_losses` evaluated stably on pre-sigmoid logits."""
    loss_d = F.softplus(-logit_real).mean() + F.softplus(logit_fake).mean()
    if non_saturating:
        loss_g = F.softplus(-logit_fake).mean()
    else:
        loss_g = -F.softplus(logit_fake).mean()
    return loss_d, loss_g


def wasserstein_critic_loss(real_scores, fake_scores) -> torch.Tensor:
    """mean(fake) - mean(real)."""
    real, fake = _as_tensor(real_scores), _as_tensor(fake_scores)
    if real.numel() == 0 or fake.numel() == 0:
        raise EmptyBatch("Wasserstein loss needs non-empty score batches")
    return fake.mean() - real.mean()


def wasserstein_generator_loss(fake_scores) -> torch.Tensor:
    fake = _as_tensor(fake_scores)
    if fake.numel() == 0:
        raise EmptyBatch("Wasserstein loss needs a non-empty score batch")
    return -fake.mean()


def critic_gradient_norms(critic, x: torch.Tensor, y: torch.Tensor | None = None,
                          create_graph: bool = False) -> torch.Tensor:
    """Per-example L2 norm of d critic(x) / dx."""
    x = x.detach().requires_grad_(True)
    out = critic(x) if y is None else critic(x, y)
    grad, = torch.autograd.grad(out.sum(), x, create_graph=create_graph)
    return grad.flatten(1).norm(2, dim=1)


def gradient_penalty(critic, real_batch: torch.Tensor, fake_batch: torch.Tensor, rng,
                     lam: float = 10.0, y: torch.Tensor | None = None) -> torch.Tensor:
    """lam * E[(||grad D(x_hat)||_2 - 1)^2] on random interpolates x_hat = eps*real + (1-eps)*fake.

    One eps ~ U[0, 1] is drawn per example from ``rng`` (seed or torch.Generator).
    """
    if real_batch.shape != fake_batch.shape:
        raise ShapeError(f"real {tuple(real_batch.shape)} and fake {tuple(fake_batch.shape)} differ")
    if lam <= 0:
        raise ValueError(f"penalty weight must be positive, got {lam}")
    n = real_batch.shape[0]
    eps = torch.rand(n, *([1] * (real_batch.ndim - 1)), generator=_torch_rng(rng), dtype=real_batch.dtype)
    x_hat = eps * real_batch.detach() + (1 - eps) * fake_batch.detach()
    norms = critic_gradient_norms(critic, x_hat, y, create_graph=True)
    return lam * ((norms - 1) ** 2).mean()


def clip_weights(params, c: float = 0.01):
    """Clamp every parameter entry into [-c, c] in place and return ``params``.

    Accepts a module, a single tensor or an iterable of tensors.
    """
    if not c > 0:
        raise InvalidBound(f"clip bound must be positive, got {c}")
    if isinstance(params, nn.Module):
        tensors: Iterable[torch.Tensor] = params.parameters()
    elif isinstance(params, torch.Tensor):
        tensors = [params]
    else:
        tensors = params
    with torch.no_grad():
        for p in tensors:
            p.clamp_(-c, c)
    return params


def max_abs_weight(module: nn.Module) -> float:
    return max(float(p.detach().abs().max()) for p in module.parameters())
