from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from periogan import ganzoo
from periogan.errors import ConditioningError, DomainError, EmptyBatch, InvalidBound, ShapeError


# ---------------------------------------------------------------- latents


def test_sample_latent_mean_within_clt_bound():
    z = ganzoo.sample_latent(0, 10_000, 128)
    assert z.shape == (10_000, 128)
    assert torch.all(z.mean(0).abs() < 4 / math.sqrt(10_000))


def test_sample_latent_deterministic():
    assert torch.equal(ganzoo.sample_latent(5, 3, 16), ganzoo.sample_latent(5, 3, 16))
    assert not torch.equal(ganzoo.sample_latent(5, 3, 16), ganzoo.sample_latent(6, 3, 16))


def test_sample_latent_single_512():
    assert ganzoo.sample_latent(1, 1, 512).shape == (1, 512)


# ---------------------------------------------------------------- mapping network


def test_mapping_descriptor_has_eight_affine_512_layers():
    desc = ganzoo.MappingNetwork().descriptor()
    layers = desc["layers"]
    assert len(layers) == 8
    assert all(l["type"] == "affine" and l["in"] == 512 and l["out"] == 512 for l in layers)


def test_mapping_output_dim():
    torch.manual_seed(0)
    m = ganzoo.MappingNetwork()
    assert ganzoo.mapping_forward(m, torch.randn(1, 512)).shape == (1, 512)


def test_mapping_rejects_wrong_dim():
    with pytest.raises(ShapeError):
        ganzoo.MappingNetwork()(torch.randn(2, 128))


def test_mapping_zero_weights_biases_only():
    m = ganzoo.MappingNetwork(z_dim=4, w_dim=4)
    biases = []
    with torch.no_grad():
        for i, layer in enumerate(m.layers):
            layer.weight.zero_()
            b = torch.linspace(-1, 1, 4) * (i + 1)
            layer.bias.copy_(b)
            biases.append(b)
    w = m(torch.zeros(1, 4))
    # with zero weights every layer outputs lrelu(bias); only the last survives
    expect = torch.nn.functional.leaky_relu(biases[-1], 0.2)
    assert torch.allclose(w[0], expect)


def test_mapping_distinct_inputs_distinct_outputs():
    torch.manual_seed(1)
    m = ganzoo.MappingNetwork()
    w = m(torch.randn(2, 512))
    assert not torch.allclose(w[0], w[1])


def test_mapping_deterministic_per_seed():
    g1, _ = ganzoo.build_models("stylegan2_lite", (16, 16), seed=3, base_channels=8)
    g2, _ = ganzoo.build_models("stylegan2_lite", (16, 16), seed=3, base_channels=8)
    z = ganzoo.sample_latent(0, 2, 512)
    assert torch.equal(g1.mapping(z), g2.mapping(z))


# ---------------------------------------------------------------- generators


@pytest.mark.parametrize("kind", ["cgan", "wgan", "wgan_gp"])
@pytest.mark.parametrize("size", [(32, 32), (80, 60)])
def test_dcgan_shapes_and_range(kind, size):
    gen, critic = ganzoo.build_models(kind, size, base_channels=4, seed=0)
    z = ganzoo.sample_latent(0, 3, gen.z_dim)
    y = ganzoo.one_hot(["female", "male", "female"]) if kind == "cgan" else None
    x = ganzoo.generator_forward(gen, z, y)
    assert x.shape == (3, 1, size[1], size[0])
    assert x.abs().max() <= 1
    assert critic(x, y).shape == (3,) if y is not None else critic(x).shape == (3,)


def test_cgan_320x240_output_shape():
    gen, _ = ganzoo.build_models("cgan", (320, 240), base_channels=2, seed=0)
    x = ganzoo.generator_forward(gen, ganzoo.sample_latent(0, 1, 128), ganzoo.one_hot("male"))
    assert x.shape == (1, 1, 240, 320)
    assert x.abs().max() <= 1


def test_cgan_80x160_output_shape():
    gen, _ = ganzoo.build_models("cgan", (80, 160), base_channels=2, seed=0)
    x = ganzoo.generator_forward(gen, ganzoo.sample_latent(0, 1, 128), ganzoo.one_hot("female"))
    assert x.shape == (1, 1, 160, 80)


def test_stylegan_shape_and_noise_determinism():
    gen, critic = ganzoo.build_models("stylegan2_lite", (32, 32), base_channels=8, seed=0)
    z = ganzoo.sample_latent(0, 2, 512)
    a = ganzoo.generator_forward(gen, z, noise_seed=11)
    b = ganzoo.generator_forward(gen, z, noise_seed=11)
    c = ganzoo.generator_forward(gen, z, noise_seed=12)
    assert a.shape == (2, 1, 32, 32)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
    assert critic(a).shape == (2,)


def test_stylegan_requires_square():
    with pytest.raises(ShapeError):
        ganzoo.build_models("stylegan2_lite", (32, 16))


def test_conditioning_errors():
    gen, _ = ganzoo.build_models("cgan", (16, 16), base_channels=2)
    z = ganzoo.sample_latent(0, 2, 128)
    with pytest.raises(ConditioningError):
        gen(z)
    with pytest.raises(ConditioningError):
        gen(z, torch.tensor([[1.0, 1.0], [0.0, 1.0]]))
    ugen, _ = ganzoo.build_models("wgan", (16, 16), base_channels=2)
    with pytest.raises(ConditioningError):
        ugen(z, ganzoo.one_hot(["male", "male"]))


def test_cgan_pure_function_of_label():
    gen, _ = ganzoo.build_models("cgan", (16, 16), base_channels=2, seed=4)
    z = ganzoo.sample_latent(1, 4, 128)
    y = ganzoo.one_hot(["male"] * 4)
    assert torch.equal(ganzoo.generator_forward(gen, z, y), ganzoo.generator_forward(gen, z, y))


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.0, 1e4), seed=st.integers(0, 10_000))
def test_generator_output_range_for_any_finite_z(scale, seed):
    gen = _SMALL_GEN
    z = ganzoo.sample_latent(seed, 2, 128) * scale
    x = ganzoo.generator_forward(gen, z)
    assert torch.isfinite(x).all()
    assert x.abs().max() <= 1


_SMALL_GEN, _ = ganzoo.build_models("wgan", (16, 16), base_channels=2, seed=0)


def test_rebuild_from_descriptor():
    for kind, size in [("cgan", (24, 20)), ("stylegan2_lite", (16, 16))]:
        gen, critic = ganzoo.build_models(kind, size, base_channels=4)
        g2 = ganzoo.rebuild(gen.descriptor())
        c2 = ganzoo.rebuild(critic.descriptor())
        g2.load_state_dict(gen.state_dict())
        c2.load_state_dict(critic.state_dict())
        assert ganzoo.parameter_count(g2) == ganzoo.parameter_count(gen)


# ---------------------------------------------------------------- adversarial losses


def test_perfect_discriminator_loss_zero():
    loss_d, _ = ganzoo.adversarial_losses([1.0, 1.0], [0.0, 0.0])
    assert float(loss_d) == 0.0


def test_half_scores_give_two_log_two():
    loss_d, loss_g = ganzoo.adversarial_losses([0.5] * 4, [0.5] * 4)
    assert float(loss_d) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert float(loss_g) == pytest.approx(math.log(2), abs=1e-12)


def test_saturating_variant():
    _, loss_g = ganzoo.adversarial_losses([0.5], [0.25], non_saturating=False)
    assert float(loss_g) == pytest.approx(math.log(0.75), abs=1e-12)


@pytest.mark.parametrize("bad", [[1.2], [-0.1], [float("nan")]])
def test_adversarial_domain_error(bad):
    with pytest.raises(DomainError):
        ganzoo.adversarial_losses(bad, [0.5])


def test_adversarial_empty():
    with pytest.raises(EmptyBatch):
        ganzoo.adversarial_losses([], [0.5])


def _central_diff(f, x: np.ndarray, h=1e-4):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_adversarial_gradients_match_finite_differences(rng):
    real = rng.uniform(0.1, 0.9, 6)
    fake = rng.uniform(0.1, 0.9, 6)
    r = torch.tensor(real, requires_grad=True)
    f = torch.tensor(fake, requires_grad=True)
    loss_d, _ = ganzoo.adversarial_losses(r, f)
    loss_d.backward()
    num_r = _central_diff(lambda v: float(ganzoo.adversarial_losses(v, fake)[0]), real)
    num_f = _central_diff(lambda v: float(ganzoo.adversarial_losses(real, v)[0]), fake)
    np.testing.assert_allclose(r.grad.numpy(), num_r, atol=1e-5)
    np.testing.assert_allclose(f.grad.numpy(), num_f, atol=1e-5)


def test_logit_form_agrees_with_score_form(rng):
    lr_, lf = torch.tensor(rng.normal(size=8)), torch.tensor(rng.normal(size=8))
    for ns in (True, False):
        a = ganzoo.adversarial_losses(torch.sigmoid(lr_), torch.sigmoid(lf), ns)
        b = ganzoo.adversarial_losses_from_logits(lr_, lf, ns)
        assert torch.allclose(a[0], b[0]) and torch.allclose(a[1], b[1])


# ---------------------------------------------------------------- Wasserstein


def test_wasserstein_simple_cases():
    assert float(ganzoo.wasserstein_critic_loss([1, 1], [0, 0])) == -1.0
    assert float(ganzoo.wasserstein_critic_loss([0.3, -2.0], [0.3, -2.0])) == 0.0
    assert float(ganzoo.wasserstein_generator_loss([2.0, 4.0])) == -3.0


def test_wasserstein_matches_brute_force(rng):
    for _ in range(20):
        real, fake = rng.normal(0, 50, 60), rng.normal(0, 50, 60)
        expect = sum(fake) / 60 - sum(real) / 60
        assert abs(float(ganzoo.wasserstein_critic_loss(real, fake)) - expect) <= 1e-12


def test_wasserstein_empty():
    with pytest.raises(EmptyBatch):
        ganzoo.wasserstein_critic_loss([], [1.0])
    with pytest.raises(EmptyBatch):
        ganzoo.wasserstein_generator_loss([])


def test_wasserstein_gradient_matches_finite_differences(rng):
    real, fake = rng.normal(size=5), rng.normal(size=5)
    f = torch.tensor(fake, requires_grad=True)
    ganzoo.wasserstein_critic_loss(torch.tensor(real), f).backward()
    num = _central_diff(lambda v: float(ganzoo.wasserstein_critic_loss(real, v)), fake)
    np.testing.assert_allclose(f.grad.numpy(), num, rtol=1e-4)


# ---------------------------------------------------------------- gradient penalty


class _Linear(nn.Module):
    def __init__(self, a):
        super().__init__()
        self.a = torch.as_tensor(a, dtype=torch.float64)

    def forward(self, x):
        return (x.flatten(1) * self.a).sum(1)


@pytest.mark.parametrize("d", [1, 4, 9, 100])
def test_gp_sum_critic(d):
    critic = _Linear(torch.ones(d))
    real, fake = torch.randn(8, d, dtype=torch.float64), torch.randn(8, d, dtype=torch.float64)
    gp = ganzoo.gradient_penalty(critic, real, fake, 0, lam=10.0)
    assert float(gp) == pytest.approx(10 * (math.sqrt(d) - 1) ** 2, abs=1e-9)


def test_gp_double_critic_gives_lambda():
    critic = _Linear([2.0])
    gp = ganzoo.gradient_penalty(critic, torch.randn(5, 1, dtype=torch.float64),
                                 torch.randn(5, 1, dtype=torch.float64), 1, lam=7.0)
    assert float(gp) == pytest.approx(7.0, abs=1e-12)


def test_gp_shape_mismatch():
    with pytest.raises(ShapeError):
        ganzoo.gradient_penalty(_Linear([1.0]), torch.zeros(3, 1), torch.zeros(4, 1), 0)


def test_gp_deterministic_per_seed_and_nonnegative():
    torch.manual_seed(0)
    critic = nn.Sequential(nn.Linear(16, 8), nn.Tanh(), nn.Linear(8, 1), nn.Flatten(0))
    real, fake = torch.randn(10, 16), torch.randn(10, 16)
    a = ganzoo.gradient_penalty(critic, real, fake, 42)
    b = ganzoo.gradient_penalty(critic, real, fake, 42)
    assert torch.equal(a, b)
    assert a.item() >= 0


def test_gp_autograd_vs_finite_differences():
    torch.manual_seed(3)
    critic = nn.Sequential(nn.Linear(16, 12), nn.Tanh(), nn.Linear(12, 1), nn.Flatten(0)).double()
    x = torch.randn(4, 16, dtype=torch.float64)
    norms = ganzoo.critic_gradient_norms(critic, x)
    for i in range(4):
        xi = x[i].numpy()
        f = lambda v: critic(torch.tensor(v)[None]).item()
        grad = _central_diff(f, xi, h=1e-5)
        assert abs(np.linalg.norm(grad) - float(norms[i])) < 1e-4


def test_gp_feeds_gradients_to_critic():
    torch.manual_seed(0)
    critic = nn.Sequential(nn.Linear(4, 4), nn.Tanh(), nn.Linear(4, 1), nn.Flatten(0))
    gp = ganzoo.gradient_penalty(critic, torch.randn(6, 4), torch.randn(6, 4), 0)
    gp.backward()
    # the output bias has no effect on input gradients; every weight matrix does
    assert all(m.weight.grad is not None and m.weight.grad.abs().sum() > 0
               for m in critic if isinstance(m, nn.Linear))


# ---------------------------------------------------------------- clipping


def test_clip_example():
    w = torch.tensor([-0.5, 0.005, 0.5])
    ganzoo.clip_weights(w, 0.01)
    assert w.tolist() == pytest.approx([-0.01, 0.005, 0.01])
    assert float(w[1]) == float(torch.tensor(0.005))


def test_clip_inside_bound_bit_exact(rng):
    w = torch.tensor(rng.uniform(-0.009, 0.009, 50), dtype=torch.float32)
    before = w.clone()
    ganzoo.clip_weights([w], 0.01)
    assert torch.equal(w, before)


@pytest.mark.parametrize("c", [0.0, -0.1])
def test_clip_invalid_bound(c):
    with pytest.raises(InvalidBound):
        ganzoo.clip_weights(torch.zeros(3), c)


def test_clip_random_params_bounded():
    g = torch.Generator().manual_seed(0)
    for _ in range(1000):
        w = torch.randn(17, generator=g) * 3
        ganzoo.clip_weights(w, 0.01)
        assert float(w.abs().max()) <= 0.01


def test_clip_module_and_idempotence():
    _, critic = ganzoo.build_models("wgan", (16, 16), base_channels=2, seed=0)
    with torch.no_grad():
        for p in critic.parameters():
            p.mul_(100)
    ganzoo.clip_weights(critic, 0.01)
    once = [p.detach().clone() for p in critic.parameters()]
    ganzoo.clip_weights(critic, 0.01)
    assert all(torch.equal(a, b) for a, b in zip(once, critic.parameters()))
    assert ganzoo.max_abs_weight(critic) <= 0.01
