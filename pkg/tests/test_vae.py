import math

import pytest
import torch

from latres.data_io import RunConfig, generate_synthetic_corpus
from latres.imaging import PerceptualProxy, to_signed
from latres.ops import gradient_check
from latres.vae import (ANCHOR_CHANNELS, ConvVAE, EncoderOutput, LossWeights,
                        PatchDiscriminator, csd_loss, init_vae_from_baseline, kl_loss,
                        patch_adversarial, reparameterize, split_latent,
                        vae_reconstruction_loss, vae_total_loss)


@pytest.fixture(scope="module")
def proxy():
    return PerceptualProxy()


def test_encode_shapes():
    vae = ConvVAE(16)
    enc = vae.encode(torch.randn(2, 3, 64, 64))
    assert enc.mean.shape == (2, 16, 8, 8)
    assert enc.logvar.shape == (2, 16, 8, 8)


def test_encode_rejects_indivisible():
    vae = ConvVAE(4)
    with pytest.raises(ValueError):
        vae.encode(torch.randn(1, 3, 60, 64))


def test_encode_deterministic():
    vae = ConvVAE(8)
    x = torch.randn(1, 3, 32, 32)
    a = vae.encode(x)
    b = vae.encode(x)
    assert torch.equal(a.mean, b.mean) and torch.equal(a.logvar, b.logvar)


def test_encode_sensitive_to_single_pixel():
    vae = ConvVAE(16)
    x = torch.randn(1, 3, 32, 32)
    y = x.clone()
    y[0, 0, 7, 9] += 0.5
    assert not torch.equal(vae.encode(x).mean, vae.encode(y).mean)


def test_logvar_clamped():
    enc = ConvVAE(4).encode(torch.randn(1, 3, 32, 32) * 100)
    assert enc.logvar.min() >= -30.0 and enc.logvar.max() <= 20.0


def test_decode_channel_guard():
    vae4 = ConvVAE(4)
    z16 = torch.randn(1, 16, 4, 4)
    with pytest.raises(ValueError):
        vae4.decode(z16)
    out = vae4.decode(z16[:, :4])
    assert out.shape == (1, 3, 32, 32)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_reparameterize_clamp_floor():
    mean = torch.randn(1, 4, 2, 2)
    enc = EncoderOutput(mean=mean, logvar=torch.full_like(mean, -30.0))
    g = torch.Generator().manual_seed(0)
    z = reparameterize(enc, g)
    assert (z - mean).abs().max() <= math.exp(-15.0) * 6


def test_reparameterize_reproducible():
    enc = EncoderOutput(mean=torch.zeros(1, 4, 3, 3), logvar=torch.zeros(1, 4, 3, 3))
    a = reparameterize(enc, torch.Generator().manual_seed(9))
    b = reparameterize(enc, torch.Generator().manual_seed(9))
    assert torch.equal(a, b)


def test_reparameterize_monte_carlo_stats():
    mean = torch.tensor([[[[0.7]]]])
    logvar = torch.tensor([[[[-1.2]]]])
    enc = EncoderOutput(mean=mean.expand(10000, 1, 1, 1),
                        logvar=logvar.expand(10000, 1, 1, 1))
    z = reparameterize(enc, torch.Generator().manual_seed(4))
    std = math.exp(-0.6)
    assert z.mean().item() == pytest.approx(0.7, abs=3 * std / 100)
    assert z.std().item() == pytest.approx(std, rel=0.05)


def test_split_latent_lossless():
    z = torch.randn(2, 16, 4, 4)
    s = split_latent(z)
    assert s.anchor.shape[1] == 4 and s.refine.shape[1] == 12
    assert torch.equal(torch.cat([s.anchor, s.refine], dim=1), z)
    assert torch.equal(split_latent(torch.cat([s.anchor, s.refine], dim=1)).anchor, s.anchor)


def test_split_latent_boundary_channels():
    z = torch.zeros(1, 16, 2, 2)
    z[0, 3] = 3.0
    z[0, 4] = 4.0
    s = split_latent(z)
    assert s.anchor[0, 3, 0, 0] == 3.0
    assert s.refine[0, 0, 0, 0] == 4.0


def test_split_latent_rejects_non16():
    with pytest.raises(ValueError):
        split_latent(torch.randn(1, 8, 4, 4))


def test_csd_loss_values_and_refine_gradient():
    z16 = torch.randn(2, 16, 4, 4, requires_grad=True)
    target = torch.randn(2, 4, 4, 4)
    assert csd_loss(target, target).item() == 0.0
    assert csd_loss(target + 0.5, target).item() == pytest.approx(0.5, abs=1e-6)
    loss = csd_loss(z16[:, :4], target)
    loss.backward()
    assert torch.equal(z16.grad[:, 4:], torch.zeros_like(z16.grad[:, 4:]))
    assert z16.grad[:, :4].abs().sum() > 0


def test_csd_loss_no_gradient_into_reference():
    z_fro = torch.randn(1, 4, 2, 2, requires_grad=True)
    z_anc = torch.randn(1, 4, 2, 2, requires_grad=True)
    csd_loss(z_anc, z_fro).backward()
    assert z_fro.grad is None


def test_kl_loss_values():
    zero = EncoderOutput(mean=torch.zeros(1, 4, 2, 2), logvar=torch.zeros(1, 4, 2, 2))
    assert kl_loss(zero).item() == 0.0
    one = EncoderOutput(mean=torch.ones(1, 4, 2, 2), logvar=torch.zeros(1, 4, 2, 2))
    assert kl_loss(one).item() == pytest.approx(0.5, abs=1e-7)


def test_kl_loss_positive_off_standard_normal():
    for mu in (-1.0, -0.3, 0.4, 2.0):
        for lv in (-2.0, -0.5, 0.5, 1.5):
            enc = EncoderOutput(mean=torch.full((1, 2, 2, 2), mu),
                                logvar=torch.full((1, 2, 2, 2), lv))
            assert kl_loss(enc).item() > 0
    grid = [EncoderOutput(torch.zeros(1, 1, 1, 1), torch.zeros(1, 1, 1, 1))]
    assert all(kl_loss(e).item() == 0.0 for e in grid)


def test_reconstruction_loss_zero_at_identity(proxy):
    img = to_signed(torch.rand(2, 3, 16, 16))
    w = LossWeights()
    assert vae_reconstruction_loss(img, img, w, proxy).item() == pytest.approx(0.0, abs=1e-6)


def test_reconstruction_loss_reduces_to_l1(proxy):
    g = torch.Generator().manual_seed(1)
    a = to_signed(torch.rand(1, 3, 16, 16, generator=g))
    b = to_signed(torch.rand(1, 3, 16, 16, generator=g))
    w = LossWeights(lambda_p=0.0, lambda_e=0.0)
    assert vae_reconstruction_loss(a, b, w, proxy).item() == pytest.approx(
        (a - b).abs().mean().item(), abs=1e-7)


def test_loss_weights_defaults_and_validation():
    w = LossWeights()
    assert w.lambda_p == 2.0 and w.lambda_e == 2.0
    with pytest.raises(ValueError):
        LossWeights(lambda_csd=-1.0)


def test_total_loss_reduction_and_linearity():
    l_rec = torch.tensor(1.25)
    kl = torch.tensor(3.0)
    csd = torch.tensor(0.5)
    adv = torch.tensor(2.0)
    w0 = LossWeights(lambda_kl=0.0, lambda_csd=0.0, lambda_adv=0.0)
    assert vae_total_loss(l_rec, kl, csd, adv, w0).item() == pytest.approx(1.25)
    w1 = LossWeights(lambda_kl=0.0, lambda_csd=1.0, lambda_adv=0.0)
    w2 = LossWeights(lambda_kl=0.0, lambda_csd=2.0, lambda_adv=0.0)
    t1 = vae_total_loss(l_rec, kl, csd, adv, w1) - vae_total_loss(l_rec, kl, csd, adv, w0)
    t2 = vae_total_loss(l_rec, kl, csd, adv, w2) - vae_total_loss(l_rec, kl, csd, adv, w0)
    assert t2.item() == pytest.approx(2 * t1.item(), abs=1e-7)


def test_patch_adversarial_formulas():
    class ZeroDisc(torch.nn.Module):
        def forward(self, x):
            return torch.zeros(x.shape[0], 1, 4, 4)

    real = torch.rand(2, 3, 16, 16)
    fake = torch.rand(2, 3, 16, 16)
    l_gen, l_disc = patch_adversarial(ZeroDisc(), real, fake)
    assert l_gen.item() == pytest.approx(0.0)
    assert l_disc.item() == pytest.approx(2.0)


def test_patch_adversarial_real_gets_no_generator_gradient():
    disc = PatchDiscriminator()
    real = torch.rand(1, 3, 16, 16, requires_grad=True)
    fake = torch.rand(1, 3, 16, 16, requires_grad=True)
    l_gen, _ = patch_adversarial(disc, real, fake)
    l_gen.backward()
    assert real.grad is None
    assert fake.grad is not None


def test_init_from_baseline_copies_and_widens():
    torch.manual_seed(0)
    base = ConvVAE(4)
    wide = ConvVAE(16)
    init_vae_from_baseline(wide, base)
    assert torch.equal(wide.enc_stem.weight, base.enc_stem.weight)
    # mean rows 0..3 and logvar rows 16..19 carry the baseline head
    assert torch.equal(wide.enc_head.weight[:4], base.enc_head.weight[:4])
    assert torch.equal(wide.enc_head.weight[16:20], base.enc_head.weight[4:8])
    assert torch.equal(wide.dec_in.weight[:, :4], base.dec_in.weight)
    assert wide.enc_head.weight[4:16].abs().max() < 0.1


def test_stage1_loss_gradient_checks_double_precision(proxy):
    g = torch.Generator().manual_seed(12)
    target = torch.rand(1, 3, 12, 12, generator=g, dtype=torch.float64) * 2 - 1
    point = torch.rand(1, 3, 12, 12, generator=g, dtype=torch.float64) * 2 - 1
    w = LossWeights()

    err = gradient_check(lambda v: vae_reconstruction_loss(target, v, w, proxy),
                         point, step=1e-6)
    assert err <= 1e-3

    mean = torch.randn(1, 8, 3, 3, generator=g, dtype=torch.float64)
    err = gradient_check(
        lambda v: kl_loss(EncoderOutput(v, torch.zeros_like(v))), mean, step=1e-6)
    assert err <= 1e-3
    logvar = torch.randn(1, 8, 3, 3, generator=g, dtype=torch.float64) * 0.5
    err = gradient_check(
        lambda v: kl_loss(EncoderOutput(mean, v)), logvar, step=1e-6)
    assert err <= 1e-3

    z_fro = torch.randn(1, 4, 4, 4, generator=g, dtype=torch.float64)
    z = torch.randn(1, 4, 4, 4, generator=g, dtype=torch.float64)
    err = gradient_check(lambda v: csd_loss(v, z_fro), z, step=1e-6)
    assert err <= 1e-3

    disc = PatchDiscriminator().double()
    real = torch.rand(1, 3, 16, 16, generator=g, dtype=torch.float64)
    err = gradient_check(
        lambda v: patch_adversarial(disc, real, v)[0], real + 0.1, step=1e-6)
    assert err <= 1e-3


def test_train_vae_requires_baseline():
    from latres.vae import train_vae

    cfg = RunConfig(n_train=4, n_val=2, image_size=32)
    corpus = generate_synthetic_corpus(4, 32, seed=0)
    val = generate_synthetic_corpus(2, 32, seed=1, split_tag="val")
    with pytest.raises(ValueError) as exc:
        train_vae(cfg, corpus, val, baseline=None, distill=True)
    assert "baseline stage" in str(exc.value)


def test_vae_gradient_flow_end_to_end():
    vae = ConvVAE(16).double()
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1
    enc = vae.encode(x)
    z = reparameterize(enc, torch.Generator().manual_seed(0))
    recon = vae.decode(z)
    loss = (recon - x).abs().mean() + 1e-6 * kl_loss(enc)
    loss.backward()
    grads = [p.grad for p in vae.parameters() if p.grad is not None]
    assert len(grads) > 0
    assert all(torch.isfinite(g).all() for g in grads)
