"""Configurable-channel convolutional VAE, the anchor-channel distillation
objective, and stage-1 training against a frozen 4-channel reference VAE.

Latents have C in {4, 8, 16} channels at 1/8 spatial resolution. For C=16 the
first 4 channels are the anchor group (kept L1-aligned to the frozen
4-channel encoder during training) and the remaining 12 are the refine group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data_io import Corpus, RunConfig, append_jsonl
from .imaging import PerceptualProxy, edge_magnitude, to_signed
from .nets import Downsample, ResBlock, Upsample, freeze
from .training import (batch_indices, global_grad_norm, make_lr_scheduler,
                       seed_everything, trainable_parameters)

ANCHOR_CHANNELS = 4
LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


@dataclass
class LossWeights:
    lambda_p: float = 2.0
    lambda_e: float = 2.0
    lambda_kl: float = 1e-6
    lambda_csd: float = 1.0
    lambda_adv: float = 0.5
    lambda_g: float = 0.5
    lambda_cfg: float = 3.5

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "LossWeights":
        return cls(lambda_p=cfg.lambda_p, lambda_e=cfg.lambda_e, lambda_kl=cfg.lambda_kl,
                   lambda_csd=cfg.lambda_csd, lambda_adv=cfg.lambda_adv,
                   lambda_g=cfg.lambda_g, lambda_cfg=cfg.lambda_cfg)


class EncoderOutput(NamedTuple):
    mean: Tensor
    logvar: Tensor


class LatentSplit(NamedTuple):
    anchor: Tensor
    refine: Tensor


def split_latent(z: Tensor) -> LatentSplit:
    """Partitions a 16-channel latent into its 4 anchor + 12 refine channels."""
    if z.shape[-3] != 16:
        raise ValueError(f"split_latent expects 16 channels, got {z.shape[-3]}")
    return LatentSplit(anchor=z[..., :ANCHOR_CHANNELS, :, :],
                       refine=z[..., ANCHOR_CHANNELS:, :, :])


class ConvVAE(nn.Module):
    """Three downsampling stages each way (f=8): a lossless space-to-depth
    step at full resolution (cheap on CPU) followed by two strided conv
    stages with residual blocks; 1x1 head emitting mean and logvar."""

    def __init__(self, latent_channels: int = 16, widths: tuple[int, ...] = (32, 48, 64)):
        super().__init__()
        if latent_channels not in (4, 8, 16):
            raise ValueError(f"latent_channels must be 4, 8, or 16, got {latent_channels}")
        w0, w1, w2 = widths
        self.latent_channels = latent_channels
        self.downsample_factor = 8
        self.enc_stem = nn.Conv2d(12, w0, 3, padding=1)
        self.enc_res1 = ResBlock(w0)
        self.enc_down2 = Downsample(w0, w1)
        self.enc_res2 = ResBlock(w1)
        self.enc_down3 = Downsample(w1, w2)
        self.enc_res3 = ResBlock(w2)
        self.enc_norm = nn.GroupNorm(8, w2)
        self.enc_head = nn.Conv2d(w2, 2 * latent_channels, 1)

        self.dec_in = nn.Conv2d(latent_channels, w2, 1)
        self.dec_res0 = ResBlock(w2)
        self.dec_up1 = Upsample(w2, w1)
        self.dec_res1 = ResBlock(w1)
        self.dec_up2 = Upsample(w1, w0)
        self.dec_res2 = ResBlock(w0)
        self.dec_norm = nn.GroupNorm(8, w0)
        self.dec_head = nn.Conv2d(w0, 12, 3, padding=1)

        # start the posterior sharp: logvar rows biased low so early samples
        # are mean-dominated instead of unit-noise-dominated
        with torch.no_grad():
            self.enc_head.bias[latent_channels:].fill_(-6.0)

    def encode(self, img: Tensor) -> EncoderOutput:
        """Signed-range image -> (mean, logvar), each C x H/8 x W/8."""
        if img.shape[-1] % self.downsample_factor or img.shape[-2] % self.downsample_factor:
            raise ValueError(
                f"spatial size {tuple(img.shape[-2:])} not divisible by "
                f"{self.downsample_factor}"
            )
        h = self.enc_stem(F.pixel_unshuffle(img, 2))
        h = self.enc_res1(h)
        h = self.enc_res2(self.enc_down2(h))
        h = self.enc_res3(self.enc_down3(h))
        h = self.enc_head(F.silu(self.enc_norm(h)))
        mean, logvar = h.chunk(2, dim=1)
        return EncoderOutput(mean=mean, logvar=logvar.clamp(LOGVAR_MIN, LOGVAR_MAX))

    def decode(self, z: Tensor) -> Tensor:
        """Latent -> signed-range image. Rejects latents whose channel count
        does not match this decoder (the 4ch / 16ch routing guard)."""
        if z.shape[-3] != self.latent_channels:
            raise ValueError(
                f"decoder expects {self.latent_channels}-channel latents, "
                f"got {z.shape[-3]}"
            )
        h = self.dec_res0(self.dec_in(z))
        h = self.dec_res1(self.dec_up1(h))
        h = self.dec_res2(self.dec_up2(h))
        h = self.dec_head(F.silu(self.dec_norm(h)))
        return torch.tanh(F.pixel_shuffle(h, 2))


def reparameterize(enc: EncoderOutput, generator: torch.Generator | None = None) -> Tensor:
    eps = torch.randn(enc.mean.shape, generator=generator, dtype=enc.mean.dtype,
                      device=enc.mean.device)
    return enc.mean + torch.exp(enc.logvar * 0.5) * eps


def kl_loss(enc: EncoderOutput) -> Tensor:
    """0.5 * mean(mean^2 + exp(logvar) - 1 - logvar)."""
    return 0.5 * (enc.mean**2 + torch.exp(enc.logvar) - 1.0 - enc.logvar).mean()


def csd_loss(z_anc: Tensor, z_fro: Tensor) -> Tensor:
    """Mean absolute anchor-alignment distillation; no gradient flows into
    the frozen reference latent."""
    if z_anc.shape != z_fro.shape:
        raise ValueError(
            f"shape mismatch: z_anc {tuple(z_anc.shape)} vs z_fro {tuple(z_fro.shape)}"
        )
    return (z_anc - z_fro.detach()).abs().mean()


def vae_reconstruction_loss(img: Tensor, recon: Tensor, weights: LossWeights,
                            proxy: PerceptualProxy) -> Tensor:
    """L1 + lambda_p * perceptual + lambda_e * perceptual-on-edge-maps."""
    if img.shape != recon.shape:
        raise ValueError(f"shape mismatch: {tuple(img.shape)} vs {tuple(recon.shape)}")
    loss = (img - recon).abs().mean()
    if weights.lambda_p:
        loss = loss + weights.lambda_p * proxy(img, recon)
    if weights.lambda_e:
        loss = loss + weights.lambda_e * proxy(edge_magnitude(img), edge_magnitude(recon))
    return loss


def vae_total_loss(l_rec: Tensor, l_kl: Tensor, l_csd: Tensor, l_adv_gen: Tensor,
                   weights: LossWeights) -> Tensor:
    """Reconstruction + (KL, anchor-distillation) regularizers + weighted
    adversarial generator term."""
    return (l_rec + weights.lambda_kl * l_kl + weights.lambda_csd * l_csd
            + weights.lambda_adv * l_adv_gen)


class PatchDiscriminator(nn.Module):
    """Small strided conv net emitting a spatial logit map."""

    def __init__(self, in_channels: int = 3, width: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, width * 2, 4, stride=2, padding=1),
            nn.GroupNorm(8, width * 2),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width * 2, width * 2, 3, padding=1),
            nn.GroupNorm(8, width * 2),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width * 2, 1, 3, padding=1),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


def patch_adversarial(disc: nn.Module, real: Tensor, fake: Tensor) -> tuple[Tensor, Tensor]:
    """Hinge losses over the discriminator's patch logits. The generator loss
    is -mean(logits(fake)); the discriminator loss uses a detached fake."""
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    logits_fake = disc(fake)
    l_gen = -logits_fake.mean()
    l_disc = (F.relu(1.0 - disc(real)).mean()
              + F.relu(1.0 + disc(fake.detach())).mean())
    return l_gen, l_disc


def init_vae_from_baseline(vae: ConvVAE, baseline: ConvVAE) -> None:
    """Copies every shape-matching layer from the frozen 4-channel baseline;
    the two bottleneck convolutions are widened with the baseline's slices
    copied into the first channels and the rest zero-mean small-random."""
    src = baseline.state_dict()
    dst = vae.state_dict()
    gen = torch.Generator().manual_seed(0x5EED)
    c_new, c_old = vae.latent_channels, baseline.latent_channels
    for name, param in dst.items():
        ref = src[name]
        if param.shape == ref.shape:
            param.copy_(ref)
            continue
        small = torch.randn(param.shape, generator=gen) * 0.01
        if name.startswith("enc_head"):
            # output layout is mean(0..C-1) || logvar(C..2C-1)
            small[:c_old] = ref[:c_old]
            small[c_new:c_new + c_old] = ref[c_old:2 * c_old]
        elif name.startswith("dec_in") and param.dim() == 4:
            small[:, :c_old] = ref[:, :c_old]
        else:
            raise RuntimeError(f"unexpected shape mismatch at {name}")
        param.copy_(small)
    vae.load_state_dict(dst)


@torch.no_grad()
def anchor_alignment(vae: ConvVAE, baseline: ConvVAE, images_unit: Tensor) -> float:
    """mean |anchor(E(I)) - E_frozen(I)| over a held-out batch, on posterior means."""
    signed = to_signed(images_unit)
    z = vae.encode(signed).mean
    z_fro = baseline.encode(signed).mean
    return float((z[:, :ANCHOR_CHANNELS] - z_fro).abs().mean())


@torch.no_grad()
def reconstruction_mse(vae: ConvVAE, images_unit: Tensor) -> float:
    signed = to_signed(images_unit)
    recon = vae.decode(vae.encode(signed).mean)
    return float(((recon - signed) ** 2).mean())


def train_vae(config: RunConfig, corpus: Corpus, val: Corpus,
              baseline: ConvVAE | None, *, distill: bool = True,
              log_path=None, seed_offset: int = 0) -> dict:
    """Stage-1 training loop. With `distill` (the default) a frozen baseline
    encoder supplies the anchor-alignment target; baseline=None together with
    distill=False trains the 4-channel reference VAE itself.
    """
    if distill and baseline is None:
        raise ValueError(
            "stage-1 training needs the frozen 4-channel baseline; run the "
            "baseline stage first"
        )
    gen = seed_everything(config.seed + seed_offset)
    weights = LossWeights.from_config(config)
    proxy = PerceptualProxy(seed=config.perceptual_seed)
    latent_channels = config.latent_channels if distill else ANCHOR_CHANNELS
    vae = ConvVAE(latent_channels, config.vae_widths)
    if distill:
        if baseline.latent_channels != ANCHOR_CHANNELS:
            raise ValueError("baseline VAE must be 4-channel")
        freeze(baseline).eval()
        init_vae_from_baseline(vae, baseline)
    disc = PatchDiscriminator()
    opt = torch.optim.AdamW(vae.parameters(), lr=config.lr_vae)
    opt_d = torch.optim.AdamW(disc.parameters(), lr=config.lr_vae)

    iters = config.iters_vae if distill else config.iters_baseline_vae
    sched = make_lr_scheduler(opt, config.lr_schedule, iters)
    adv_start = int(config.adv_warmup_frac * iters)
    images = corpus.images()
    val_images = val.images()
    per_epoch = max(1, math.ceil(len(corpus) / config.batch_size))
    history: list[dict] = []
    loss_hist: list[float] = []
    grad_hist: list[float] = []

    for it, idx in enumerate(batch_indices(len(corpus), config.batch_size, iters, gen)):
        batch = to_signed(images[idx])
        enc = vae.encode(batch)
        z = reparameterize(enc, gen)
        recon = vae.decode(z)

        l_rec = vae_reconstruction_loss(batch, recon, weights, proxy)
        l_kl = kl_loss(enc)
        if distill:
            with torch.no_grad():
                z_fro = baseline.encode(batch).mean
            l_csd = csd_loss(enc.mean[:, :ANCHOR_CHANNELS], z_fro)
        else:
            l_csd = batch.new_zeros(())
        adv_on = weights.lambda_adv > 0 and it >= adv_start
        if adv_on:
            l_gen, l_disc = patch_adversarial(disc, batch, recon)
        else:
            l_gen = batch.new_zeros(())
        total = vae_total_loss(l_rec, l_kl, l_csd, l_gen, weights)

        opt.zero_grad()
        total.backward()
        grad_hist.append(global_grad_norm(vae.parameters()))
        torch.nn.utils.clip_grad_norm_(vae.parameters(), config.grad_clip)
        opt.step()
        sched.step()
        if adv_on:
            opt_d.zero_grad()
            l_disc.backward()
            opt_d.step()
        loss_hist.append(float(total.detach()))

        if (it + 1) % per_epoch == 0 or it + 1 == iters:
            record = {
                "iter": it + 1,
                "loss": float(total.detach()),
                "l_rec": float(l_rec.detach()),
                "l_kl": float(l_kl.detach()),
                "l_csd": float(l_csd.detach()),
                "val_recon_mse": reconstruction_mse(vae, val_images),
            }
            if distill:
                record["anchor_alignment"] = anchor_alignment(vae, baseline, val_images)
            history.append(record)
            if log_path is not None:
                append_jsonl(log_path, record)

    vae.eval()
    return {
        "vae": vae,
        "disc": disc,
        "history": history,
        "loss_history": loss_hist,
        "grad_norms": grad_hist,
        "final_val_recon_mse": history[-1]["val_recon_mse"],
        "final_anchor_alignment": history[-1].get("anchor_alignment"),
    }


def train_baseline_vae(config: RunConfig, corpus: Corpus, val: Corpus,
                       log_path=None) -> dict:
    """Trains the frozen 4-channel reference VAE (the in-repo stand-in for a
    pretrained prior)."""
    return train_vae(config, corpus, val, baseline=None, distill=False,
                     log_path=log_path)
