"""One-step latent restoration network: a small timestep/condition UNet, a
blended dual-branch input that bridges the frozen 4-channel prior to the
16-channel latent, an expanded prediction head, low-rank adapters, the
dual-cue prompt modules, and latent-space adversarial training.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data_io import Corpus, RunConfig, append_jsonl
from .imaging import DegradationParams, PerceptualProxy, degrade, to_signed
from .nets import (CondCrossAttention, Downsample, ResBlock, TimeEmbed, Upsample,
                   freeze, sinusoidal_embedding)
from .ops import AttentionPool
from .schedules import NoiseSchedule, add_noise, cfg_blend, make_schedule, one_step_denoise
from .training import (batch_indices, global_grad_norm, make_lr_scheduler,
                       seed_everything, trainable_parameters)
from .vae import ANCHOR_CHANNELS, ConvVAE, LossWeights


class UNet(nn.Module):
    """Three resolution levels with residual blocks, timestep embedding, and
    cross-attention conditioning at the two coarsest levels. `cond=None`
    falls back to a learned null conditioning vector."""

    def __init__(self, in_channels: int = 4, out_channels: int = 4,
                 widths: tuple[int, ...] = (32, 48, 64), cond_dim: int = 64,
                 temb_dim: int = 128):
        super().__init__()
        w0, w1, w2 = widths
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.cond_dim = cond_dim
        self.input_conv = nn.Conv2d(in_channels, w0, 3, padding=1)
        self.time_embed = TimeEmbed(temb_dim)
        self.null_cond = nn.Parameter(torch.zeros(cond_dim))

        self.down_res0 = ResBlock(w0, temb_dim=temb_dim)
        self.down1 = Downsample(w0, w1)
        self.down_res1 = ResBlock(w1, temb_dim=temb_dim)
        self.down_attn1 = CondCrossAttention(w1, cond_dim)
        self.down2 = Downsample(w1, w2)
        self.mid_res1 = ResBlock(w2, temb_dim=temb_dim)
        self.mid_attn = CondCrossAttention(w2, cond_dim)
        self.mid_res2 = ResBlock(w2, temb_dim=temb_dim)
        self.up1 = Upsample(w2, w1)
        self.up_res1 = ResBlock(2 * w1, w1, temb_dim=temb_dim)
        self.up_attn1 = CondCrossAttention(w1, cond_dim)
        self.up0 = Upsample(w1, w0)
        self.up_res0 = ResBlock(2 * w0, w0, temb_dim=temb_dim)
        self.out_norm = nn.GroupNorm(8, w0)
        self.head = nn.Conv2d(w0, out_channels, 3, padding=1)

    def _timestep(self, t, batch: int, device) -> Tensor:
        if not torch.is_tensor(t):
            t = torch.tensor([float(t)], device=device)
        if t.numel() == 1:
            t = t.expand(batch)
        return t

    def features(self, h: Tensor, t, cond: Tensor | None) -> Tensor:
        """Body after the input convolution, up to (and including) the final
        norm/activation that feeds the prediction head."""
        b = h.shape[0]
        temb = self.time_embed(self._timestep(t, b, h.device))
        if cond is None:
            cond = self.null_cond.unsqueeze(0).expand(b, -1)
        h0 = self.down_res0(h, temb)
        h1 = self.down_res1(self.down1(h0), temb)
        h1 = self.down_attn1(h1, cond)
        h2 = self.mid_res1(self.down2(h1), temb)
        h2 = self.mid_attn(h2, cond)
        h2 = self.mid_res2(h2, temb)
        u1 = self.up_res1(torch.cat([self.up1(h2), h1], dim=1), temb)
        u1 = self.up_attn1(u1, cond)
        u0 = self.up_res0(torch.cat([self.up0(u1), h0], dim=1), temb)
        return F.silu(self.out_norm(u0))

    def forward(self, z: Tensor, t, cond: Tensor | None = None) -> Tensor:
        if z.shape[-3] != self.in_channels:
            raise ValueError(
                f"denoiser expects {self.in_channels}-channel latents, got {z.shape[-3]}"
            )
        return self.head(self.features(self.input_conv(z), t, cond))


# --------------------------------------------------------------------------
# Low-rank adaptation


class LoRALinear(nn.Module):
    """base(x) + scale * up(down(x)); base frozen, up zero-initialized so the
    adapter starts as an exact identity-delta."""

    def __init__(self, base: nn.Linear, rank: int, scale: float = 1.0):
        super().__init__()
        if rank > min(base.in_features, base.out_features):
            raise ValueError(
                f"rank {rank} exceeds min(in={base.in_features}, out={base.out_features})"
            )
        self.base = freeze(base)
        self.scale = scale
        self.down = nn.Linear(base.in_features, rank, bias=False)
        self.up = nn.Linear(rank, base.out_features, bias=False)
        nn.init.kaiming_uniform_(self.down.weight, a=math.sqrt(5))
        nn.init.zeros_(self.up.weight)

    def forward(self, x: Tensor) -> Tensor:
        return self.base(x) + self.up(self.down(x)) * self.scale

    def merged_weight(self) -> Tensor:
        return self.base.weight + self.scale * self.up.weight @ self.down.weight


class LoRAConv2d(nn.Module):
    """Conv analog: a same-geometry down conv to `rank` channels followed by a
    zero-initialized 1x1 up conv."""

    def __init__(self, base: nn.Conv2d, rank: int, scale: float = 1.0):
        super().__init__()
        if rank > min(base.in_channels, base.out_channels):
            raise ValueError(
                f"rank {rank} exceeds min(in={base.in_channels}, out={base.out_channels})"
            )
        self.base = freeze(base)
        self.scale = scale
        self.down = nn.Conv2d(base.in_channels, rank, base.kernel_size,
                              stride=base.stride, padding=base.padding, bias=False)
        self.up = nn.Conv2d(rank, base.out_channels, 1, bias=False)
        nn.init.kaiming_uniform_(self.down.weight, a=math.sqrt(5))
        nn.init.zeros_(self.up.weight)

    def forward(self, x: Tensor) -> Tensor:
        return self.base(x) + self.up(self.down(x)) * self.scale


def attach_lora(root: nn.Module, rank: int, scale: float = 1.0,
                exclude: tuple[str, ...] = ()) -> list[str]:
    """Wraps every Linear/Conv2d under root with a low-rank adapter, in
    place, skipping excluded name prefixes. Returns the wrapped names."""

    def excluded(name: str) -> bool:
        return any(name == e or name.startswith(e + ".") for e in exclude)

    wrapped = []
    for parent_name, parent in list(root.named_modules()):
        if isinstance(parent, (LoRALinear, LoRAConv2d)):
            continue
        for child_name, child in list(parent.named_children()):
            full = f"{parent_name}.{child_name}" if parent_name else child_name
            if excluded(full):
                continue
            if isinstance(child, nn.Linear):
                setattr(parent, child_name, LoRALinear(child, rank, scale))
                wrapped.append(full)
            elif isinstance(child, nn.Conv2d):
                setattr(parent, child_name, LoRAConv2d(child, rank, scale))
                wrapped.append(full)
    return wrapped


# --------------------------------------------------------------------------
# Prior-preserving input blend and expanded head


@dataclass
class PPAConfig:
    n_warm: int
    current_alpha: float = 0.0

    def __post_init__(self):
        if self.n_warm < 1:
            raise ValueError(f"n_warm must be >= 1, got {self.n_warm}")


def ppa_alpha(iteration: int, cfg: PPAConfig) -> float:
    """Linear ramp min(1, iteration / n_warm); inference runs at alpha=1."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    cfg.current_alpha = min(1.0, iteration / cfg.n_warm)
    return cfg.current_alpha


def ppa_input_fuse(z: Tensor, alpha: float, prior_in: nn.Module, new_in: nn.Module) -> Tensor:
    """(1 - alpha) * prior_in(anchor channels) + alpha * new_in(full latent)."""
    if z.shape[-3] != new_in.in_channels:
        raise ValueError(
            f"blended input expects {new_in.in_channels} channels, got {z.shape[-3]}"
        )
    return (1.0 - alpha) * prior_in(z[:, :prior_in.in_channels]) + alpha * new_in(z)


class BlendedInput(nn.Module):
    """Dual-branch input: the frozen prior convolution on the anchor channels
    blended with a trainable full-latent convolution. The new branch starts
    as a copy of the prior on the anchor slice with zero weights on the
    refine channels, so the ramp is smooth."""

    def __init__(self, prior_conv: nn.Conv2d, in_channels: int = 16):
        super().__init__()
        self.prior = freeze(prior_conv)
        self.new_in = nn.Conv2d(in_channels, prior_conv.out_channels,
                                prior_conv.kernel_size, padding=prior_conv.padding)
        with torch.no_grad():
            self.new_in.weight.zero_()
            self.new_in.weight[:, :prior_conv.in_channels] = prior_conv.weight
            self.new_in.bias.copy_(prior_conv.bias)

    def forward(self, z: Tensor, alpha: float) -> Tensor:
        return ppa_input_fuse(z, alpha, self.prior, self.new_in)


def expand_output_head(baseline_head: nn.Conv2d, out_channels: int = 16) -> nn.Conv2d:
    """Widened prediction head: the first four output channels carry the
    baseline's weights/bias, the new channels start at zero."""
    head = nn.Conv2d(baseline_head.in_channels, out_channels,
                     baseline_head.kernel_size, padding=baseline_head.padding)
    with torch.no_grad():
        head.weight.zero_()
        head.bias.zero_()
        head.weight[:baseline_head.out_channels] = baseline_head.weight
        head.bias[:baseline_head.out_channels] = baseline_head.bias
    return head


class ChannelExpandedUNet(nn.Module):
    """16-channel one-step denoiser built around a frozen 4-channel baseline:
    blended dual-branch input, LoRA-adapted body, widened trainable head.

    At alpha=0 with zero adapters the anchor slice of the prediction equals
    the frozen baseline's prediction bit for bit.
    """

    def __init__(self, baseline: UNet, latent_channels: int = 16, rank: int = 4,
                 lora_scale: float = 1.0):
        super().__init__()
        freeze(baseline)
        self.latent_channels = latent_channels
        self.base = baseline
        self.blend = BlendedInput(baseline.input_conv, latent_channels)
        self.head = expand_output_head(baseline.head, latent_channels)
        self.lora_names = attach_lora(baseline, rank, lora_scale,
                                      exclude=("input_conv", "head"))
        self.alpha = 1.0

    def forward(self, z: Tensor, t, cond: Tensor | None = None,
                alpha: float | None = None) -> Tensor:
        if z.shape[-3] != self.latent_channels:
            raise ValueError(
                f"denoiser expects {self.latent_channels}-channel latents, "
                f"got {z.shape[-3]}"
            )
        a = self.alpha if alpha is None else alpha
        h = self.blend(z, a)
        return self.head(self.base.features(h, t, cond))


# --------------------------------------------------------------------------
# Dual-cue prompts


class PromptCues:
    def __init__(self, pos: Tensor, neg: Tensor):
        if pos.shape != neg.shape:
            raise ValueError("positive/negative cue maps must share a shape")
        self.pos = pos
        self.neg = neg


class PromptCueExtractor(nn.Module):
    """Shared conv trunk over the LQ input with two heads: restoration-target
    cues and degradation cues."""

    def __init__(self, width: int = 32):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(3, width // 2, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(width // 2, width, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.pos_head = nn.Conv2d(width, width, 3, padding=1)
        self.neg_head = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, img: Tensor) -> PromptCues:
        h = self.trunk(img)
        return PromptCues(pos=self.pos_head(h), neg=self.neg_head(h))


class PromptEmbedder(nn.Module):
    """Cue map -> conditioning vector: two stride-2 convs (4x spatial
    compression), two transformer encoder layers, attention pooling. Shared
    weights across positive and negative cues."""

    def __init__(self, in_channels: int = 32, cond_dim: int = 64, heads: int = 4,
                 use_positions: bool = True):
        super().__init__()
        self.cond_dim = cond_dim
        self.use_positions = use_positions
        self.down1 = nn.Conv2d(in_channels, cond_dim, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(cond_dim, cond_dim, 3, stride=2, padding=1)
        self.encoder = nn.ModuleList([
            nn.TransformerEncoderLayer(cond_dim, heads, dim_feedforward=2 * cond_dim,
                                       dropout=0.0, batch_first=True)
            for _ in range(2)
        ])
        self.pool = AttentionPool(cond_dim)

    def forward(self, cue: Tensor) -> Tensor:
        if cue.shape[-1] % 4 or cue.shape[-2] % 4:
            raise ValueError(
                f"cue spatial size {tuple(cue.shape[-2:])} must be divisible by 4"
            )
        h = F.silu(self.down1(cue))
        h = F.silu(self.down2(h))
        tokens = h.flatten(2).transpose(1, 2)
        if self.use_positions:
            idx = torch.arange(tokens.shape[1], device=tokens.device)
            tokens = tokens + sinusoidal_embedding(idx.float(), self.cond_dim).unsqueeze(0)
        for layer in self.encoder:
            tokens = layer(tokens)
        return self.pool(tokens)


# --------------------------------------------------------------------------
# Latent adversarial objective


class NonFiniteLogitsError(RuntimeError):
    """Discriminator produced non-finite logits; the training step is rejected."""


class LatentDiscriminator(nn.Module):
    """Four conv blocks with timestep embedding on noised latents; outputs a
    probability-ready scalar logit per sample."""

    def __init__(self, in_channels: int = 16, width: int = 32, temb_dim: int = 64):
        super().__init__()
        self.time_embed = TimeEmbed(temb_dim)
        self.stem = nn.Conv2d(in_channels, width, 3, padding=1)
        self.block1 = ResBlock(width, temb_dim=temb_dim)
        self.down1 = Downsample(width, 2 * width)
        self.block2 = ResBlock(2 * width, temb_dim=temb_dim)
        self.down2 = Downsample(2 * width, 2 * width)
        self.block3 = ResBlock(2 * width, temb_dim=temb_dim)
        self.norm = nn.GroupNorm(8, 2 * width)
        self.out = nn.Linear(2 * width, 1)

    def forward(self, z: Tensor, t) -> Tensor:
        if not torch.is_tensor(t):
            t = torch.tensor([float(t)], device=z.device)
        if t.numel() == 1:
            t = t.expand(z.shape[0])
        temb = self.time_embed(t)
        h = self.block1(self.stem(z), temb)
        h = self.block2(self.down1(h), temb)
        h = self.block3(self.down2(h), temb)
        h = F.silu(self.norm(h)).mean(dim=(2, 3))
        return self.out(h).squeeze(-1)


PROB_CLAMP = 1e-6


def latent_adversarial_losses(z_hat: Tensor, z_real: Tensor, disc: nn.Module,
                              schedule: NoiseSchedule,
                              generator: torch.Generator | None = None,
                              t: int | None = None) -> tuple[Tensor, Tensor]:
    """Non-saturating losses on diffusion-noised latents:
    L_G = -E[log D(noise(z_hat, t))],
    L_Dis = -E[log(1 - D(noise(z_hat, t)))] - E[log D(noise(z_real, t))].
    The generator loss never sees z_real; the discriminator loss sees a
    detached z_hat. t is sampled uniformly per batch when not given."""
    if z_hat.shape != z_real.shape:
        raise ValueError(
            f"shape mismatch: z_hat {tuple(z_hat.shape)} vs z_real {tuple(z_real.shape)}"
        )
    if t is None:
        t = int(torch.randint(1, schedule.T + 1, (1,), generator=generator))
    eps_fake = torch.randn(z_hat.shape, generator=generator, dtype=z_hat.dtype)
    eps_real = torch.randn(z_real.shape, generator=generator, dtype=z_real.dtype)

    def prob(z: Tensor, eps: Tensor) -> Tensor:
        logits = disc(add_noise(z, eps.to(z.device), t, schedule), t)
        if not torch.isfinite(logits).all():
            raise NonFiniteLogitsError(f"non-finite discriminator logits at t={t}")
        return torch.sigmoid(logits).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)

    l_g = -prob(z_hat, eps_fake).log().mean()
    p_fake = prob(z_hat.detach(), eps_fake)
    p_real = prob(z_real.detach(), eps_real)
    l_dis = -(1.0 - p_fake).log().mean() - p_real.log().mean()
    return l_g, l_dis


def restorer_total_loss(i_hat: Tensor, i_high: Tensor, l_g: Tensor,
                        weights: LossWeights, proxy: PerceptualProxy) -> Tensor:
    """Image MSE + perceptual distance + lambda_g * latent generator loss."""
    if i_hat.shape != i_high.shape:
        raise ValueError(f"shape mismatch: {tuple(i_hat.shape)} vs {tuple(i_high.shape)}")
    return F.mse_loss(i_hat, i_high) + proxy(i_hat, i_high) + weights.lambda_g * l_g


# --------------------------------------------------------------------------
# Training


def degrade_corpus(corpus: Corpus, config: RunConfig) -> Tensor:
    """Deterministic LQ partner for every HQ image (per-sample seeds)."""
    lq = []
    for i, (_, hq) in enumerate(corpus.items):
        params = DegradationParams(
            blur_sigma=config.blur_sigma, downscale_factor=config.downscale_factor,
            noise_sigma=config.noise_sigma, quantization_levels=config.quantization_levels,
            seed=config.seed * 100003 + i,
        )
        lq.append(degrade(hq, params))
    return torch.stack(lq)


@torch.no_grad()
def encode_all(vae: ConvVAE, images_unit: Tensor, batch: int = 16) -> Tensor:
    outs = []
    for start in range(0, images_unit.shape[0], batch):
        outs.append(vae.encode(to_signed(images_unit[start:start + batch])).mean)
    return torch.cat(outs)


def eps_target(z_l: Tensor, z_h: Tensor, tau: int, schedule: NoiseSchedule) -> Tensor:
    """Noise prediction whose one-step inversion of z_l lands on z_h."""
    abar = schedule.alpha_bar(tau)
    return (z_l - z_h * z_h.new_tensor(abar**0.5)) / z_l.new_tensor((1.0 - abar) ** 0.5)


def train_baseline_unet(config: RunConfig, vae4: ConvVAE, corpus: Corpus, val: Corpus,
                        log_path=None) -> dict:
    """Trains the frozen one-step prior: a 4-channel denoiser regressed onto
    the noise targets that invert LQ latents to HQ latents at fixed tau."""
    gen = seed_everything(config.seed + 101)
    freeze(vae4).eval()
    schedule = make_schedule(config.schedule_T, config.beta_start, config.beta_end,
                             config.schedule_kind)
    unet = UNet(ANCHOR_CHANNELS, ANCHOR_CHANNELS, config.unet_widths, config.cond_dim)
    opt = torch.optim.AdamW(unet.parameters(), lr=config.lr_restorer)
    sched = make_lr_scheduler(opt, config.lr_schedule, config.iters_baseline_unet)

    hq = corpus.images()
    lq = degrade_corpus(corpus, config)
    z_l = encode_all(vae4, lq)
    z_h = encode_all(vae4, hq)
    targets = eps_target(z_l, z_h, config.tau, schedule)

    losses = []
    for it, idx in enumerate(batch_indices(len(corpus), config.batch_size,
                                           config.iters_baseline_unet, gen)):
        pred = unet(z_l[idx], config.tau, None)
        loss = F.mse_loss(pred, targets[idx])
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(unet.parameters(), config.grad_clip)
        opt.step()
        sched.step()
        losses.append(float(loss.detach()))
        if log_path is not None and (it + 1) % 50 == 0:
            append_jsonl(log_path, {"stage": "baseline-unet", "iter": it + 1,
                                    "loss": float(loss.detach())})

    unet.eval()
    with torch.no_grad():
        val_lq = degrade_corpus(val, config)
        zl_v = encode_all(vae4, val_lq)
        zh_v = encode_all(vae4, val.images())
        z0 = one_step_denoise(zl_v, unet(zl_v, config.tau, None), config.tau, schedule)
        val_latent_mse = float(F.mse_loss(z0, zh_v))
    return {"unet": unet, "loss_history": losses, "val_latent_mse": val_latent_mse}


def train_restorer(config: RunConfig, corpus: Corpus, val: Corpus, vae16: ConvVAE,
                   baseline_unet: UNet, *, log_path=None, seed_offset: int = 0) -> dict:
    """Stage-2 loop: LoRA adapters, blended input branch, widened head, and
    prompt modules train against the image MSE + perceptual + latent
    adversarial objective; the VAE and baseline body stay frozen."""
    if vae16.latent_channels != 16:
        raise ValueError("stage-2 training expects the 16-channel VAE")
    gen = seed_everything(config.seed + 202 + seed_offset)
    weights = LossWeights.from_config(config)
    proxy = PerceptualProxy(seed=config.perceptual_seed)
    schedule = make_schedule(config.schedule_T, config.beta_start, config.beta_end,
                             config.schedule_kind)
    freeze(vae16).eval()

    # the wrapper adapts its baseline in place, so work on a private copy
    restorer = ChannelExpandedUNet(copy.deepcopy(baseline_unet), 16, config.lora_rank)
    cue_extractor = PromptCueExtractor()
    embedder = PromptEmbedder(32, config.cond_dim)
    latent_disc = LatentDiscriminator(16)

    gen_params = (trainable_parameters(restorer)
                  + list(cue_extractor.parameters()) + list(embedder.parameters()))
    opt_g = torch.optim.AdamW(gen_params, lr=config.lr_restorer)
    opt_d = torch.optim.AdamW(latent_disc.parameters(), lr=config.lr_restorer)
    sched_g = make_lr_scheduler(opt_g, config.lr_schedule, config.iters_restorer)

    hq = corpus.images()
    lq = degrade_corpus(corpus, config)
    z_l = encode_all(vae16, lq)
    z_h = encode_all(vae16, hq)
    hq_signed = to_signed(hq)
    lq_signed = to_signed(lq)

    ppa = PPAConfig(n_warm=max(1, int(config.ppa_warm_frac * config.iters_restorer)))
    alphas, losses, grad_norms, rejected = [], [], [], 0

    for it, idx in enumerate(batch_indices(len(corpus), config.batch_size,
                                           config.iters_restorer, gen)):
        alpha = ppa_alpha(it, ppa)
        cues = cue_extractor(lq_signed[idx])
        p_pos = embedder(cues.pos)
        p_neg = embedder(cues.neg)
        eps_pos = restorer(z_l[idx], config.tau, p_pos, alpha)
        eps_neg = restorer(z_l[idx], config.tau, p_neg, alpha)
        eps = cfg_blend(eps_pos, eps_neg, weights.lambda_cfg)
        z_hat = one_step_denoise(z_l[idx], eps, config.tau, schedule)
        i_hat = vae16.decode(z_hat)

        try:
            l_g, l_dis = latent_adversarial_losses(z_hat, z_h[idx], latent_disc,
                                                   schedule, gen)
        except NonFiniteLogitsError as exc:
            rejected += 1
            if log_path is not None:
                append_jsonl(log_path, {"stage": "restorer", "iter": it + 1,
                                        "rejected": str(exc)})
            continue
        total = restorer_total_loss(i_hat, hq_signed[idx], l_g, weights, proxy)

        opt_g.zero_grad()
        total.backward()
        norm = global_grad_norm(gen_params)
        torch.nn.utils.clip_grad_norm_(gen_params, config.grad_clip)
        opt_g.step()
        sched_g.step()
        opt_d.zero_grad()
        l_dis.backward()
        opt_d.step()

        alphas.append(alpha)
        losses.append(float(total.detach()))
        grad_norms.append(norm)
        if log_path is not None:
            append_jsonl(log_path, {"stage": "restorer", "iter": it + 1,
                                    "alpha": alpha, "loss": float(total.detach()),
                                    "l_g": float(l_g.detach()), "grad_norm": norm})

    restorer.alpha = 1.0
    restorer.eval()
    cue_extractor.eval()
    embedder.eval()
    latent_disc.eval()
    return {
        "restorer": restorer,
        "cue_extractor": cue_extractor,
        "embedder": embedder,
        "latent_disc": latent_disc,
        "alpha_history": alphas,
        "loss_history": losses,
        "grad_norms": grad_norms,
        "rejected_steps": rejected,
    }
