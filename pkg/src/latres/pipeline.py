"""Bundle assembly and persistence for the full restoration pipeline.

A bundle checkpoint is self-contained: both VAEs, the frozen baseline
denoiser, the adapted 16-channel denoiser (adapters, blended input, widened
head), prompt modules, the latent discriminator, optionally the router, and
the complete run configuration in metadata. Stage prerequisites are enforced
through metadata stage tags, not filenames.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch
from torch import Tensor

from .data_io import (Checkpoint, MissingArrayError, RunConfig, load_checkpoint,
                      load_state_from_arrays, save_checkpoint, state_to_arrays)
from .imaging import to_signed, to_unit
from .nets import freeze
from .restorer import (ChannelExpandedUNet, LatentDiscriminator, PromptCueExtractor,
                       PromptEmbedder, UNet, degrade_corpus)
from .router import DecoderRouter, route
from .schedules import NoiseSchedule, cfg_blend, make_schedule, one_step_denoise
from .vae import ANCHOR_CHANNELS, ConvVAE, PatchDiscriminator

STAGE_BASELINE = "baseline"
STAGE_VAE = "stage1-vae"
STAGE_RESTORER = "stage2-restorer"
STAGE_FULL = "full-pipeline"


class StageError(RuntimeError):
    """A required earlier-stage artifact is missing or mistagged."""


def _config_from_metadata(meta: dict[str, str]) -> RunConfig:
    if "config" not in meta:
        raise StageError("checkpoint metadata carries no run configuration")
    return RunConfig(**json.loads(meta["config"]))


def check_stage(ckpt: Checkpoint, expected: str | tuple[str, ...], path) -> None:
    expected = (expected,) if isinstance(expected, str) else expected
    stage = ckpt.metadata.get("stage", "<untagged>")
    if stage not in expected:
        raise StageError(
            f"{path} is tagged stage={stage!r}, need one of {', '.join(expected)}"
        )


def base_metadata(config: RunConfig, stage: str) -> dict[str, str]:
    return {
        "stage": stage,
        "config": json.dumps(config.to_dict(), sort_keys=True),
        "config_hash": config.config_hash(),
        "seed": str(config.seed),
        "tau": str(config.tau),
        "schedule": f"{config.schedule_kind}:{config.beta_start}:{config.beta_end}:{config.schedule_T}",
        "perceptual_seed": str(config.perceptual_seed),
    }


# --------------------------------------------------------------------------
# Baseline and stage-1 persistence


def save_baseline_checkpoint(path, config: RunConfig, vae4: ConvVAE,
                             disc: PatchDiscriminator, unet4: UNet,
                             extra: dict[str, str] | None = None) -> None:
    arrays = {}
    arrays.update(state_to_arrays(vae4, "vae4."))
    arrays.update(state_to_arrays(disc, "disc4."))
    arrays.update(state_to_arrays(unet4, "unet4."))
    meta = base_metadata(config, STAGE_BASELINE)
    meta.update(extra or {})
    save_checkpoint(path, arrays, meta)


def load_baseline_checkpoint(path) -> tuple[RunConfig, ConvVAE, UNet]:
    ckpt = load_checkpoint(path)
    check_stage(ckpt, STAGE_BASELINE, path)
    config = _config_from_metadata(ckpt.metadata)
    vae4 = ConvVAE(ANCHOR_CHANNELS, config.vae_widths)
    load_state_from_arrays(vae4, ckpt.arrays, "vae4.")
    unet4 = UNet(ANCHOR_CHANNELS, ANCHOR_CHANNELS, config.unet_widths, config.cond_dim)
    load_state_from_arrays(unet4, ckpt.arrays, "unet4.")
    freeze(vae4).eval()
    freeze(unet4).eval()
    return config, vae4, unet4


def save_stage1_checkpoint(path, config: RunConfig, vae: ConvVAE,
                           disc: PatchDiscriminator,
                           extra: dict[str, str] | None = None) -> None:
    c = vae.latent_channels
    arrays = {}
    arrays.update(state_to_arrays(vae, f"vae{c}."))
    arrays.update(state_to_arrays(disc, f"disc{c}."))
    meta = base_metadata(config, STAGE_VAE)
    meta["latent_channels"] = str(c)
    meta.update(extra or {})
    save_checkpoint(path, arrays, meta)


def load_stage1_checkpoint(path) -> tuple[RunConfig, ConvVAE]:
    ckpt = load_checkpoint(path)
    check_stage(ckpt, STAGE_VAE, path)
    config = _config_from_metadata(ckpt.metadata)
    c = int(ckpt.metadata.get("latent_channels", "16"))
    vae = ConvVAE(c, config.vae_widths)
    load_state_from_arrays(vae, ckpt.arrays, f"vae{c}.")
    freeze(vae).eval()
    return config, vae


# --------------------------------------------------------------------------
# Full bundle


class RestorerBundle:
    """Everything needed for routed one-step restoration, with invocation
    counters that let tests assert the single-denoise and exactly-one-decoder
    contracts."""

    def __init__(self, config: RunConfig, vae16: ConvVAE, vae4: ConvVAE,
                 unet4: UNet, restorer: ChannelExpandedUNet,
                 cue_extractor: PromptCueExtractor, embedder: PromptEmbedder,
                 latent_disc: LatentDiscriminator,
                 router: DecoderRouter | None = None):
        self.config = config
        self.schedule: NoiseSchedule = make_schedule(
            config.schedule_T, config.beta_start, config.beta_end, config.schedule_kind
        )
        self.vae16 = freeze(vae16).eval()
        self.vae4 = freeze(vae4).eval()
        self.unet4 = freeze(unet4).eval()
        self.restorer = restorer.eval()
        self.restorer.alpha = 1.0
        self.cue_extractor = cue_extractor.eval()
        self.embedder = embedder.eval()
        self.latent_disc = latent_disc.eval()
        self.router = router.eval() if router is not None else None
        self.denoise_calls = 0
        self.decode_counts = {"d4": 0, "d16": 0}

    def reset_counters(self) -> None:
        self.denoise_calls = 0
        self.decode_counts = {"d4": 0, "d16": 0}

    # -- inference ---------------------------------------------------------

    @staticmethod
    def _batched(img: Tensor) -> Tensor:
        return img.unsqueeze(0) if img.dim() == 3 else img

    @torch.no_grad()
    def restore_latent(self, lq_unit: Tensor) -> tuple[Tensor, Tensor]:
        """LQ image -> (z_L, restored z). Deterministic: the encoded LQ mean
        is used directly as the noised latent at tau, and exactly one
        inversion step runs per call (two denoiser passes for guidance)."""
        lq_signed = to_signed(self._batched(lq_unit))
        z_l = self.vae16.encode(lq_signed).mean
        cues = self.cue_extractor(lq_signed)
        p_pos = self.embedder(cues.pos)
        p_neg = self.embedder(cues.neg)
        eps_pos = self.restorer(z_l, self.config.tau, p_pos)
        eps_neg = self.restorer(z_l, self.config.tau, p_neg)
        eps = cfg_blend(eps_pos, eps_neg, self.config.lambda_cfg)
        z_hat = one_step_denoise(z_l, eps, self.config.tau, self.schedule)
        self.denoise_calls += 1
        return z_l, z_hat

    @torch.no_grad()
    def decode_full(self, z_hat: Tensor) -> Tensor:
        self.decode_counts["d16"] += 1
        return to_unit(self.vae16.decode(z_hat)).clamp(0.0, 1.0)

    @torch.no_grad()
    def decode_anchor(self, z_hat: Tensor) -> Tensor:
        self.decode_counts["d4"] += 1
        return to_unit(self.vae4.decode(z_hat[:, :ANCHOR_CHANNELS])).clamp(0.0, 1.0)

    @torch.no_grad()
    def route_probability(self, z_l: Tensor, z_hat: Tensor) -> float:
        if self.router is None:
            raise MissingArrayError(
                "bundle has no router; run the router training stage or pass "
                "an explicit decoder choice"
            )
        from .router import router_input

        return float(torch.sigmoid(self.router(router_input(z_l, z_hat))))

    @torch.no_grad()
    def restore_one_step(self, lq_unit: Tensor, route_mode: str = "d16",
                         threshold: float | None = None) -> tuple[Tensor, Tensor, Tensor, str]:
        """Full chain; returns (restored unit image, z_L, z_hat, decoder tag).
        route_mode: 'd4', 'd16', or 'auto' (router decides per sample)."""
        z_l, z_hat = self.restore_latent(lq_unit)
        if route_mode == "auto":
            prob = self.route_probability(z_l, z_hat)
            choice = route(prob, self.config.threshold if threshold is None else threshold)
        elif route_mode == "d4":
            choice = "use_d4ch"
        elif route_mode == "d16":
            choice = "use_d16ch"
        else:
            raise ValueError(f"unknown route mode {route_mode!r}")
        if choice == "use_d4ch":
            img = self.decode_anchor(z_hat)
        else:
            img = self.decode_full(z_hat)
        squeeze = lq_unit.dim() == 3
        return (img.squeeze(0) if squeeze else img), z_l, z_hat, choice

    def iter_pairs(self, corpus, config: RunConfig):
        """Yields (id, LQ, HQ) unit-range single-image batches with the same
        deterministic degradation convention used in training."""
        lq_all = degrade_corpus(corpus, config)
        for i, (sample_id, hq) in enumerate(corpus.items):
            yield sample_id, lq_all[i].unsqueeze(0), hq.unsqueeze(0)

    # -- persistence -------------------------------------------------------

    def save(self, path, extra: dict[str, str] | None = None) -> None:
        arrays = {}
        arrays.update(state_to_arrays(self.vae16, "vae16."))
        arrays.update(state_to_arrays(self.vae4, "vae4."))
        arrays.update(state_to_arrays(self.unet4, "unet4."))
        arrays.update(state_to_arrays(self.restorer, "restorer."))
        arrays.update(state_to_arrays(self.cue_extractor, "cues."))
        arrays.update(state_to_arrays(self.embedder, "embedder."))
        arrays.update(state_to_arrays(self.latent_disc, "latent_disc."))
        stage = STAGE_RESTORER if self.router is None else STAGE_FULL
        if self.router is not None:
            arrays.update(state_to_arrays(self.router, "router."))
        meta = base_metadata(self.config, stage)
        meta.update(extra or {})
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "RestorerBundle":
        ckpt = load_checkpoint(path)
        check_stage(ckpt, (STAGE_RESTORER, STAGE_FULL), path)
        config = _config_from_metadata(ckpt.metadata)
        vae16 = ConvVAE(16, config.vae_widths)
        load_state_from_arrays(vae16, ckpt.arrays, "vae16.")
        vae4 = ConvVAE(ANCHOR_CHANNELS, config.vae_widths)
        load_state_from_arrays(vae4, ckpt.arrays, "vae4.")
        unet4 = UNet(ANCHOR_CHANNELS, ANCHOR_CHANNELS, config.unet_widths, config.cond_dim)
        load_state_from_arrays(unet4, ckpt.arrays, "unet4.")
        body = UNet(ANCHOR_CHANNELS, ANCHOR_CHANNELS, config.unet_widths, config.cond_dim)
        restorer = ChannelExpandedUNet(body, 16, config.lora_rank)
        load_state_from_arrays(restorer, ckpt.arrays, "restorer.")
        cue_extractor = PromptCueExtractor()
        load_state_from_arrays(cue_extractor, ckpt.arrays, "cues.")
        embedder = PromptEmbedder(32, config.cond_dim)
        load_state_from_arrays(embedder, ckpt.arrays, "embedder.")
        latent_disc = LatentDiscriminator(16)
        load_state_from_arrays(latent_disc, ckpt.arrays, "latent_disc.")
        router = None
        if ckpt.metadata.get("stage") == STAGE_FULL:
            router = DecoderRouter(dropout=config.router_dropout)
            load_state_from_arrays(router, ckpt.arrays, "router.")
        return cls(config, vae16, vae4, unet4, restorer, cue_extractor, embedder,
                   latent_disc, router)
