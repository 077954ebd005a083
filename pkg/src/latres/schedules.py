"""Forward-noising schedule, one-step clean-latent inversion, and guidance blending.

Timesteps are 1-indexed: t ranges over [1, T] and alpha_bar(t) is the product
of (1 - beta_s) for s = 1..t. The default schedule is T=1000 scaled-linear
(betas interpolated linearly in sqrt-beta space) with endpoints 0.00085 and
0.012; tau=249 is the package-wide single-step default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

DEFAULT_T = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_KIND = "scaled_linear"
DEFAULT_TAU = 249
DEFAULT_CFG_SCALE = 3.5


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta / cumulative-alpha tables (float64)."""

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    kind: str = DEFAULT_KIND
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def __post_init__(self):
        object.__setattr__(self, "betas", np.asarray(self.betas, dtype=np.float64))
        object.__setattr__(self, "alpha_bars", np.asarray(self.alpha_bars, dtype=np.float64))
        if len(self.betas) != self.T or len(self.alpha_bars) != self.T:
            raise ValueError(f"schedule tables must have length T={self.T}")

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal-retention factor at 1-indexed timestep t."""
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside schedule range [1, {self.T}]")
        return float(self.alpha_bars[t - 1])


def make_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    kind: str = DEFAULT_KIND,
) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(beta_start**0.5, beta_end**0.5, T, dtype=np.float64) ** 2
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, betas=betas, alpha_bars=alpha_bars, kind=kind,
                         beta_start=beta_start, beta_end=beta_end)


def add_noise(z0: Tensor, eps: Tensor, t: int, schedule: NoiseSchedule) -> Tensor:
    """z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: z0 {tuple(z0.shape)} vs eps {tuple(eps.shape)}")
    abar = schedule.alpha_bar(t)
    return z0 * z0.new_tensor(abar**0.5) + eps * eps.new_tensor((1.0 - abar) ** 0.5)


def one_step_denoise(z_tau: Tensor, eps_pred: Tensor, tau: int, schedule: NoiseSchedule) -> Tensor:
    """Clean-latent estimate (z_tau - sqrt(1 - abar) * eps) / sqrt(abar)."""
    if z_tau.shape != eps_pred.shape:
        raise ValueError(
            f"shape mismatch: z_tau {tuple(z_tau.shape)} vs eps {tuple(eps_pred.shape)}"
        )
    abar = schedule.alpha_bar(tau)
    if abar <= 0.0:
        raise ValueError(f"alpha_bar({tau}) = {abar} is not positive")
    return (z_tau - eps_pred * eps_pred.new_tensor((1.0 - abar) ** 0.5)) / z_tau.new_tensor(abar**0.5)


def cfg_blend(eps_pos: Tensor, eps_neg: Tensor, lambda_cfg: float = DEFAULT_CFG_SCALE) -> Tensor:
    """Guided prediction eps_neg + lambda * (eps_pos - eps_neg), evaluated in
    the symmetric form (1 - lambda) * eps_neg + lambda * eps_pos so the
    endpoints lambda = 0, 1 are bit-exact."""
    if eps_pos.shape != eps_neg.shape:
        raise ValueError(
            f"shape mismatch: eps_pos {tuple(eps_pos.shape)} vs eps_neg {tuple(eps_neg.shape)}"
        )
    lam = eps_pos.new_tensor(lambda_cfg)
    return eps_neg * (1.0 - lam) + eps_pos * lam
