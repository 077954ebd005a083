"""Per-sample decoder routing: gating network, preference-dataset
construction, soft-BCE training, and the hard route decision between the
pretrained 4-channel decoder and the fine-tuned 16-channel decoder.

Labels follow the convention y=0 favors the 16-channel decoder and y=1 the
4-channel one; at inference sigmoid(logit) above the threshold selects the
4-channel path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor, nn

from .data_io import RunConfig, append_jsonl, load_checkpoint, save_checkpoint
from .imaging import PSNR_CAP_DB, psnr
from .training import batch_indices, seed_everything

USE_D4CH = "use_d4ch"
USE_D16CH = "use_d16ch"

LABEL_STEP = 0.1


def quantize_label(y: float) -> float:
    """Clamps to [0, 1] and snaps to the 0.1 grid."""
    return round(min(max(y, 0.0), 1.0) * 10.0) / 10.0


class DecoderRouter(nn.Module):
    """Gating network over the concatenated LQ and restored latents.

    Four conv blocks (3x3 conv + group norm + SiLU, twice per block), the
    last three at stride 2; global average and max pooling concatenated,
    then a dropout classification head emitting one scalar logit.
    """

    def __init__(self, in_channels: int = 32, widths: tuple[int, ...] = (32, 64, 128, 256),
                 dropout: float = 0.2):
        super().__init__()
        blocks = []
        prev = in_channels
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            blocks.append(nn.Sequential(
                nn.Conv2d(prev, w, 3, stride=stride, padding=1),
                nn.GroupNorm(8, w), nn.SiLU(),
                nn.Conv2d(w, w, 3, padding=1),
                nn.GroupNorm(8, w), nn.SiLU(),
            ))
            prev = w
        self.blocks = nn.Sequential(*blocks)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(2 * prev, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ValueError(
                f"router input spatial size {tuple(x.shape[-2:])} must be "
                f"divisible by 8"
            )
        h = self.blocks(x)
        gap = h.mean(dim=(2, 3))
        gmp = h.amax(dim=(2, 3))
        pooled = torch.cat([gap, gmp], dim=1)
        return self.out(self.dropout(pooled)).squeeze(-1)


def router_input(z_l: Tensor, z_hat: Tensor) -> Tensor:
    """Concatenates the LQ latent and the restored latent channelwise."""
    if z_l.shape[-2:] != z_hat.shape[-2:]:
        raise ValueError(
            f"latents must share spatial shape: {tuple(z_l.shape)} vs {tuple(z_hat.shape)}"
        )
    return torch.cat([z_l, z_hat], dim=-3)


def soft_bce(s_g: Tensor, y: Tensor | float) -> Tensor:
    """-[y log(sigmoid(s)) + (1-y) log(1-sigmoid(s))] with clamped probabilities."""
    if not torch.is_tensor(y):
        y = s_g.new_tensor(y)
    if ((y < 0) | (y > 1)).any():
        raise ValueError("labels must lie in [0, 1]")
    p = torch.sigmoid(s_g).clamp(1e-7, 1.0 - 1e-7)
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean()


def route(prob: float, threshold: float = 0.5) -> str:
    """Hard routing: strictly above the threshold uses the 4-channel decoder."""
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {prob}")
    return USE_D4CH if prob > threshold else USE_D16CH


# --------------------------------------------------------------------------
# Preference dataset


@dataclass
class PreferenceSample:
    sample_id: str
    router_input: Tensor
    label: float
    q_d4: float
    q_d16: float


def quality_score(pred_unit: Tensor, ref_unit: Tensor,
                  perceptual) -> float:
    """Monotone full-reference score: normalized PSNR minus perceptual distance."""
    return psnr(pred_unit, ref_unit) / (PSNR_CAP_DB / 2) - float(perceptual(pred_unit, ref_unit))


def build_preference_dataset(bundle, corpus, config: RunConfig) -> list[PreferenceSample]:
    """Decodes every restored latent with both decoders and labels the pair by
    the quality margin: y = clamp(0.5 + kappa * (Q_4ch - Q_16ch)), quantized
    to 0.1 steps, so y=0 marks a decisive 16-channel win."""
    from .imaging import PerceptualProxy

    proxy = PerceptualProxy(seed=config.perceptual_seed)
    samples = []
    with torch.no_grad():
        for sample_id, lq, hq in bundle.iter_pairs(corpus, config):
            z_l, z_hat = bundle.restore_latent(lq)
            img4 = bundle.decode_anchor(z_hat)
            img16 = bundle.decode_full(z_hat)
            q4 = quality_score(img4, hq, proxy)
            q16 = quality_score(img16, hq, proxy)
            y = quantize_label(0.5 + config.router_kappa * (q4 - q16))
            samples.append(PreferenceSample(
                sample_id=sample_id,
                router_input=router_input(z_l, z_hat).squeeze(0),
                label=y, q_d4=q4, q_d16=q16,
            ))
    if not samples:
        raise ValueError("preference dataset is empty")
    return samples


def save_preference_dataset(samples: list[PreferenceSample], records_path: str | Path,
                            arrays_path: str | Path) -> None:
    """Records as JSONL; latent tensors in a sidecar array container."""
    records_path = Path(records_path)
    records_path.write_text("")
    arrays = {}
    for s in samples:
        append_jsonl(records_path, {
            "sample_id": s.sample_id, "label": s.label,
            "q_d4": s.q_d4, "q_d16": s.q_d16,
            "array": f"router_input.{s.sample_id}",
        })
        arrays[f"router_input.{s.sample_id}"] = s.router_input.numpy()
    save_checkpoint(arrays_path, arrays, {"kind": "preference-dataset",
                                          "count": str(len(samples))})


def load_preference_dataset(records_path: str | Path,
                            arrays_path: str | Path) -> list[PreferenceSample]:
    import json

    container = load_checkpoint(arrays_path)
    samples = []
    for line in Path(records_path).read_text().splitlines():
        rec = json.loads(line)
        container.require(rec["array"])
        samples.append(PreferenceSample(
            sample_id=rec["sample_id"],
            router_input=torch.from_numpy(container.arrays[rec["array"]].copy()),
            label=float(rec["label"]), q_d4=float(rec["q_d4"]), q_d16=float(rec["q_d16"]),
        ))
    return samples


def train_router(config: RunConfig, samples: list[PreferenceSample],
                 log_path=None) -> dict:
    """Optimizes the gating network alone on the preference dataset."""
    if not samples:
        raise ValueError("cannot train the router on an empty preference dataset")
    gen = seed_everything(config.seed + 303)
    router = DecoderRouter(dropout=config.router_dropout)
    opt = torch.optim.AdamW(router.parameters(), lr=config.lr_router)
    inputs = torch.stack([s.router_input for s in samples])
    labels = torch.tensor([s.label for s in samples], dtype=torch.float32)

    losses = []
    router.train()
    for it, idx in enumerate(batch_indices(len(samples), config.batch_size,
                                           config.iters_router, gen)):
        logits = router(inputs[idx])
        loss = soft_bce(logits, labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if log_path is not None and (it + 1) % 50 == 0:
            append_jsonl(log_path, {"stage": "router", "iter": it + 1, "loss": float(loss.detach())})
    router.eval()
    return {"router": router, "loss_history": losses}
