"""Synthetic corpus generation, PNG ingestion, checkpoint persistence, and
run configuration.

The checkpoint container is a single-file archive: a fixed magic, a format
version, a JSON block describing named arrays and string metadata, then the
raw little-endian array payload. Writes are atomic (temp file + rename) and
round trips are byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

CHECKPOINT_MAGIC = b"LRCK"
CHECKPOINT_VERSION = 1

DOWNSAMPLE_FACTOR = 8  # three stride-2 stages in both VAE and router


class CheckpointError(RuntimeError):
    pass


class CheckpointCorruptError(CheckpointError):
    """File is truncated or structurally malformed."""


class CheckpointVersionError(CheckpointError):
    """File declares an unsupported format version."""


class MissingArrayError(CheckpointError):
    """A required named array is absent from the checkpoint."""


class ConfigError(ValueError):
    pass


@dataclass
class Checkpoint:
    format_version: int
    arrays: dict[str, np.ndarray]
    metadata: dict[str, str]

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.arrays]
        if missing:
            raise MissingArrayError(f"checkpoint missing arrays: {', '.join(missing)}")

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        plen = len(prefix)
        return {k[plen:]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    metadata: dict[str, str] | None = None) -> None:
    path = Path(path)
    meta = {str(k): str(v) for k, v in (metadata or {}).items()}
    index = {}
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes(order="C")
        index[name] = {
            "shape": list(arr.shape),
            "dtype": le.dtype.str,
            "offset": offset,
            "nbytes": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": CHECKPOINT_VERSION, "arrays": index, "metadata": meta},
        sort_keys=True,
    ).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointCorruptError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError(f"{path} is not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<IQ", data[4:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path} has format version {version}, expected {CHECKPOINT_VERSION}"
        )
    if len(data) < 16 + header_len:
        raise CheckpointCorruptError(f"{path} truncated inside header")
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path} has a malformed header: {exc}") from exc
    payload = data[16 + header_len:]
    arrays = {}
    for name, info in header["arrays"].items():
        start, nbytes = info["offset"], info["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointCorruptError(f"{path} truncated inside array {name!r}")
        arr = np.frombuffer(
            payload[start:start + nbytes], dtype=np.dtype(info["dtype"])
        ).reshape(info["shape"])
        arrays[name] = arr.copy()
    return Checkpoint(
        format_version=header["format_version"],
        arrays=arrays,
        metadata=dict(header.get("metadata", {})),
    )


def state_to_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_from_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray],
                           prefix: str = "") -> None:
    """Loads a state dict from named arrays without partially mutating the
    module: all arrays are validated before any parameter is touched."""
    wanted = module.state_dict()
    staged = {}
    missing = []
    for name, ref in wanted.items():
        key = prefix + name
        if key not in arrays:
            missing.append(key)
            continue
        staged[name] = torch.from_numpy(np.ascontiguousarray(arrays[key])).to(ref.dtype)
    if missing:
        raise MissingArrayError(f"checkpoint missing arrays: {', '.join(missing)}")
    module.load_state_dict(staged)


# --------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 64
    n_train: int = 512
    n_val: int = 64
    latent_channels: int = 16
    vae_widths: tuple[int, ...] = (32, 48, 64)
    unet_widths: tuple[int, ...] = (32, 48, 64)
    cond_dim: int = 64
    lora_rank: int = 4
    # loss weights (restoration-quality defaults)
    lambda_p: float = 2.0
    lambda_e: float = 2.0
    lambda_kl: float = 1e-6
    lambda_csd: float = 1.0
    lambda_adv: float = 0.5
    lambda_g: float = 0.5
    lambda_cfg: float = 3.5
    # schedule
    schedule_T: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    schedule_kind: str = "scaled_linear"
    tau: int = 249
    # training
    batch_size: int = 8
    iters_baseline_vae: int = 1200
    iters_baseline_unet: int = 800
    iters_vae: int = 1200
    iters_restorer: int = 1200
    iters_router: int = 400
    lr_vae: float = 2e-3
    lr_restorer: float = 1e-3
    lr_router: float = 1e-3
    lr_schedule: str = "cosine"
    adv_warmup_frac: float = 0.2
    ppa_warm_frac: float = 0.2
    grad_clip: float = 5.0
    # degradation pipeline
    blur_sigma: float = 1.8
    downscale_factor: int = 2
    noise_sigma: float = 0.08
    quantization_levels: int = 24
    # router
    threshold: float = 0.5
    router_kappa: float = 2.0
    router_dropout: float = 0.2
    perceptual_seed: int = 1234

    def __post_init__(self):
        self.vae_widths = tuple(self.vae_widths)
        self.unet_widths = tuple(self.unet_widths)
        self.validate()

    def validate(self) -> None:
        for name in ("lambda_p", "lambda_e", "lambda_kl", "lambda_csd",
                     "lambda_adv", "lambda_g", "lambda_cfg"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.image_size % DOWNSAMPLE_FACTOR != 0 or self.image_size < 16:
            raise ConfigError(
                f"image_size must be >= 16 and divisible by {DOWNSAMPLE_FACTOR}, "
                f"got {self.image_size}"
            )
        if self.latent_channels not in (4, 8, 16):
            raise ConfigError(f"latent_channels must be 4, 8, or 16, got {self.latent_channels}")
        if not 1 <= self.tau <= self.schedule_T:
            raise ConfigError(f"tau={self.tau} outside [1, {self.schedule_T}]")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError(f"invalid beta range [{self.beta_start}, {self.beta_end}]")
        if self.schedule_kind not in ("linear", "scaled_linear"):
            raise ConfigError(f"unknown schedule_kind {self.schedule_kind!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.lora_rank < 1:
            raise ConfigError(f"lora_rank must be >= 1, got {self.lora_rank}")
        for name in ("n_train", "n_val", "batch_size", "iters_baseline_vae",
                     "iters_baseline_unet", "iters_vae", "iters_restorer", "iters_router"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.router_dropout < 1.0:
            raise ConfigError(f"router_dropout must be in [0, 1), got {self.router_dropout}")
        if not (self.blur_sigma >= 0 and self.downscale_factor >= 1
                and self.noise_sigma >= 0 and self.quantization_levels >= 2):
            raise ConfigError("invalid degradation parameters")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["vae_widths"] = list(self.vae_widths)
        d["unet_widths"] = list(self.unet_widths)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Builds a RunConfig with precedence CLI overrides > file > defaults.
    Unknown keys are rejected by name."""
    values: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        for key in raw:
            if key not in _CONFIG_FIELDS:
                raise ConfigError(f"unknown config key {key!r} in {path}")
        values.update(raw)
    for key, val in (overrides or {}).items():
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown config override {key!r}")
        if val is not None:
            values[key] = val
    return RunConfig(**values)


def append_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Synthetic corpus


@dataclass
class Corpus:
    items: list[tuple[str, Tensor]]
    split_tag: str = "train"

    def __post_init__(self):
        ids = [i for i, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("corpus ids must be unique")

    def __len__(self) -> int:
        return len(self.items)

    def images(self) -> Tensor:
        return torch.stack([img for _, img in self.items])


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    ax = np.linspace(0.0, 1.0, size, dtype=np.float64)
    return np.meshgrid(ax, ax, indexing="xy")


def _soft_disk(xx, yy, cx, cy, radius, softness):
    d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    return 1.0 / (1.0 + np.exp((d - radius) / max(softness, 1e-3)))


def _synth_image(size: int, rng: np.random.Generator, kind: int) -> np.ndarray:
    xx, yy = _grid(size)
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 2.0
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]

    if kind >= 1:
        for _ in range(rng.integers(1, 4)):
            mask = _soft_disk(xx, yy, rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                              rng.uniform(0.08, 0.3), rng.uniform(0.01, 0.05))
            color = rng.uniform(0.0, 1.0, size=3)
            img = img * (1 - mask[None]) + color[:, None, None] * mask[None]

    if kind >= 2:
        freq = rng.uniform(3.0, 7.5)
        phi = rng.uniform(0, 2 * np.pi)
        ang = rng.uniform(0, np.pi)
        stripes = 0.5 + 0.5 * np.sin(
            2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phi
        )
        amp = rng.uniform(0.25, 0.45)
        img = img * (1 - amp) + stripes[None] * amp

    if kind >= 3:
        cells = int(rng.integers(4, 8))
        checker = ((xx * cells).astype(int) + (yy * cells).astype(int)) % 2
        region = _soft_disk(xx, yy, rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7),
                            rng.uniform(0.15, 0.35), 0.02)
        amp = rng.uniform(0.3, 0.45)
        img = img * (1 - amp * region[None]) + checker[None] * amp * region[None]

    return np.clip(img, 0.0, 1.0)


def generate_synthetic_corpus(n: int, size: int, seed: int,
                              split_tag: str = "train") -> Corpus:
    """Procedural HQ images mixing smooth gradients, soft shapes, stripe and
    checker textures (cycled per index so low- and high-frequency content is
    always present). Deterministic per (n, size, seed)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if size % DOWNSAMPLE_FACTOR != 0 or size < 16:
        raise ValueError(
            f"size must be >= 16 and divisible by {DOWNSAMPLE_FACTOR}, got {size}"
        )
    items = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        img = _synth_image(size, rng, kind=i % 4)
        items.append((f"{split_tag}_{i:05d}", torch.from_numpy(img.astype(np.float32))))
    return Corpus(items=items, split_tag=split_tag)


# --------------------------------------------------------------------------
# PNG I/O (8-bit, conversion divides by 255 exactly)


def save_png(path: str | Path, img: Tensor) -> None:
    from PIL import Image

    arr = img.detach().cpu().clamp(0.0, 1.0).numpy()
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected (C,H,W) image with 1 or 3 channels, got {arr.shape}")
    arr = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def load_png(path: str | Path) -> Tensor:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1))
