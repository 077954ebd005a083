"""Small shared training-loop utilities."""

from __future__ import annotations

from typing import Iterator

import torch
from torch import Tensor, nn


def seed_everything(seed: int) -> torch.Generator:
    """Seeds torch's global RNG and returns a dedicated generator."""
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def batch_indices(n: int, batch_size: int, iters: int,
                  generator: torch.Generator) -> Iterator[Tensor]:
    """Yields `iters` index batches, reshuffling each pass over the data."""
    done = 0
    while done < iters:
        perm = torch.randperm(n, generator=generator)
        for start in range(0, n, batch_size):
            if done >= iters:
                return
            yield perm[start:start + batch_size]
            done += 1


def make_lr_scheduler(optimizer, kind: str, iters: int):
    """Per-iteration cosine decay to 5% of the base rate, or no-op."""
    if kind == "cosine":
        base = optimizer.param_groups[0]["lr"]
        return torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=iters, eta_min=0.05 * base
        )

    class _Static:
        def step(self):
            pass

    return _Static()


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return total**0.5


def trainable_parameters(module: nn.Module) -> list[torch.nn.Parameter]:
    return [p for p in module.parameters() if p.requires_grad]
