"""Differentiable array operations every network in this package is built on.

Backed by torch autograd. The functions here are the behavioral contract
surface: shape/argument validation with informative diagnostics, plus an
independent central-difference gradient checker used by the test suite to
hold every trainable operation and loss to the same gradient contract.

Required op set (all torch-backed, all gradient-checked in tests):
conv2d, transposed/upsample convolution, linear, multi-head self-attention,
layer norm, group norm, softmax, SiLU, dropout (inverted scaling, eval is
identity), attention pooling, elementwise arithmetic, reductions.
"""

from __future__ import annotations

import math
from typing import Callable

import torch
import torch.nn.functional as F
from torch import Tensor, nn


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def conv2d(input: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of an NCHW input with an OIKK kernel."""
    if input.dim() != 4 or kernel.dim() != 4:
        raise ShapeError(
            f"conv2d expects 4D input/kernel, got input {tuple(input.shape)} "
            f"and kernel {tuple(kernel.shape)}"
        )
    if input.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {tuple(input.shape)} has "
            f"{input.shape[1]} channels, kernel {tuple(kernel.shape)} expects "
            f"{kernel.shape[1]}"
        )
    kh, kw = kernel.shape[2], kernel.shape[3]
    if kh > input.shape[2] + 2 * padding or kw > input.shape[3] + 2 * padding:
        raise ShapeError(
            f"conv2d kernel {tuple(kernel.shape)} larger than padded input "
            f"{tuple(input.shape)} (padding={padding})"
        )
    return F.conv2d(input, kernel, stride=stride, padding=padding)


def conv_transpose2d(input: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2D convolution (IOKK kernel layout, matching torch)."""
    if input.shape[1] != kernel.shape[0]:
        raise ShapeError(
            f"conv_transpose2d channel mismatch: input {tuple(input.shape)} vs "
            f"kernel {tuple(kernel.shape)}"
        )
    return F.conv_transpose2d(input, kernel, stride=stride, padding=padding)


def upsample_nearest2d(input: Tensor, scale: int = 2) -> Tensor:
    return F.interpolate(input, scale_factor=scale, mode="nearest")


def linear(input: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if input.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input {tuple(input.shape)} incompatible with weight "
            f"{tuple(weight.shape)}"
        )
    return F.linear(input, weight, bias)


def group_norm(input: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Per-group normalization to zero mean / unit variance (no affine)."""
    if eps <= 0:
        raise ValueError(f"group_norm eps must be positive, got {eps}")
    channels = input.shape[1]
    if channels % groups != 0:
        raise ShapeError(
            f"group_norm: {channels} channels not divisible by {groups} groups"
        )
    return F.group_norm(input, groups, eps=eps)


def layer_norm(input: Tensor, normalized_shape: tuple[int, ...], eps: float = 1e-5) -> Tensor:
    return F.layer_norm(input, normalized_shape, eps=eps)


def silu(input: Tensor) -> Tensor:
    """x * sigmoid(x), elementwise."""
    return input * torch.sigmoid(input)


def softmax(input: Tensor, dim: int = -1) -> Tensor:
    return F.softmax(input, dim=dim)


def dropout(input: Tensor, p: float, training: bool, generator: torch.Generator | None = None) -> Tensor:
    """Inverted dropout: eval mode is the identity."""
    if not training or p == 0.0:
        return input
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    mask = torch.empty_like(input).bernoulli_(1.0 - p, generator=generator)
    return input * mask / (1.0 - p)


def self_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    num_heads: int,
) -> Tensor:
    """Multi-head self-attention over an L x D sequence (batched as B x L x D)."""
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    b, length, dim = x.shape
    if dim % num_heads != 0:
        raise ShapeError(f"dim {dim} not divisible by {num_heads} heads")
    head = dim // num_heads
    q = linear(x, wq).view(b, length, num_heads, head).transpose(1, 2)
    k = linear(x, wk).view(b, length, num_heads, head).transpose(1, 2)
    v = linear(x, wv).view(b, length, num_heads, head).transpose(1, 2)
    attn = softmax(q @ k.transpose(-1, -2) / math.sqrt(head), dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(b, length, dim)
    out = linear(out, wo)
    return out.squeeze(0) if squeeze else out


class AttentionPool(nn.Module):
    """Pools an L x D sequence to a D vector by query-derived softmax weights.

    With the query projection zeroed the weights are uniform and the output
    is the arithmetic mean of the rows; in general the output lies in the
    convex hull of the rows.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.query = nn.Parameter(torch.randn(dim) * dim**-0.5)

    def forward(self, sequence: Tensor) -> Tensor:
        if sequence.dim() == 2:
            sequence = sequence.unsqueeze(0)
            squeeze = True
        else:
            squeeze = False
        if sequence.shape[1] < 1:
            raise ShapeError("attention_pool: empty sequence")
        scores = sequence @ self.query.to(sequence.dtype) / math.sqrt(self.dim)
        weights = softmax(scores, dim=1)
        pooled = (weights.unsqueeze(-1) * sequence).sum(dim=1)
        return pooled.squeeze(0) if squeeze else pooled


def attention_pool(sequence: Tensor, query: Tensor) -> Tensor:
    """Functional form of AttentionPool for a given query vector."""
    if sequence.dim() != 2 or sequence.shape[0] < 1:
        raise ShapeError(
            f"attention_pool expects a nonempty L x D sequence, got "
            f"{tuple(sequence.shape)}"
        )
    scores = sequence @ query / math.sqrt(sequence.shape[1])
    weights = softmax(scores, dim=0)
    return weights @ sequence


class GradientCheckError(RuntimeError):
    """Non-finite values encountered while evaluating a gradient check."""


def gradient_check(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    step: float = 1e-5,
) -> float:
    """Max relative error between autograd and central-difference gradients.

    The finite-difference side is computed here from plain evaluations of f
    and is independent of autograd. Relative error per coordinate is
    |analytic - central| / max(|analytic|, |central|, 1e-8).
    """
    x = point.detach().clone().requires_grad_(True)
    y = f(x)
    if y.dim() != 0:
        raise ValueError(f"gradient_check needs a scalar-valued f, got shape {tuple(y.shape)}")
    if not torch.isfinite(y):
        raise GradientCheckError("f evaluated to a non-finite value at the check point")
    (analytic,) = torch.autograd.grad(y, x)
    if not torch.isfinite(analytic).all():
        raise GradientCheckError("autograd gradient contains non-finite values")

    flat = point.detach().clone().reshape(-1)
    numeric = torch.zeros_like(flat)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        hi = f(flat.reshape(point.shape))
        flat[i] = orig - step
        lo = f(flat.reshape(point.shape))
        flat[i] = orig
        if not (torch.isfinite(hi) and torch.isfinite(lo)):
            raise GradientCheckError(f"non-finite f value while perturbing coordinate {i}")
        numeric[i] = (hi - lo) / (2.0 * step)

    a = analytic.detach().reshape(-1)
    denom = torch.maximum(
        torch.maximum(a.abs(), numeric.abs()),
        torch.full_like(numeric, 1e-8),
    )
    return ((a - numeric).abs() / denom).max().item()
