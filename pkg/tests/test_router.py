import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latres.data_io import RunConfig
from latres.ops import gradient_check
from latres.router import (DecoderRouter, PreferenceSample, USE_D16CH, USE_D4CH,
                           load_preference_dataset, quantize_label, route,
                           router_input, save_preference_dataset, soft_bce,
                           train_router)


def test_router_forward_shapes_and_stride():
    torch.manual_seed(0)
    router = DecoderRouter()
    x = torch.randn(2, 32, 8, 8)
    h = router.blocks(x)
    assert h.shape == (2, 256, 1, 1)
    out = router(x)
    assert out.shape == (2,)


def test_router_gap_gmp_doubles_width():
    router = DecoderRouter()
    assert router.out.in_features == 2 * 256


def test_router_rejects_indivisible_spatial():
    router = DecoderRouter()
    with pytest.raises(ValueError):
        router(torch.randn(1, 32, 6, 6))


def test_router_eval_deterministic_train_stochastic():
    torch.manual_seed(1)
    router = DecoderRouter(dropout=0.5)
    x = torch.randn(4, 32, 8, 8)
    router.eval()
    with torch.no_grad():
        a = router(x)
        b = router(x)
    assert torch.equal(a, b)
    router.train()
    torch.manual_seed(2)
    c = router(x)
    torch.manual_seed(3)
    d = router(x)
    assert not torch.equal(c.detach(), d.detach())


def test_router_input_concat():
    z_l = torch.randn(1, 16, 8, 8)
    z_hat = torch.randn(1, 16, 8, 8)
    x = router_input(z_l, z_hat)
    assert x.shape == (1, 32, 8, 8)
    assert torch.equal(x[:, :16], z_l) and torch.equal(x[:, 16:], z_hat)
    with pytest.raises(ValueError):
        router_input(z_l, torch.randn(1, 16, 4, 4))


def test_soft_bce_values():
    for y in (0.0, 0.3, 0.5, 1.0):
        assert soft_bce(torch.tensor(0.0), y).item() == pytest.approx(math.log(2), abs=1e-6)
    assert soft_bce(torch.tensor(30.0), 1.0).item() == pytest.approx(0.0, abs=1e-6)
    assert soft_bce(torch.tensor(-30.0), 0.0).item() == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValueError):
        soft_bce(torch.tensor(0.0), 1.5)


def test_soft_bce_stationary_at_matching_probability():
    for y in (0.1, 0.5, 0.9):
        s = torch.tensor(math.log(y / (1 - y)), requires_grad=True)
        soft_bce(s, y).backward()
        assert abs(s.grad.item()) <= 1e-6


def test_soft_bce_gradient_is_sigmoid_minus_label():
    s = torch.tensor(0.0, requires_grad=True)
    soft_bce(s, 0.5).backward()
    assert s.grad.item() == pytest.approx(0.0, abs=1e-8)
    s2 = torch.tensor(1.3, requires_grad=True)
    soft_bce(s2, 0.2).backward()
    assert s2.grad.item() == pytest.approx(torch.sigmoid(torch.tensor(1.3)).item() - 0.2,
                                           abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(s=st.floats(-8, 8), y=st.sampled_from([i / 10 for i in range(11)]))
def test_soft_bce_global_minimum_property(s, y):
    val = soft_bce(torch.tensor(s), y).item()
    if 0.0 < y < 1.0:
        best = soft_bce(torch.tensor(math.log(y / (1 - y))), y).item()
    else:
        best = 0.0
    assert val + 1e-9 >= best


def test_soft_bce_gradient_check_double():
    g = torch.Generator().manual_seed(0)
    s = torch.randn(6, dtype=torch.float64, generator=g)
    y = torch.tensor([0.0, 0.2, 0.4, 0.5, 0.8, 1.0], dtype=torch.float64)
    assert gradient_check(lambda v: soft_bce(v, y), s, step=1e-6) <= 1e-3


def test_route_decisions():
    assert route(1.0, 0.5) == USE_D4CH
    assert route(0.0, 0.5) == USE_D16CH
    assert route(0.5, 0.5) == USE_D16CH  # boundary: strictly above switches
    assert route(0.2, 1.0) == USE_D16CH
    assert route(0.0, -0.1) == USE_D4CH  # degenerate override always 4ch
    with pytest.raises(ValueError):
        route(1.2, 0.5)


def test_quantize_label_grid():
    assert quantize_label(0.34) == pytest.approx(0.3)
    assert quantize_label(-0.2) == 0.0
    assert quantize_label(1.7) == 1.0
    for v in [0.01 * k for k in range(101)]:
        q = quantize_label(v)
        assert q == pytest.approx(round(q * 10) / 10)
        assert 0.0 <= q <= 1.0


def test_preference_dataset_round_trip(tmp_path):
    g = torch.Generator().manual_seed(5)
    samples = [
        PreferenceSample(f"s{i:03d}", torch.randn(32, 8, 8, generator=g),
                         label=quantize_label(i / 7), q_d4=0.1 * i, q_d16=0.05 * i)
        for i in range(8)
    ]
    rec = tmp_path / "prefs.jsonl"
    arr = tmp_path / "prefs.arrays"
    save_preference_dataset(samples, rec, arr)
    back = load_preference_dataset(rec, arr)
    assert len(back) == len(samples)
    for a, b in zip(samples, back):
        assert a.sample_id == b.sample_id
        assert a.label == b.label
        assert torch.equal(a.router_input, b.router_input)


def _separable_samples(n=64, seed=0):
    # labels keyed to an injected channel-mean offset on the first channel
    g = torch.Generator().manual_seed(seed)
    samples = []
    for i in range(n):
        x = torch.randn(32, 8, 8, generator=g)
        label = 1.0 if i % 2 == 0 else 0.0
        if label == 1.0:
            x[0] += 1.5
        samples.append(PreferenceSample(f"p{i:04d}", x, label, 0.0, 0.0))
    return samples


def test_train_router_separable_accuracy():
    cfg = RunConfig(iters_router=300, lr_router=2e-3, batch_size=16)
    samples = _separable_samples(64)
    result = train_router(cfg, samples, log_path=None)
    router = result["router"]
    router.eval()
    with torch.no_grad():
        inputs = torch.stack([s.router_input for s in samples])
        probs = torch.sigmoid(router(inputs))
    preds = (probs > 0.5).float()
    labels = torch.tensor([s.label for s in samples])
    acc = (preds == labels).float().mean().item()
    assert acc >= 0.95


def test_train_router_loss_nonincreasing_moving_average():
    cfg = RunConfig(iters_router=300, lr_router=2e-3, batch_size=16)
    result = train_router(cfg, _separable_samples(64, seed=1))
    losses = result["loss_history"]
    window = 50
    avgs = [sum(losses[i:i + window]) / window for i in range(0, len(losses) - window, 25)]
    for earlier, later in zip(avgs, avgs[1:]):
        assert later <= earlier * 1.05


def test_train_router_rejects_empty():
    with pytest.raises(ValueError):
        train_router(RunConfig(), [])
