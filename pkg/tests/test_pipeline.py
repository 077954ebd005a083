import hashlib

import pytest
import torch

from latres.data_io import RunConfig, generate_synthetic_corpus, state_to_arrays
from latres.pipeline import RestorerBundle
from latres.restorer import (ChannelExpandedUNet, LatentDiscriminator,
                             PromptCueExtractor, PromptEmbedder, UNet)
from latres.router import (DecoderRouter, build_preference_dataset, quantize_label,
                           route, train_router)
from latres.vae import ANCHOR_CHANNELS, ConvVAE


def tiny_bundle(seed=0, with_router=False) -> RestorerBundle:
    torch.manual_seed(seed)
    cfg = RunConfig(n_train=4, n_val=2, iters_restorer=8, iters_router=8)
    vae16 = ConvVAE(16, cfg.vae_widths)
    vae4 = ConvVAE(4, cfg.vae_widths)
    unet4 = UNet(4, 4, cfg.unet_widths, cfg.cond_dim)
    import copy

    restorer = ChannelExpandedUNet(copy.deepcopy(unet4), 16, cfg.lora_rank)
    router = DecoderRouter(dropout=cfg.router_dropout) if with_router else None
    return RestorerBundle(cfg, vae16, vae4, unet4, restorer, PromptCueExtractor(),
                          PromptEmbedder(32, cfg.cond_dim), LatentDiscriminator(16),
                          router)


def test_single_denoise_per_restore():
    bundle = tiny_bundle()
    lq = torch.rand(3, 64, 64)
    bundle.reset_counters()
    bundle.restore_one_step(lq, route_mode="d16")
    assert bundle.denoise_calls == 1
    bundle.restore_one_step(lq, route_mode="d4")
    assert bundle.denoise_calls == 2


def test_exactly_one_decoder_per_routed_sample():
    bundle = tiny_bundle(with_router=True)
    g = torch.Generator().manual_seed(0)
    bundle.reset_counters()
    n = 100
    for _ in range(n):
        lq = torch.rand(3, 64, 64, generator=g)
        bundle.restore_one_step(lq, route_mode="auto")
    assert bundle.decode_counts["d4"] + bundle.decode_counts["d16"] == n
    assert bundle.denoise_calls == n


def test_route_threshold_degenerate_bounds():
    bundle = tiny_bundle(with_router=True)
    lq = torch.rand(3, 64, 64)
    z_l, z_hat = bundle.restore_latent(lq)
    prob = bundle.route_probability(z_l, z_hat)
    assert route(prob, 1.0) == "use_d16ch"
    assert route(prob, -0.5) == "use_d4ch"


def test_restore_auto_without_router_raises_named_error():
    bundle = tiny_bundle(with_router=False)
    with pytest.raises(Exception) as exc:
        bundle.restore_one_step(torch.rand(3, 64, 64), route_mode="auto")
    assert "router" in str(exc.value)


def test_build_preference_dataset_labels():
    bundle = tiny_bundle()
    corpus = generate_synthetic_corpus(8, 64, seed=4)
    samples = build_preference_dataset(bundle, corpus, bundle.config)
    assert len(samples) == 8
    for s in samples:
        assert s.label == pytest.approx(round(s.label * 10) / 10)
        assert 0.0 <= s.label <= 1.0
        assert s.router_input.shape == (32, 8, 8)


def test_preference_identical_outputs_label_half():
    # force both decode paths to the same image: margin 0 -> label 0.5
    bundle = tiny_bundle()
    img = torch.rand(1, 3, 64, 64)
    bundle.decode_full = lambda z: img
    bundle.decode_anchor = lambda z: img
    corpus = generate_synthetic_corpus(4, 64, seed=5)
    samples = build_preference_dataset(bundle, corpus, bundle.config)
    assert all(s.label == 0.5 for s in samples)


def test_preference_dominant_d16_labels_below_half():
    # 16ch output set to ground truth -> labels must all favor it (y <= 0.5)
    bundle = tiny_bundle()
    corpus = generate_synthetic_corpus(4, 64, seed=6)
    hq = {sid: img.unsqueeze(0) for sid, img in corpus.items}
    ids = iter([sid for sid, _ in corpus.items])
    current = {}

    original_anchor = bundle.decode_anchor

    def full(z):
        return hq[current["id"]]

    def iter_pairs(corpus_arg, config):
        for sid, lq, ref in RestorerBundle.iter_pairs(bundle, corpus_arg, config):
            current["id"] = sid
            yield sid, lq, ref

    bundle.decode_full = full
    bundle.iter_pairs = iter_pairs
    samples = build_preference_dataset(bundle, corpus, bundle.config)
    assert all(s.label <= 0.5 for s in samples)
    assert any(s.label < 0.5 for s in samples)


def test_router_training_touches_only_router():
    bundle = tiny_bundle(with_router=False)
    corpus = generate_synthetic_corpus(6, 64, seed=7)
    samples = build_preference_dataset(bundle, corpus, bundle.config)

    def digest(module):
        h = hashlib.sha256()
        for name, arr in sorted(state_to_arrays(module).items()):
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    before = {
        "vae16": digest(bundle.vae16), "vae4": digest(bundle.vae4),
        "unet4": digest(bundle.unet4), "restorer": digest(bundle.restorer),
        "cues": digest(bundle.cue_extractor), "embedder": digest(bundle.embedder),
    }
    result = train_router(bundle.config, samples)
    bundle.router = result["router"]
    after = {
        "vae16": digest(bundle.vae16), "vae4": digest(bundle.vae4),
        "unet4": digest(bundle.unet4), "restorer": digest(bundle.restorer),
        "cues": digest(bundle.cue_extractor), "embedder": digest(bundle.embedder),
    }
    assert before == after


def test_bundle_save_load_round_trip(tmp_path):
    bundle = tiny_bundle(with_router=True)
    path = tmp_path / "bundle.lrck"
    bundle.save(path)
    loaded = RestorerBundle.load(path)
    lq = torch.rand(3, 64, 64)
    a = bundle.restore_one_step(lq, route_mode="d16")[0]
    b = loaded.restore_one_step(lq, route_mode="d16")[0]
    assert torch.equal(a, b)
    pa = bundle.route_probability(*bundle.restore_latent(lq))
    pb = loaded.route_probability(*loaded.restore_latent(lq))
    assert pa == pytest.approx(pb, abs=1e-7)
