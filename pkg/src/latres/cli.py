"""Command-line entry point orchestrating data generation, the three
training stages, preference building, restoration, degradation, and
evaluation.

Exit codes: 0 success, 1 operational failure, 2 usage error (argparse),
3 stage-prerequisite violation (missing or mistagged artifact).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from . import pipeline
from .data_io import (Corpus, CheckpointError, ConfigError, MissingArrayError,
                      append_jsonl, generate_synthetic_corpus, load_config,
                      load_png, save_png)
from .imaging import DegradationParams, degrade, perceptual_distance, psnr, rgb_to_y, ssim
from .pipeline import RestorerBundle, StageError
from .restorer import train_baseline_unet, train_restorer
from .router import (build_preference_dataset, load_preference_dataset,
                     save_preference_dataset, train_router)
from .vae import train_baseline_vae, train_vae

OVERRIDE_KEYS = (
    "seed", "lambda_p", "lambda_e", "lambda_kl", "lambda_csd", "lambda_adv",
    "lambda_g", "tau", "threshold",
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda-p", type=float, dest="lambda_p")
    p.add_argument("--lambda-e", type=float, dest="lambda_e")
    p.add_argument("--lambda-kl", type=float, dest="lambda_kl")
    p.add_argument("--lambda-csd", type=float, dest="lambda_csd")
    p.add_argument("--lambda-adv", type=float, dest="lambda_adv")
    p.add_argument("--lambda-g", type=float, dest="lambda_g")
    p.add_argument("--cfg-scale", type=float, dest="lambda_cfg")
    p.add_argument("--tau", type=int)
    p.add_argument("--threshold", type=float)


def _config_from_args(args, extra: dict | None = None):
    overrides = {k: getattr(args, k, None) for k in OVERRIDE_KEYS}
    overrides["lambda_cfg"] = getattr(args, "lambda_cfg", None)
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    return load_config(getattr(args, "config", None), overrides)


def _echo_config(config, log_path) -> None:
    if log_path:
        append_jsonl(log_path, {"event": "effective-config", **config.to_dict()})


def load_corpus_dir(root: str | Path, split: str) -> Corpus:
    split_dir = Path(root) / split
    files = sorted(split_dir.glob("*.png"))
    if not files:
        raise StageError(f"no PNG images under {split_dir}; run gen-data first")
    items = [(f.stem, load_png(f)) for f in files]
    return Corpus(items=items, split_tag=split)


# --------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    for split, n in (("train", args.n), ("val", args.n_val)):
        corpus = generate_synthetic_corpus(n, args.size, args.seed, split_tag=split)
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for sample_id, img in corpus.items:
            save_png(split_dir / f"{sample_id}.png", img)
    (out / "manifest.json").write_text(json.dumps({
        "n_train": args.n, "n_val": args.n_val, "size": args.size, "seed": args.seed,
    }, sort_keys=True))
    print(f"wrote {args.n} train / {args.n_val} val images to {out}")
    return 0


def cmd_train_baseline(args) -> int:
    config = _config_from_args(args, {
        "iters_baseline_vae": args.iters, "iters_baseline_unet": args.unet_iters,
    })
    log = args.log or str(Path(args.out).with_suffix(".log.jsonl"))
    Path(log).write_text("")
    _echo_config(config, log)
    train = load_corpus_dir(args.data, "train")
    val = load_corpus_dir(args.data, "val")
    result = train_baseline_vae(config, train, val, log_path=log)
    unet_result = train_baseline_unet(config, result["vae"], train, val, log_path=log)
    pipeline.save_baseline_checkpoint(
        args.out, config, result["vae"], result["disc"], unet_result["unet"],
        extra={"final_val_recon_mse": f"{result['final_val_recon_mse']:.6g}",
               "val_latent_mse": f"{unet_result['val_latent_mse']:.6g}"},
    )
    print(f"baseline checkpoint -> {args.out} "
          f"(val recon MSE {result['final_val_recon_mse']:.4g})")
    return 0


def cmd_train_vae(args) -> int:
    config = _config_from_args(args, {
        "iters_vae": args.iters, "latent_channels": args.channels,
    })
    _, vae4, _ = pipeline.load_baseline_checkpoint(args.baseline)
    log = args.log or str(Path(args.out).with_suffix(".log.jsonl"))
    Path(log).write_text("")
    _echo_config(config, log)
    train = load_corpus_dir(args.data, "train")
    val = load_corpus_dir(args.data, "val")
    result = train_vae(config, train, val, vae4, log_path=log)
    extra = {"final_val_recon_mse": f"{result['final_val_recon_mse']:.6g}"}
    if result["final_anchor_alignment"] is not None:
        extra["final_anchor_alignment"] = f"{result['final_anchor_alignment']:.6g}"
    pipeline.save_stage1_checkpoint(args.out, config, result["vae"], result["disc"],
                                    extra=extra)
    print(f"stage-1 checkpoint -> {args.out} "
          f"(anchor alignment {result['final_anchor_alignment']:.4g})")
    return 0


def cmd_train_restorer(args) -> int:
    config = _config_from_args(args, {"iters_restorer": args.iters})
    _, vae4, unet4 = pipeline.load_baseline_checkpoint(args.baseline)
    _, vae16 = pipeline.load_stage1_checkpoint(args.stage1)
    if vae16.latent_channels != 16:
        raise StageError(
            f"{args.stage1} holds a {vae16.latent_channels}-channel VAE; the "
            f"restorer stage needs the 16-channel one"
        )
    log = args.log or str(Path(args.out).with_suffix(".log.jsonl"))
    Path(log).write_text("")
    _echo_config(config, log)
    train = load_corpus_dir(args.data, "train")
    val = load_corpus_dir(args.data, "val")
    result = train_restorer(config, train, val, vae16, unet4, log_path=log)
    bundle = RestorerBundle(config, vae16, vae4, unet4, result["restorer"],
                            result["cue_extractor"], result["embedder"],
                            result["latent_disc"])
    bundle.save(args.out)
    print(f"restorer bundle -> {args.out} (final loss {result['loss_history'][-1]:.4g})")
    return 0


def cmd_build_prefs(args) -> int:
    bundle = RestorerBundle.load(args.bundle)
    corpus = load_corpus_dir(args.data, args.split)
    samples = build_preference_dataset(bundle, corpus, bundle.config)
    arrays_path = args.arrays or str(Path(args.out).with_suffix(".arrays"))
    save_preference_dataset(samples, args.out, arrays_path)
    labels = [s.label for s in samples]
    print(f"preference dataset -> {args.out} ({len(samples)} samples, "
          f"label mean {sum(labels) / len(labels):.2f})")
    return 0


def cmd_train_router(args) -> int:
    bundle = RestorerBundle.load(args.bundle)
    config = bundle.config
    if args.iters is not None:
        config.iters_router = args.iters
    arrays_path = args.arrays or str(Path(args.prefs).with_suffix(".arrays"))
    samples = load_preference_dataset(args.prefs, arrays_path)
    log = args.log or str(Path(args.out).with_suffix(".log.jsonl"))
    Path(log).write_text("")
    _echo_config(config, log)
    result = train_router(config, samples, log_path=log)
    bundle.router = result["router"]
    bundle.save(args.out)
    print(f"full pipeline checkpoint -> {args.out}")
    return 0


def cmd_restore(args) -> int:
    bundle = RestorerBundle.load(args.bundle)
    if args.tau is not None:
        bundle.config.tau = args.tau
    if args.lambda_cfg is not None:
        bundle.config.lambda_cfg = args.lambda_cfg
    if args.threshold is not None:
        bundle.config.threshold = args.threshold
    lq = load_png(args.infile)
    restored, _, _, choice = bundle.restore_one_step(lq, route_mode=args.route)
    save_png(args.out, restored)
    print(f"{args.infile} -> {args.out} via {choice}")
    return 0


def cmd_degrade(args) -> int:
    params = DegradationParams(
        blur_sigma=args.blur_sigma, downscale_factor=args.downscale,
        noise_sigma=args.noise_sigma,
        quantization_levels=None if args.quant_levels == 0 else args.quant_levels,
        seed=args.seed,
    )
    img = load_png(args.infile)
    save_png(args.out, degrade(img, params))
    print(f"degraded {args.infile} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    names = sorted(p.name for p in pred_dir.glob("*.png"))
    if not names:
        raise StageError(f"no PNG images under {pred_dir}")
    rows = []
    for name in names:
        ref_path = ref_dir / name
        if not ref_path.exists():
            raise StageError(f"reference image missing for {name}: {ref_path}")
        a = load_png(pred_dir / name)
        b = load_png(ref_path)
        row = {
            "image": name,
            "psnr": psnr(a, b),
            "psnr_y": psnr(rgb_to_y(a), rgb_to_y(b)),
            "ssim": ssim(a, b),
            "ssim_y": ssim(rgb_to_y(a), rgb_to_y(b)),
            "perceptual": float(perceptual_distance(a, b)),
        }
        rows.append(row)
        if args.out:
            append_jsonl(args.out, row)
    agg = {k: sum(r[k] for r in rows) / len(rows)
           for k in ("psnr", "psnr_y", "ssim", "ssim_y", "perceptual")}
    if args.out:
        append_jsonl(args.out, {"image": "<aggregate>", **agg})
    header = f"{'image':<24} {'PSNR':>8} {'PSNRY':>8} {'SSIM':>8} {'SSIMY':>8} {'PERC':>8}"
    print(header)
    for r in rows:
        print(f"{r['image']:<24} {r['psnr']:>8.3f} {r['psnr_y']:>8.3f} "
              f"{r['ssim']:>8.4f} {r['ssim_y']:>8.4f} {r['perceptual']:>8.4f}")
    print(f"{'mean':<24} {agg['psnr']:>8.3f} {agg['psnr_y']:>8.3f} "
          f"{agg['ssim']:>8.4f} {agg['ssim_y']:>8.4f} {agg['perceptual']:>8.4f}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latres",
        description="One-step latent diffusion restoration lab: channel-split "
                    "VAE, prior-preserving one-step denoiser, decoder router.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic HQ corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--n-val", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-baseline", help="train the frozen 4-channel prior (VAE + denoiser)")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--unet-iters", type=int, dest="unet_iters")
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("train-vae", help="stage 1: distill a wide-latent VAE against the baseline")
    _add_config_flags(p)
    p.add_argument("--baseline", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--channels", type=int, choices=(4, 8, 16))
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train-restorer", help="stage 2: train the one-step restoration model")
    _add_config_flags(p)
    p.add_argument("--stage1", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_restorer)

    p = sub.add_parser("build-prefs", help="label decoder preferences for router training")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--arrays")
    p.set_defaults(func=cmd_build_prefs)

    p = sub.add_parser("train-router", help="stage 3: train the decoder router")
    p.add_argument("--bundle", required=True)
    p.add_argument("--prefs", required=True)
    p.add_argument("--arrays")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_router)

    p = sub.add_parser("restore", help="one-step restoration of a PNG")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--route", choices=("auto", "d4", "d16"), default="auto")
    p.add_argument("--tau", type=int)
    p.add_argument("--cfg-scale", type=float, dest="lambda_cfg")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("degrade", help="apply the synthetic degradation pipeline to a PNG")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blur-sigma", type=float, default=1.2, dest="blur_sigma")
    p.add_argument("--downscale", type=int, default=2)
    p.add_argument("--noise-sigma", type=float, default=0.04, dest="noise_sigma")
    p.add_argument("--quant-levels", type=int, default=32, dest="quant_levels",
                   help="0 disables quantization")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("evaluate", help="full-reference metrics over paired PNG dirs")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", help="JSONL metrics output")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        return args.func(args)
    except (StageError, MissingArrayError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
