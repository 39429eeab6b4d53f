"""``pag-sr`` command line: train, infer, eval, degrade, dump-features."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import DegradationSpec, build_samples, degrade, load_image, load_pairs, save_image
from .evaluate import dump_features, eval_dataset, infer
from .model import ModelConfig, init_weights
from .train import TrainConfig, train, write_history
from .weights_io import load_weights, save_weights

# data-pipeline keys accepted alongside ModelConfig / TrainConfig fields
DATA_KEYS = {"patch_size": 256, "patch_stride": 64, "augment": True, "noise_sigma": 0.0}


def load_config(path) -> tuple[ModelConfig, TrainConfig, dict]:
    """Read a flat TOML key/value file into model, training and data settings."""
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - model_keys - train_keys - set(DATA_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"config must be flat; tables found: {nested}")
    mcfg = ModelConfig(**{k: v for k, v in raw.items() if k in model_keys})
    tkw = {k: v for k, v in raw.items() if k in train_keys}
    # "seed" belongs to both
    tcfg = TrainConfig(**tkw)
    if "scale" in raw and raw["scale"] != mcfg.factor:
        raise ValueError(f"scale {raw['scale']} disagrees with upsample_exponent "
                         f"{mcfg.upsample_exponent} (factor {mcfg.factor})")
    tcfg.scale = mcfg.factor
    dkw = {k: raw.get(k, v) for k, v in DATA_KEYS.items()}
    return mcfg, tcfg, dkw


def _cmd_train(a) -> None:
    mcfg, tcfg, dkw = load_config(a.config)
    pairs = load_pairs(a.data)
    spec = DegradationSpec(mcfg.factor, dkw["noise_sigma"])
    samples = build_samples(pairs, spec, dkw["patch_size"], dkw["patch_stride"], dkw["augment"], tcfg.seed)
    mw = init_weights(mcfg)
    mw, hist = train(mw, samples, tcfg, checkpoint_path=a.out)
    save_weights(mw, a.out)
    write_history(hist, a.history or f"{a.out}.loss.csv")
    print(json.dumps({"weights": str(a.out), "steps": len(hist), "samples": len(samples),
                      "final_loss": hist[-1].loss}))


def _cmd_infer(a) -> None:
    infer(a.weights, a.depth, a.rgb, a.out)


def _parse_weights(spec: str | None) -> dict:
    if not spec:
        return {}
    out = {}
    for item in spec.split(","):
        if ":" in item and item.split(":", 1)[0].isdigit():
            s, p = item.split(":", 1)
            out[int(s)] = p
        else:
            out[load_weights(item).config.factor] = item
    return out


def _cmd_eval(a) -> None:
    scales = [int(s) for s in a.scales.split(",")]
    methods = [m.strip() for m in a.methods.split(",")]
    report = eval_dataset(load_pairs(a.data), methods, scales, _parse_weights(a.weights),
                          noise_sigma=a.sigma, seed=a.seed, valid_only=not a.all_pixels,
                          weights_path=a.weights or "")
    if a.report:
        Path(a.report).write_text(report.to_csv())
    print(report.to_table())


def _cmd_degrade(a) -> None:
    hr = load_image(a.input)
    if hr.ndim != 2:
        raise ValueError(f"{a.input}: depth map must be single-channel")
    save_image(degrade(hr, DegradationSpec(a.factor, a.sigma), a.seed), a.out, bits=16)


def _cmd_dump(a) -> None:
    mw = load_weights(a.weights)
    rgb = load_image(a.rgb)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[None], 3, axis=0)
    variant = "with_attention" if a.variant == "with" else "without_attention"
    dump_features(mw, load_image(a.depth), rgb, a.stage, variant, a.out_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pag-sr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model for one scale factor")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--history", help="loss CSV path (default <out>.loss.csv)")
    t.set_defaults(func=_cmd_train)

    i = sub.add_parser("infer", help="super-resolve one depth map")
    for k in ("weights", "depth", "rgb", "out"):
        i.add_argument(f"--{k}", required=True)
    i.set_defaults(func=_cmd_infer)

    e = sub.add_parser("eval", help="RMSE table over a dataset directory")
    e.add_argument("--data", required=True)
    e.add_argument("--scales", default="2,4,8,16")
    e.add_argument("--methods", default="bicubic")
    e.add_argument("--weights", help="weight file(s): path or scale:path, comma separated")
    e.add_argument("--report", help="CSV output path")
    e.add_argument("--sigma", type=float, default=0.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--all-pixels", action="store_true", help="do not exclude gt == 0 pixels")
    e.set_defaults(func=_cmd_eval)

    d = sub.add_parser("degrade", help="synthesise a low-resolution depth map")
    d.add_argument("--factor", type=int, required=True)
    d.add_argument("--sigma", type=float, default=0.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_degrade)

    f = sub.add_parser("dump-features", help="write guidance feature maps for one stage")
    f.add_argument("--weights", required=True)
    f.add_argument("--depth", required=True)
    f.add_argument("--rgb", required=True)
    f.add_argument("--stage", type=int, required=True)
    f.add_argument("--variant", choices=("with", "without"), required=True)
    f.add_argument("--out-dir", required=True)
    f.set_defaults(func=_cmd_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except Exception as e:  # noqa: BLE001 - single-line error contract
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
