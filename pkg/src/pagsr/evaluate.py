"""RMSE evaluation, inference and guidance feature dumps."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import DegradationSpec, bicubic_resample, degrade, load_image, save_image
from .model import ModelWeights, pagnet_forward
from .tensor import ShapeError, Tensor
from .weights_io import load_weights


def rmse(pred: np.ndarray, gt: np.ndarray, valid_only: bool = False) -> float:
    """Root mean squared error in 8-bit units for maps normalised to [0, 1].

    With ``valid_only`` pixels where ``gt == 0`` (holes) are ignored.
    """
    pred, gt = np.asarray(pred, np.float64), np.asarray(gt, np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"rmse needs equal dims, got {pred.shape} and {gt.shape}")
    d = (pred - gt) * 255.0
    if valid_only:
        d = d[gt > 0]
    if d.size == 0:
        raise ValueError("rmse over zero pixels")
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class EvalRow:
    image: str
    scale: int
    method: str
    rmse: float
    error: str = ""


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "scale", "method", "rmse", "error"])
        for r in self.rows:
            w.writerow([r.image, r.scale, r.method, "" if math.isnan(r.rmse) else f"{r.rmse:.6f}", r.error])
        return buf.getvalue()

    def to_table(self) -> str:
        """Image x scale grid per method, like the comparison tables in the literature."""
        images = list(dict.fromkeys(r.image for r in self.rows))
        scales = sorted({r.scale for r in self.rows})
        methods = list(dict.fromkeys(r.method for r in self.rows))
        lookup = {(r.image, r.scale, r.method): r.rmse for r in self.rows}
        wd = max([len(im) for im in images] + [5]) + 5
        head = f"{'method':<10}" + "".join(f"{f'{im} {s}x':>{wd}}" for im in images for s in scales)
        lines = [head]
        for m in methods:
            cells = []
            for im in images:
                for s in scales:
                    v = lookup.get((im, s, m), math.nan)
                    cells.append(f"{'-' if math.isnan(v) else f'{v:.2f}':>{wd}}")
            lines.append(f"{m:<10}" + "".join(cells))
        return "\n".join(lines)


def center_crop(a: np.ndarray, multiple: int) -> np.ndarray:
    h, w = a.shape[-2:]
    hh, ww = h - h % multiple, w - w % multiple
    y, x = (h - hh) // 2, (w - ww) // 2
    return a[..., y:y + hh, x:x + ww]


def run_model(mw: ModelWeights, depth_lr: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    dtype = next(iter(mw.params.values())).value.dtype
    out = pagnet_forward(Tensor(depth_lr[None, None].astype(dtype)), Tensor(rgb[None].astype(dtype)), mw)
    return out.data[0, 0]


def eval_dataset(pairs: Sequence[tuple[str, np.ndarray, np.ndarray]],
                 methods: Sequence[str], scales: Sequence[int],
                 weights: Mapping[int, ModelWeights | str | Path] | None = None,
                 noise_sigma: float = 0.0, seed: int = 0, valid_only: bool = True,
                 weights_path: str = "") -> EvalReport:
    """RMSE for every (image, scale, method); rows ordered by image, scale, method."""
    weights = dict(weights or {})
    report = EvalReport(metadata={"weights": weights_path, "noise_sigma": noise_sigma,
                                  "seed": seed, "valid_only": valid_only, "crops": {}})
    models: dict[int, ModelWeights] = {}
    for name, depth, rgb in pairs:
        for s in scales:
            d = center_crop(depth, s)
            c = center_crop(rgb, s)
            if d.shape != depth.shape:
                report.metadata["crops"][f"{name}@{s}"] = list(d.shape)
            lr = degrade(d, DegradationSpec(s, noise_sigma), seed)
            for m in methods:
                try:
                    if m == "bicubic":
                        pred = bicubic_resample(lr, *d.shape)
                    elif m == "pagnet":
                        if s not in models:
                            src = weights.get(s)
                            if src is None:
                                raise LookupError(f"no pagnet weights for scale {s}")
                            models[s] = src if isinstance(src, ModelWeights) else load_weights(src)
                        if models[s].config.factor != s:
                            raise ValueError(f"weights are for x{models[s].config.factor}, not x{s}")
                        pred = np.clip(run_model(models[s], lr, c), 0.0, 1.0)
                    else:
                        raise ValueError(f"unknown method {m!r}")
                    report.rows.append(EvalRow(name, s, m, rmse(pred, d, valid_only)))
                except (LookupError, ValueError, OSError) as e:
                    report.rows.append(EvalRow(name, s, m, math.nan, f"{type(e).__name__}: {e}"))
    meta = json.dumps({k: v for k, v in report.metadata.items() if k != "timestamp"}, sort_keys=True)
    report.metadata["config_hash"] = hashlib.sha256(meta.encode()).hexdigest()[:16]
    report.metadata["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    return report


def infer(weights_path, depth_lr_path, rgb_path, out_path) -> np.ndarray:
    mw = load_weights(weights_path)
    depth_lr = load_image(depth_lr_path)
    rgb = load_image(rgb_path)
    if depth_lr.ndim != 2:
        raise ShapeError(f"{depth_lr_path}: depth must be single-channel")
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[None], 3, axis=0)
    f = mw.config.factor
    if rgb.shape[-2:] != (depth_lr.shape[0] * f, depth_lr.shape[1] * f):
        raise ShapeError(f"expected rgb/depth size ratio {f} (weights are x{f}); "
                         f"got depth {depth_lr.shape} and rgb {rgb.shape[-2:]}")
    out = np.clip(run_model(mw, depth_lr, rgb), 0.0, 1.0)
    save_image(out, out_path, bits=16)
    return out


def guidance_features(mw: ModelWeights, depth_lr: np.ndarray, rgb: np.ndarray, stage: int) -> dict:
    """Guidance features at ``stage`` before and after attention gating, plus the map."""
    l = mw.config.upsample_exponent
    if not 1 <= stage <= l:
        raise ValueError(f"stage must be in [1, {l}], got {stage}")
    dtype = next(iter(mw.params.values())).value.dtype
    caps: list[dict] = []
    pagnet_forward(Tensor(depth_lr[None, None].astype(dtype)), Tensor(rgb[None].astype(dtype)), mw, caps)
    cap = caps[stage - 1]
    return {"without_attention": cap["guidance"][0], "with_attention": cap["attended"][0],
            "attention": cap["attention"][0, 0]}


def dump_features(mw: ModelWeights, depth_lr: np.ndarray, rgb: np.ndarray, stage: int,
                  variant: str, out_dir) -> dict:
    """Write per-channel min-max normalised feature maps and the attention map as PNGs."""
    if variant in ("with", "without"):
        variant = f"{variant}_attention"
    if variant not in ("with_attention", "without_attention"):
        raise ValueError(f"variant must be with_attention or without_attention, got {variant!r}")
    feats = guidance_features(mw, depth_lr, rgb, stage)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = feats[variant]
    for ci, m in enumerate(maps):
        lo, hi = float(m.min()), float(m.max())
        norm = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
        save_image(norm, out_dir / f"stage{stage}_{variant}_ch{ci:03d}.png", bits=16)
    save_image(feats["attention"], out_dir / f"stage{stage}_attention.png", bits=16)
    np.savez(out_dir / f"stage{stage}_{variant}.npz", features=maps, attention=feats["attention"])
    return feats


def report_json(report: EvalReport) -> str:
    return json.dumps({"rows": [asdict(r) for r in report.rows], "metadata": report.metadata}, default=str)
