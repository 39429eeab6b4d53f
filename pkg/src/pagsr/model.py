"""PAG-Net: progressive x2 stages of residual dense networks with attention-gated guidance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .optim import ParameterStore
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    upsample_exponent: int = 1
    base_channels: int = 64
    rdb_layers: int = 4
    growth_rate: int = 32
    guidance_channels: int = 64
    seed: int = 0
    global_residual: bool = True
    # multiplies the He std sqrt(2 / fan_in); 1/sqrt(6) keeps activations O(1) through deep stacks
    init_gain: float = 1.0

    def __post_init__(self):
        if not 1 <= self.upsample_exponent <= 4:
            raise ConfigError(f"upsample_exponent must be in [1, 4], got {self.upsample_exponent}")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError(f"base_channels must be even and >= 2, got {self.base_channels}")
        for k in ("rdb_layers", "growth_rate", "guidance_channels"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if not self.init_gain > 0:
            raise ConfigError("init_gain must be positive")

    @property
    def factor(self) -> int:
        return 2 ** self.upsample_exponent


@dataclass
class ModelWeights:
    config: ModelConfig
    params: ParameterStore = field(default_factory=ParameterStore)

    def w(self, name: str) -> Tensor:
        return self.params[name].value


# ------------------------------------------------------------------ layout

def layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int, int, int]]:
    """Conv weight shapes keyed by layer prefix; each layer also owns a bias."""
    C, D, G, Cg, l = (cfg.base_channels, cfg.rdb_layers, cfg.growth_rate,
                      cfg.guidance_channels, cfg.upsample_exponent)
    shapes: dict[str, tuple[int, int, int, int]] = {}

    def rdn(prefix):
        for b in range(3):
            for j in range(D):
                shapes[f"{prefix}.rdb{b}.conv{j}"] = (G, C + j * G, 3, 3)
            shapes[f"{prefix}.rdb{b}.fuse"] = (C, C + D * G, 1, 1)
        shapes[f"{prefix}.gff1"] = (C, 3 * C, 1, 1)
        shapes[f"{prefix}.gff3"] = (C, C, 3, 3)

    shapes["entry"] = (C, 1, 3, 3)
    shapes["guide.entry"] = (Cg, 3, 3, 3)
    for m in range(1, l):
        shapes[f"guide.level{m}.conv"] = (Cg, Cg, 3, 3)
        shapes[f"guide.level{m}.down"] = (Cg, Cg, 2, 2)
    h = C // 2
    for k in range(1, l + 1):
        s = f"stage{k}"
        rdn(f"{s}.rdn_a")
        shapes[f"{s}.expand"] = (4 * C, C, 1, 1)
        shapes[f"{s}.agfe.guide"] = (Cg, Cg, 3, 3)
        shapes[f"{s}.agfe.set1_a"] = (h, C, 9, 1)
        shapes[f"{s}.agfe.set1_b"] = (1, h, 1, 9)
        shapes[f"{s}.agfe.set2_a"] = (h, C, 1, 9)
        shapes[f"{s}.agfe.set2_b"] = (1, h, 9, 1)
        shapes[f"{s}.fuse"] = (C, C + Cg, 3, 3)
        rdn(f"{s}.rdn_b")
    shapes["recon"] = (1, C, 3, 3)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Closed-form learnable parameter count."""
    C, D, G, Cg, l = (cfg.base_channels, cfg.rdb_layers, cfg.growth_rate,
                      cfg.guidance_channels, cfg.upsample_exponent)
    # sum_j (C + jG) for j < D
    dense_in = D * C + G * D * (D - 1) // 2
    rdb = 9 * G * dense_in + D * G + (C + D * G) * C + C
    rdn = 3 * rdb + 3 * C * C + C + 9 * C * C + C
    h = C // 2
    agfe = (9 * Cg * Cg + Cg) + 2 * (9 * C * h + h + 9 * h + 1)
    stage = 2 * rdn + (4 * C * C + 4 * C) + agfe + (9 * (C + Cg) * C + C)
    pyramid = (27 * Cg + Cg) + (l - 1) * (9 * Cg * Cg + Cg + 4 * Cg * Cg + Cg)
    return (9 * C + C) + pyramid + l * stage + (9 * C + 1)


def init_weights(cfg: ModelConfig, dtype=np.float32) -> ModelWeights:
    """Zero-mean Gaussian weights with std ``init_gain * sqrt(2 / fan_in)``, zero biases, seeded."""
    rng = np.random.default_rng(cfg.seed)
    mw = ModelWeights(cfg)
    for name, shp in layer_shapes(cfg).items():
        fan_in = shp[1] * shp[2] * shp[3]
        mw.params.add(f"{name}.weight", (rng.standard_normal(shp) * cfg.init_gain * np.sqrt(2.0 / fan_in)).astype(dtype))
        mw.params.add(f"{name}.bias", np.zeros(shp[0], dtype=dtype))
    return mw


def zero_weights(cfg: ModelConfig, dtype=np.float32) -> ModelWeights:
    mw = ModelWeights(cfg)
    for name, shp in layer_shapes(cfg).items():
        mw.params.add(f"{name}.weight", np.zeros(shp, dtype=dtype))
        mw.params.add(f"{name}.bias", np.zeros(shp[0], dtype=dtype))
    return mw


# ------------------------------------------------------------------ layers

def conv(x: Tensor, mw: ModelWeights, name: str, stride=1) -> Tensor:
    w = mw.w(f"{name}.weight")
    kh, kw = w.shape[2:]
    pad = (0, 0) if stride != 1 else ((kh - 1) // 2, (kw - 1) // 2)
    return T.conv2d(x, w, mw.w(f"{name}.bias"), stride=stride, padding=pad)


def _check_channels(x: Tensor, expected: int, what: str) -> None:
    if x.data.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"{what} expects {expected} channels, got shape {x.shape}")


def rdb_forward(x: Tensor, mw: ModelWeights, prefix: str) -> Tensor:
    cfg = mw.config
    _check_channels(x, cfg.base_channels, "rdb_forward")
    feats = [x]
    for j in range(cfg.rdb_layers):
        inp = feats[0] if j == 0 else T.concat_channels(feats)
        feats.append(T.relu(conv(inp, mw, f"{prefix}.conv{j}")))
    fused = conv(T.concat_channels(feats), mw, f"{prefix}.fuse")
    return T.add(fused, x)


def rdn_forward(x: Tensor, mw: ModelWeights, prefix: str) -> Tensor:
    _check_channels(x, mw.config.base_channels, "rdn_forward")
    outs = []
    h = x
    for b in range(3):
        h = rdb_forward(h, mw, f"{prefix}.rdb{b}")
        outs.append(h)
    g = conv(T.concat_channels(outs), mw, f"{prefix}.gff1")
    g = conv(g, mw, f"{prefix}.gff3")
    return T.add(g, x)


def attention_map(df: Tensor, mw: ModelWeights, prefix: str) -> Tensor:
    """Single-channel spatial attention in (0, 1) from depth features."""
    _check_channels(df, mw.config.base_channels, "attention_map")
    s1 = conv(conv(df, mw, f"{prefix}.set1_a"), mw, f"{prefix}.set1_b")
    s2 = conv(conv(df, mw, f"{prefix}.set2_a"), mw, f"{prefix}.set2_b")
    return T.sigmoid(T.add(s1, s2))


def agfe_forward(df: Tensor, gf: Tensor, mw: ModelWeights, prefix: str,
                 capture: dict | None = None) -> Tensor:
    if (df.shape[0], df.shape[2], df.shape[3]) != (gf.shape[0], gf.shape[2], gf.shape[3]):
        raise ShapeError(f"agfe_forward spatial mismatch: depth {df.shape} vs guidance {gf.shape}")
    _check_channels(gf, mw.config.guidance_channels, "agfe_forward guidance")
    g = conv(gf, mw, f"{prefix}.guide")
    att = attention_map(df, mw, prefix)
    out = T.mul_broadcast(g, att)
    if capture is not None:
        capture.update(guidance=g.data, attention=att.data, attended=out.data)
    return out


def guidance_pyramid(ih: Tensor, l: int, mw: ModelWeights) -> list[Tensor]:
    """Guidance features ``[IF_l, ..., IF_1]``, halving resolution at each level."""
    if ih.data.ndim != 4 or ih.shape[1] != 3:
        raise ShapeError(f"guidance image must be N x 3 x H x W, got {ih.shape}")
    need = 2 ** (l - 1)
    if ih.shape[2] % need or ih.shape[3] % need:
        raise ShapeError(f"guidance dims {ih.shape[2:]} must be divisible by {need} for l={l}")
    levels = [conv(ih, mw, "guide.entry")]
    for m in range(1, l):
        h = conv(levels[-1], mw, f"guide.level{m}.conv")
        levels.append(conv(h, mw, f"guide.level{m}.down", stride=2))
    return levels


def stage_forward(df: Tensor, gf: Tensor, mw: ModelWeights, prefix: str,
                  capture: dict | None = None) -> Tensor:
    n, _, h, w = df.shape
    if gf.data.ndim != 4 or gf.shape[2:] != (2 * h, 2 * w):
        raise ShapeError(f"stage_forward needs guidance at {(2 * h, 2 * w)}, got {gf.shape[2:]}")
    # upsampling sub-stage
    a = rdn_forward(df, mw, f"{prefix}.rdn_a")
    up = T.pixel_shuffle(conv(a, mw, f"{prefix}.expand"), 2)
    # attentive fusion sub-stage
    att = agfe_forward(up, gf, mw, f"{prefix}.agfe", capture)
    fused = conv(T.concat_channels([up, att]), mw, f"{prefix}.fuse")
    return T.add(rdn_forward(fused, mw, f"{prefix}.rdn_b"), up)


def check_inputs(dl: Tensor, ih: Tensor, cfg: ModelConfig) -> None:
    if dl.data.ndim != 4 or dl.shape[1] != 1:
        raise ShapeError(f"depth must be N x 1 x h x w, got {dl.shape}")
    if ih.data.ndim != 4 or ih.shape[1] != 3:
        raise ShapeError(f"guidance must be N x 3 x H x W, got {ih.shape}")
    if dl.shape[0] != ih.shape[0]:
        raise ShapeError(f"batch mismatch: depth {dl.shape[0]} vs guidance {ih.shape[0]}")
    f = cfg.factor
    if ih.shape[2:] != (dl.shape[2] * f, dl.shape[3] * f):
        raise ShapeError(f"guidance dims {ih.shape[2:]} must be {f}x depth dims {dl.shape[2:]}")


def pagnet_forward(dl: Tensor, ih: Tensor, mw: ModelWeights,
                   captures: list[dict] | None = None) -> Tensor:
    """Map low-resolution depth plus high-resolution RGB to high-resolution depth.

    ``captures``, if given, receives one dict per stage with the guidance
    features before gating, the attention map and the attended features.
    """
    from .data import bicubic_resample

    cfg = mw.config
    check_inputs(dl, ih, cfg)
    l = cfg.upsample_exponent
    pyramid = guidance_pyramid(ih, l, mw)
    x = conv(dl, mw, "entry")
    for k in range(1, l + 1):
        cap = {} if captures is not None else None
        # stage k outputs at H / 2^(l-k), the resolution of IF_k
        x = stage_forward(x, pyramid[l - k], mw, f"stage{k}", cap)
        if captures is not None:
            captures.append(cap)
    out = conv(x, mw, "recon")
    if cfg.global_residual:
        base = bicubic_resample(dl.data, ih.shape[2], ih.shape[3]).astype(out.dtype)
        out = T.add(out, Tensor(base))
    return out
