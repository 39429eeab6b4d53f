"""Sample construction: bicubic resampling, patches, dihedral augmentation, degradation, image I/O."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

VALID_FACTORS = (1, 2, 4, 8, 16)


# ------------------------------------------------------------------ bicubic

def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return np.where(
        ax <= 1, (a + 2) * ax3 - (a + 3) * ax2 + 1,
        np.where(ax < 2, a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a, 0.0),
    )


def resample_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """Row-stochastic (n_out, n_in) cubic interpolation matrix, edge-clamped.

    Pixel centres are aligned (half-pixel convention). When shrinking with
    ``antialias`` the kernel is stretched by the scale, as MATLAB's imresize does.
    """
    s = n_out / n_in
    stretch = 1.0 / s if (antialias and s < 1) else 1.0
    centres = (np.arange(n_out) + 0.5) / s - 0.5
    half = 2.0 * stretch
    first = np.floor(centres - half).astype(int) + 1
    taps = int(np.ceil(2 * half)) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    wts = cubic_kernel((centres[:, None] - idx) / stretch)
    wts /= wts.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps), np.clip(idx, 0, n_in - 1).ravel()), wts.ravel())
    return m


def bicubic_resample(img, out_h: int, out_w: int, antialias: bool = True):
    """Separable Catmull-Rom (a=-0.5) resize over the last two axes.

    Accepts an ndarray or a :class:`Tensor`; returns the same kind.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be >= 1, got {(out_h, out_w)}")
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        out = arr.copy()
    else:
        mh = resample_matrix(h, out_h, antialias)
        mw = resample_matrix(w, out_w, antialias)
        out = (mh @ arr.astype(np.float64) @ mw.T).astype(arr.dtype)
    return Tensor(out) if isinstance(img, Tensor) else out


# ------------------------------------------------------------------ samples

@dataclass(frozen=True)
class DegradationSpec:
    factor: int
    noise_sigma: float = 0.0
    missing_mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.factor not in VALID_FACTORS:
            raise ValueError(f"factor must be one of {VALID_FACTORS}, got {self.factor}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class RgbdSample:
    depth_hr: np.ndarray  # (H, W) in [0, 1]
    rgb: np.ndarray  # (3, H, W) in [0, 1]
    depth_lr: np.ndarray  # (H/s, W/s)
    scale: int
    provenance: str = ""
    spec: DegradationSpec | None = None
    seed: int = 0


def degrade(depth_hr: np.ndarray, spec: DegradationSpec, seed: int = 0) -> np.ndarray:
    """Bicubic downsample, then optional Gaussian noise (8-bit units) on the LR map."""
    depth_hr = np.asarray(depth_hr)
    h, w = depth_hr.shape[-2:]
    f = spec.factor
    if h % f or w % f:
        raise ShapeError(f"depth dims {(h, w)} not divisible by factor {f}")
    lr = bicubic_resample(depth_hr, h // f, w // f)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        lr = lr + rng.normal(0.0, spec.noise_sigma / 255.0, lr.shape).astype(lr.dtype)
        lr = np.clip(lr, 0.0, 1.0)
    if spec.missing_mask is not None:
        lr = np.where(spec.missing_mask, 0.0, lr).astype(lr.dtype)
    return lr


def make_sample(depth_hr, rgb, spec: DegradationSpec, seed: int = 0, provenance: str = "") -> RgbdSample:
    return RgbdSample(depth_hr, rgb, degrade(depth_hr, spec, seed), spec.factor, provenance, spec, seed)


def crop_patches(depth: np.ndarray, rgb: np.ndarray, size: int = 256, stride: int = 64):
    """Overlapping co-located (depth, rgb) crops on a regular grid."""
    h, w = depth.shape[-2:]
    if rgb.shape[-2:] != (h, w):
        raise ShapeError(f"depth {depth.shape} and rgb {rgb.shape} are not aligned")
    if h < size or w < size:
        log.warning("image %dx%d smaller than patch size %d; no patches", h, w, size)
        return []
    out = []
    for y in range(0, h - size + 1, stride):
        for x in range(0, w - size + 1, stride):
            out.append((depth[..., y:y + size, x:x + size], rgb[..., y:y + size, x:x + size]))
    return out


def patch_count(h: int, w: int, size: int = 256, stride: int = 64) -> int:
    if h < size or w < size:
        return 0
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


# (rotations by 90 degrees, horizontal flip first)
DIHEDRAL = [(k, flip) for flip in (False, True) for k in range(4)]


def dihedral(a: np.ndarray, k: int, flip: bool) -> np.ndarray:
    if flip:
        a = a[..., :, ::-1]
    return np.ascontiguousarray(np.rot90(a, k, axes=(-2, -1)))


def augment8(depth: np.ndarray, rgb: np.ndarray):
    """The eight flip/rotation variants, applied identically to depth and RGB."""
    if depth.shape[-1] != depth.shape[-2]:
        raise ShapeError(f"augment8 needs square patches, got {depth.shape[-2:]}")
    return [(dihedral(depth, k, f), dihedral(rgb, k, f)) for k, f in DIHEDRAL]


def build_samples(pairs, spec: DegradationSpec, size: int = 256, stride: int = 64,
                  augment: bool = True, seed: int = 0) -> list[RgbdSample]:
    """Patches -> augmentation -> degradation for a list of (name, depth, rgb)."""
    samples = []
    for name, depth, rgb in pairs:
        for pi, (d, c) in enumerate(crop_patches(depth, rgb, size, stride)):
            variants = augment8(d, c) if augment else [(d, c)]
            for vi, (dv, cv) in enumerate(variants):
                s = seed + len(samples)
                samples.append(make_sample(dv, cv, spec, s, f"{name}/p{pi}/t{vi}"))
    return samples


def synthetic_scene(h: int, w: int, seed: int = 0, planes: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-planar depth with a textured RGB image that shares its edges."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    depth = np.full((h, w), rng.uniform(0.2, 0.4))
    label = np.zeros((h, w), dtype=int)
    for p in range(1, planes + 1):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        ry, rx = rng.uniform(0.1, 0.35, 2)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1 if p % 2 else \
            (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        gy, gx = rng.uniform(-0.3, 0.3, 2)
        depth = np.where(inside, rng.uniform(0.3, 0.9) + gy * (yy - cy) + gx * (xx - cx), depth)
        label = np.where(inside, p, label)
    colours = rng.uniform(0.1, 0.9, (planes + 1, 3))
    rgb = colours[label].transpose(2, 0, 1)
    # texture that does not appear in depth
    freq = rng.uniform(10, 30)
    rgb = rgb + 0.08 * np.sin(2 * np.pi * freq * (xx + 0.5 * yy))[None]
    return np.clip(depth, 0, 1).astype(np.float32), np.clip(rgb, 0, 1).astype(np.float32)


def synthetic_dataset(n: int, size: int, spec: DegradationSpec, seed: int = 0) -> list[RgbdSample]:
    out = []
    for i in range(n):
        d, c = synthetic_scene(size, size, seed + i)
        out.append(make_sample(d, c, spec, seed + i, f"synthetic{seed + i}"))
    return out


# ------------------------------------------------------------------ image I/O

class ImageFormatError(ValueError):
    pass


def _pnm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    toks, i = [], 0
    while len(toks) < count:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ImageFormatError("truncated PNM header")
        toks.append(buf[i:j])
        i = j
    return toks, i + 1  # single whitespace after maxval


def read_pnm(path) -> tuple[np.ndarray, int]:
    buf = Path(path).read_bytes()
    try:
        toks, off = _pnm_tokens(buf, 4)
    except ImageFormatError as e:
        raise ImageFormatError(f"{path}: {e}") from None
    magic = toks[0]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported PNM magic {magic!r} (need binary P5/P6)")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PNM header {toks!r}") from None
    if maxval not in (255, 65535):
        raise ImageFormatError(f"{path}: unsupported maxval {maxval} (need 255 or 65535)")
    ch = 3 if magic == b"P6" else 1
    dt = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    need = w * h * ch * dt.itemsize
    if len(buf) - off < need:
        raise ImageFormatError(f"{path}: pixel data truncated ({len(buf) - off} of {need} bytes)")
    a = np.frombuffer(buf, dt, w * h * ch, off).reshape(h, w, ch)
    return a.astype(np.uint16 if maxval == 65535 else np.uint8), maxval


def write_pnm(path, a: np.ndarray) -> None:
    a = np.asarray(a)
    if a.dtype not in (np.uint8, np.uint16):
        raise ImageFormatError(f"cannot write dtype {a.dtype} as PNM")
    rgb = a.ndim == 3
    h, w = a.shape[:2]
    maxval = 255 if a.dtype == np.uint8 else 65535
    head = f"{'P6' if rgb else 'P5'}\n{w} {h}\n{maxval}\n".encode()
    body = a.astype(">u2").tobytes() if maxval == 65535 else a.tobytes()
    Path(path).write_bytes(head + body)


def read_raw(path) -> tuple[np.ndarray, int]:
    """Integer pixel array (H, W) or (H, W, 3) and its format maximum."""
    ext = Path(path).suffix.lower()
    if ext in (".pgm", ".ppm", ".pnm"):
        a, maxval = read_pnm(path)
        return (a[..., 0] if a.shape[2] == 1 else a), maxval
    if ext == ".png":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L"):
                return np.array(im).astype(np.uint16), 65535
            if im.mode == "I":
                a = np.array(im)
                if a.min() < 0 or a.max() > 65535:
                    raise ImageFormatError(f"{path}: 32-bit PNG values out of 16-bit range")
                return a.astype(np.uint16), 65535
            if im.mode in ("L", "RGB"):
                return np.array(im), 255
            if im.mode in ("P", "RGBA", "LA"):
                return np.array(im.convert("RGB")), 255
            raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
    raise ImageFormatError(f"{path}: unsupported image extension {ext!r}")


def load_image(path) -> np.ndarray:
    """Normalised float32 image: (H, W) for grayscale, (3, H, W) for RGB."""
    a, maxval = read_raw(path)
    out = a.astype(np.float32) / np.float32(maxval)
    return out.transpose(2, 0, 1) if out.ndim == 3 else out


def save_image(img, path, bits: int = 16) -> None:
    """Quantise a [0, 1] image ((H, W) or (3, H, W)) and write PNG or PNM."""
    a = img.data if isinstance(img, Tensor) else np.asarray(img)
    a = np.squeeze(a) if a.ndim == 4 else a
    if a.ndim == 3:
        a = a.transpose(1, 2, 0)
        bits = 8 if bits not in (8, 16) else bits
    maxval = 65535 if bits == 16 else 255
    q = np.rint(np.clip(a, 0.0, 1.0).astype(np.float64) * maxval).astype(np.uint16 if bits == 16 else np.uint8)
    write_raw(q, path)


def write_raw(q: np.ndarray, path) -> None:
    ext = Path(path).suffix.lower()
    if ext in (".pgm", ".ppm", ".pnm"):
        write_pnm(path, q)
    elif ext == ".png":
        from PIL import Image

        if q.ndim == 3 and q.dtype == np.uint16:
            raise ImageFormatError("16-bit RGB PNG is not supported; use PPM")
        Image.fromarray(q).save(path)
    else:
        raise ImageFormatError(f"{path}: unsupported image extension {ext!r}")


# ------------------------------------------------------------------ datasets

def _find(root: Path, stem: str, exts) -> Path | None:
    for e in exts:
        p = root / f"{stem}{e}"
        if p.exists():
            return p
    return None


def list_pairs(root) -> list[tuple[str, Path, Path]]:
    """``<name>_depth.{png,pgm}`` / ``<name>_rgb.{png,ppm}`` pairs, manifest order if present."""
    root = Path(root)
    manifest = root / "manifest.txt"
    if manifest.exists():
        names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    else:
        names = sorted({p.name.rsplit("_depth", 1)[0] for p in root.iterdir()
                        if p.stem.endswith("_depth")})
    pairs = []
    for name in names:
        d = _find(root, f"{name}_depth", (".png", ".pgm"))
        c = _find(root, f"{name}_rgb", (".png", ".ppm"))
        if d is None or c is None:
            raise FileNotFoundError(f"incomplete pair for {name!r} in {root}")
        pairs.append((name, d, c))
    return pairs


def load_pairs(root) -> list[tuple[str, np.ndarray, np.ndarray]]:
    out = []
    for name, d, c in list_pairs(root):
        depth, rgb = load_image(d), load_image(c)
        if depth.ndim != 2:
            raise ImageFormatError(f"{d}: depth map must be single-channel")
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[None], 3, axis=0)
        if rgb.shape[-2:] != depth.shape:
            raise ShapeError(f"{name}: depth {depth.shape} and rgb {rgb.shape[-2:]} differ")
        out.append((name, depth, rgb))
    return out


def write_synthetic_dataset(root, n: int, size: int, seed: int = 0) -> None:
    root = Path(root)
    os.makedirs(root, exist_ok=True)
    for i in range(n):
        d, c = synthetic_scene(size, size, seed + i)
        save_image(d, root / f"scene{i:03d}_depth.png", bits=16)
        save_image(c, root / f"scene{i:03d}_rgb.png", bits=8)
