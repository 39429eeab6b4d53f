"""Dense NCHW tensors with a sequential reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape` when any
input requires a gradient. Outside a tape context nothing is recorded, which
is how inference runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """Raised on invalid use of the gradient tape."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim and min(arr.shape) < 1:
            raise ShapeError(f"all shape entries must be >= 1, got {arr.shape}")
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numel(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {self.name or '<anon>'}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered list of recorded operations.

    Records are appended in execution order, so the list is topological by
    construction. A tape may be run backward once; call :meth:`reset` to
    reuse it.
    """

    records: list[_Record] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); reset() before recording")
        self.records.append(_Record(out, inputs, backward))

    def reset(self) -> None:
        self.records.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


_ACTIVE: list[Tape] = []


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].record(out, inputs, backward)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every grad-requiring tensor reachable from ``loss``.

    Gradients accumulate additively into existing ``.grad`` buffers of leaf
    tensors; intermediate buffers are rebuilt on each call.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("backward() called twice on the same tape without reset()")
    tape.consumed = True

    produced = {id(r.out) for r in tape.records}
    if id(loss) not in produced:
        raise TapeError("loss was not produced on this tape")
    # intermediate grads live here; leaf grads accumulate into .grad
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        rec.out.grad = g
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in produced:
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Zero-padded 2-D cross-correlation over NCHW input."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeError(f"stride must be positive, got {(sh, sw)}")
    if ph < 0 or pw < 0:
        raise ShapeError(f"padding must be non-negative, got {(ph, pw)}")
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has Cin={cin}, weight expects Cin={wcin}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.data.shape}")
    if kh > h + 2 * ph:
        raise ShapeError(f"conv2d kernel height {kh} exceeds padded input height {h + 2 * ph}")
    if kw > w + 2 * pw:
        raise ShapeError(f"conv2d kernel width {kw} exceeds padded input width {w + 2 * pw}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be degenerate ({ho}x{wo})")

    # NHWC internally: im2col rows are (n, ho, wo), columns (kh, kw, cin)
    xh = x.data.transpose(0, 2, 3, 1)
    xh = np.pad(xh, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else np.ascontiguousarray(xh)
    k = cin * kh * kw
    win = sliding_window_view(xh, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
    col = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k)
    wmat = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(cout, k)
    out = col @ wmat.T
    if bias is not None:
        out += bias.data
    out = Tensor(np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2), dtype=x.dtype))

    def _back(g):
        gh = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gm = gh.reshape(-1, cout)
        gw = None
        if weight.requires_grad:
            gw = (gm.T @ col).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad and sh == sw == 1:
            # transposed conv: correlate the zero-padded output grad with the flipped kernel
            gp = np.pad(gh, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(1, 2))[:, ph:ph + h, pw:pw + w]
            gcol = np.ascontiguousarray(gwin.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, kh * kw * cout)
            wf = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)).reshape(-1, cin)
            gx = (gcol @ wf).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        elif x.requires_grad:
            dcol = (gm @ wmat).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros_like(xh)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcol[:, :, :, i, j]
            gx = gxp[:, ph:ph + h, pw:pw + w].transpose(0, 3, 1, 2)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, _back)


# ------------------------------------------------------------- rearrangement

def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Move ``r*r`` channel groups into an ``r``-times larger spatial grid."""
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"pixel_shuffle needs channels divisible by r^2={r * r}, got {c}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)
    out = Tensor(np.ascontiguousarray(out))

    def _back(g):
        return (pixel_unshuffle_array(g, r),)

    return _record(out, (x,), _back)


def pixel_unshuffle_array(a: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        a.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels spatial mismatch: {parts[0].shape} vs {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def _back(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return _record(out, parts, _back)


# --------------------------------------------------------------- elementwise

def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid exp overflow
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    # rounding would otherwise hit exactly 0 or 1 for large |x|; keep the open interval
    one = x.dtype.type(1)
    s = np.clip(s, np.nextafter(x.dtype.type(0), one), np.nextafter(one, x.dtype.type(0)))
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.dtype))
    return _record(out, (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add requires identical shapes, got {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def mul_broadcast(x: Tensor, m: Tensor) -> Tensor:
    """Multiply ``x[N,C,H,W]`` by a single-channel map ``m[N,1,H,W]``."""
    if m.data.ndim != 4 or m.shape[1] != 1:
        raise ShapeError(f"mul_broadcast map must have channel dim 1, got {m.shape}")
    if (x.shape[0], x.shape[2], x.shape[3]) != (m.shape[0], m.shape[2], m.shape[3]):
        raise ShapeError(f"mul_broadcast N/H/W mismatch: {x.shape} vs {m.shape}")
    out = Tensor(x.data * m.data)

    def _back(g):
        return g * m.data, (g * x.data).sum(axis=1, keepdims=True)

    return _record(out, (x, m), _back)


def elementwise(op_kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    if op_kind == "sigmoid":
        return sigmoid(a)
    if op_kind == "relu":
        return relu(a)
    if op_kind == "add":
        return add(a, b)
    if op_kind == "mul_broadcast":
        return mul_broadcast(a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------- reductions

def reduce_sum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor((x.data * c).astype(x.dtype))
    return _record(out, (x,), lambda g: (g * c,))


def loss_terms(pred: Tensor, target: Tensor) -> tuple[Tensor, Tensor]:
    """Per-element mean squared error and mean absolute error."""
    if pred.shape != target.shape:
        raise ShapeError(f"loss_terms shape mismatch: {pred.shape} vs {target.shape}")
    if pred.numel() == 0:
        raise ShapeError("loss_terms on empty tensor")
    diff = pred.data - target.data
    n = diff.size
    l2 = Tensor(np.asarray(np.mean(diff * diff), dtype=pred.dtype))
    l1 = Tensor(np.asarray(np.mean(np.abs(diff)), dtype=pred.dtype))
    sgn = np.sign(diff)
    l2 = _record(l2, (pred, target), lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))
    l1 = _record(l1, (pred, target), lambda g: (g * sgn / n, -g * sgn / n))
    return l2, l1
