"""Minimal dense float32 linear algebra with explicit per-op backward.

Every operation the encoder and trainer need is implemented as a plain
function taking and returning immutable `Tensor` values.  Each op knows
its own vector-Jacobian product; an optional `Tape` records the ops so
that gradients w.r.t. a chosen set of leaf tensors (the adapters) can be
pulled out after a forward pass.  This is deliberately not a general
autodiff engine: the op set is closed and the encoder graph is static.

Matmul accumulates dot products in float64 before casting back to
float32 to bound drift over deep stacks; everything else stays float32.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))

LAYER_NORM_EPS = 1e-12


class Tensor:
    """Immutable row-major float32 array.

    Construction normalizes to C-contiguous float32 and write-protects
    the buffer, so instances are safe to share across worker threads.
    """

    __slots__ = ("data",)

    def __init__(self, data, check: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if check and not np.all(np.isfinite(arr)):
            from .errors import NumericError

            raise NumericError("tensor contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


VjpFn = Callable[[np.ndarray, Sequence[bool]], tuple]


class Tape:
    """Records op applications so gradients can be replayed in reverse.

    Only gradients reachable from watched leaves are computed; inputs
    that are neither watched nor produced on the tape are treated as
    constants and their VJPs are skipped.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], VjpFn]] = []
        self._watched: set[int] = set()

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._watched.add(id(t))

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: VjpFn) -> None:
        self._entries.append((out, inputs, vjp))

    def gradients(self, loss: Tensor, seed: float = 1.0) -> dict[int, np.ndarray]:
        """Backward pass from `loss`; returns {id(watched tensor): grad}.

        `seed` scales the initial gradient (handy for batch averaging).
        """
        produced = {id(out) for out, _, _ in self._entries}
        grads: dict[int, np.ndarray] = {
            id(loss): np.full(loss.shape, seed, dtype=np.float32)
        }
        for out, inputs, vjp in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            need = tuple(
                id(t) in self._watched or id(t) in produced for t in inputs
            )
            if not any(need):
                continue
            for t, gi in zip(inputs, vjp(g, need)):
                if gi is None:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
        return {i: g for i, g in grads.items() if i in self._watched}


def _mm64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation, cast back to float32."""
    return np.matmul(a.astype(np.float64), b.astype(np.float64)).astype(np.float32)


def matmul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Batched matrix product over the last two axes.

    Leading batch dimensions must match exactly; no broadcasting.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(_mm64(a.data, b.data))
    if tape is not None:
        def vjp(g, need):
            ga = _mm64(g, np.swapaxes(b.data, -1, -2)) if need[0] else None
            gb = _mm64(np.swapaxes(a.data, -1, -2), g) if need[1] else None
            return ga, gb

        tape.record(out, (a, b), vjp)
    return out


def transpose(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {x.shape}")
    out = Tensor(np.swapaxes(x.data, -1, -2))
    if tape is not None:
        tape.record(out, (x,), lambda g, need: (np.swapaxes(g, -1, -2),))
    return out


def row_softmax(s: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction.

    On a 2-D matrix this normalizes each row to sum to 1.
    """
    x = s.data
    e = np.exp(x - x.max(axis=-1, keepdims=True), dtype=np.float32)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))
    if tape is not None:
        p = out.data

        def vjp(g, need):
            inner = (g * p).sum(axis=-1, keepdims=True)
            return ((g - inner) * p,)

        tape.record(out, (s,), vjp)
    return out


def col_softmax(s: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Column-wise softmax, defined as transpose . row_softmax . transpose."""
    return transpose(row_softmax(transpose(s, tape), tape), tape)


def tanh(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(np.tanh(x.data))
    if tape is not None:
        y = out.data
        tape.record(out, (x,), lambda g, need: (g * (1.0 - y * y),))
    return out


def gelu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    v = x.data
    cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
    out = Tensor(v * cdf)
    if tape is not None:
        pdf = _INV_SQRT2PI * np.exp(-0.5 * v * v)

        def vjp(g, need):
            return (g * (cdf + v * pdf).astype(np.float32),)

        tape.record(out, (x,), vjp)
    return out


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g, need: (g, g))
    return out


def scale(x: Tensor, alpha: float, tape: Optional[Tape] = None) -> Tensor:
    """Multiply by a Python scalar."""
    alpha = float(alpha)
    out = Tensor(x.data * np.float32(alpha))
    if tape is not None:
        tape.record(out, (x,), lambda g, need: (g * np.float32(alpha),))
    return out


def layer_norm(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    eps: float = LAYER_NORM_EPS,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must be ({d},), got {gain.shape}/{bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float32)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True, dtype=np.float32)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    if tape is not None:
        def vjp(g, need):
            gx = None
            if need[0]:
                gh = g * gain.data
                m1 = gh.mean(axis=-1, keepdims=True, dtype=np.float32)
                m2 = (gh * xhat).mean(axis=-1, keepdims=True, dtype=np.float32)
                gx = (inv * (gh - m1 - xhat * m2)).astype(np.float32)
            lead = tuple(range(g.ndim - 1))
            gg = (g * xhat).sum(axis=lead, dtype=np.float32) if need[1] else None
            gb = g.sum(axis=lead, dtype=np.float32) if need[2] else None
            return gx, gg, gb

        tape.record(out, (x, gain, bias), vjp)
    return out


def linear(
    x: Tensor, w: Tensor, b: Optional[Tensor] = None, tape: Optional[Tape] = None
) -> Tensor:
    """Affine map y = x @ w^T + b with w of shape [out, in]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear shape mismatch: x {x.shape} vs w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias must be ({w.shape[0]},), got {b.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    y2 = _mm64(x2, w.data.T)
    if b is not None:
        y2 = y2 + b.data
    out = Tensor(y2.reshape(*lead, w.shape[0]))
    if tape is not None:
        inputs = (x, w) if b is None else (x, w, b)

        def vjp(g, need):
            g2 = g.reshape(-1, w.shape[0])
            gx = _mm64(g2, w.data).reshape(x.shape) if need[0] else None
            gw = _mm64(g2.T, x2) if need[1] else None
            if b is None:
                return gx, gw
            gb = g2.sum(axis=0, dtype=np.float32) if need[2] else None
            return gx, gw, gb

        tape.record(out, inputs, vjp)
    return out


def embedding_lookup(
    table: Tensor, ids: np.ndarray, tape: Optional[Tape] = None
) -> Tensor:
    """Gather rows of `table` (ids is a plain int array, not a Tensor)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])
    if tape is not None:
        def vjp(g, need):
            if not need[0]:
                return (None,)
            gt = np.zeros(table.shape, dtype=np.float32)
            np.add.at(gt, ids, g)
            return (gt,)

        tape.record(out, (table,), vjp)
    return out


def split_heads(x: Tensor, num_heads: int, tape: Optional[Tape] = None) -> Tensor:
    """[seq, d] -> [heads, seq, d/heads]."""
    n, d = x.shape
    if d % num_heads:
        raise ShapeError(f"hidden dim {d} not divisible by {num_heads} heads")
    hd = d // num_heads
    out = Tensor(x.data.reshape(n, num_heads, hd).transpose(1, 0, 2))
    if tape is not None:
        tape.record(
            out, (x,), lambda g, need: (g.transpose(1, 0, 2).reshape(n, d),)
        )
    return out


def merge_heads(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """[heads, seq, hd] -> [seq, heads*hd]; inverse of split_heads."""
    h, n, hd = x.shape
    out = Tensor(x.data.transpose(1, 0, 2).reshape(n, h * hd))
    if tape is not None:
        tape.record(
            out,
            (x,),
            lambda g, need: (g.reshape(n, h, hd).transpose(1, 0, 2),),
        )
    return out


def slice_rows(x: Tensor, start: int, stop: int, tape: Optional[Tape] = None) -> Tensor:
    """Take rows [start:stop) of a 2-D tensor."""
    if x.ndim != 2:
        raise ShapeError(f"slice_rows needs rank 2, got {x.shape}")
    if not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}) out of range for {x.shape}")
    out = Tensor(x.data[start:stop])
    if tape is not None:
        def vjp(g, need):
            gx = np.zeros(x.shape, dtype=np.float32)
            gx[start:stop] = g
            return (gx,)

        tape.record(out, (x,), vjp)
    return out


def weighted_sum(x: Tensor, weights: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Scalar sum(x * weights) for a constant weight mask."""
    w = np.asarray(weights, dtype=np.float32)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum shape mismatch: {x.shape} vs {w.shape}")
    out = Tensor(np.float32((x.data.astype(np.float64) * w).sum()))
    if tape is not None:
        tape.record(out, (x,), lambda g, need: ((g * w).astype(np.float32),))
    return out
