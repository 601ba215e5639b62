"""Minimal reverse-mode differentiation over a fixed operation set.

A :class:`Tape` records every primitive executed through it.  Calling
:meth:`Tape.backward` on a scalar output replays the records in exact
reverse order, accumulating gradients into each input :class:`Node`.
Parameters are :class:`ParamSlot` nodes that persist across tapes; their
``grad`` buffers are reused and must be zeroed between steps.

Operations accept either nodes or plain arrays/scalars; gradients are only
accumulated into node inputs.  All operations preserve the floating dtype
of their inputs (scalar constants are Python floats on purpose: NumPy's
promotion rules would otherwise upcast float32 tensors).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from . import spectral
from .errors import InvalidInputError

_INV_SQRT2 = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def neg_cap(dtype) -> float:
    """Large negative stand-in for -inf that is safe in the given dtype."""
    return -1e30 if np.dtype(dtype) == np.float64 else -1e9


class Node:
    """A value in the computation graph; ``grad`` is filled by backward."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype


class ParamSlot(Node):
    """Named trainable tensor with a persistent gradient buffer."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, value: np.ndarray, trainable: bool = True):
        super().__init__(np.asarray(value))
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self):
        return f"ParamSlot({self.name!r}, shape={self.value.shape})"


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x)


def _accumulate(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the reverse of NumPy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Ordered record of primitives for one forward/backward pair.

    A tape is single-owner: run one forward pass through it, call
    :meth:`backward` at most once, then discard it.  Tapes built with
    ``grad_enabled=False`` record nothing and are cheap evaluation
    contexts.
    """

    def __init__(self, grad_enabled: bool = True):
        self.grad_enabled = grad_enabled
        self._records: list[tuple[tuple[Node, ...], Callable]] = []
        self._replayed = False

    def _record(self, outputs: tuple[Node, ...], backward: Callable) -> None:
        if self.grad_enabled:
            self._records.append((outputs, backward))

    def backward(self, loss: Node) -> None:
        """Accumulate d(loss)/d(input) into every recorded input node."""
        if not self.grad_enabled:
            raise InvalidInputError("backward on a gradient-disabled tape")
        if self._replayed:
            raise InvalidInputError("tape already replayed; one backward per forward")
        if np.ndim(loss.value) != 0:
            raise InvalidInputError("backward requires a scalar output")
        self._replayed = True
        loss.grad = np.ones_like(loss.value)
        for outputs, bwd in reversed(self._records):
            grads = [o.grad for o in outputs]
            if all(g is None for g in grads):
                continue
            grads = [
                np.zeros_like(o.value) if g is None else g
                for o, g in zip(outputs, grads)
            ]
            bwd(*grads)

    # ------------------------------------------------------------------
    # element-wise arithmetic and shaping
    # ------------------------------------------------------------------

    def add(self, a, b) -> Node:
        """Broadcasting addition."""
        av, bv = _val(a), _val(b)
        out = Node(av + bv)

        def bwd(g):
            if isinstance(a, Node):
                _accumulate(a, _unbroadcast(g, a.value.shape))
            if isinstance(b, Node):
                _accumulate(b, _unbroadcast(g, b.value.shape))

        self._record((out,), bwd)
        return out

    def mul(self, a, b) -> Node:
        """Broadcasting Hadamard product (also covers scalar scaling)."""
        av, bv = _val(a), _val(b)
        out = Node(av * bv)

        def bwd(g):
            if isinstance(a, Node):
                _accumulate(a, _unbroadcast(g * bv, a.value.shape))
            if isinstance(b, Node):
                _accumulate(b, _unbroadcast(g * av, b.value.shape))

        self._record((out,), bwd)
        return out

    def reshape(self, x: Node, shape: Sequence[int]) -> Node:
        xv = _val(x)
        out = Node(xv.reshape(shape))

        def bwd(g):
            if isinstance(x, Node):
                _accumulate(x, g.reshape(xv.shape))

        self._record((out,), bwd)
        return out

    def slice_cols(self, x: Node, start: int, stop: int) -> Node:
        """Contiguous slice along the last (channel) axis."""
        xv = _val(x)
        out = Node(xv[..., start:stop])

        def bwd(g):
            if isinstance(x, Node):
                buf = np.zeros_like(xv)
                buf[..., start:stop] = g
                _accumulate(x, buf)

        self._record((out,), bwd)
        return out

    def slice_time(self, x: Node, start: int, stop: int) -> Node:
        """Contiguous slice along the second-to-last (time/row) axis."""
        xv = _val(x)
        out = Node(xv[..., start:stop, :])

        def bwd(g):
            if isinstance(x, Node):
                buf = np.zeros_like(xv)
                buf[..., start:stop, :] = g
                _accumulate(x, buf)

        self._record((out,), bwd)
        return out

    def concat_cols(self, parts: Sequence[Node]) -> Node:
        """Concatenate along the last axis; inverse of :meth:`slice_cols`."""
        values = [_val(p) for p in parts]
        out = Node(np.concatenate(values, axis=-1))
        widths = [v.shape[-1] for v in values]

        def bwd(g):
            offset = 0
            for part, width in zip(parts, widths):
                if isinstance(part, Node):
                    _accumulate(part, g[..., offset : offset + width])
                offset += width

        self._record((out,), bwd)
        return out

    def mask_col(self, x: Node, index: int, fill: float) -> Node:
        """Replace one column of the last axis with a constant."""
        xv = _val(x)
        value = xv.copy()
        value[..., index] = fill
        out = Node(value)

        def bwd(g):
            if isinstance(x, Node):
                g = g.copy()
                g[..., index] = 0
                _accumulate(x, g)

        self._record((out,), bwd)
        return out

    def mean_time(self, x: Node, weights: np.ndarray | None = None) -> Node:
        """Mean over the time axis, keepdims; optionally weighted.

        ``weights`` is a constant ``(..., n, 1)`` mask; the weighted form
        computes ``sum(w * x) / sum(w)`` per sequence.
        """
        xv = _val(x)
        n = xv.shape[-2]
        if weights is None:
            out = Node(xv.mean(axis=-2, keepdims=True))

            def bwd(g):
                if isinstance(x, Node):
                    _accumulate(x, np.broadcast_to(g, xv.shape) / float(n))

        else:
            w = np.asarray(weights, dtype=xv.dtype)
            denom = w.sum(axis=-2, keepdims=True)
            if np.any(denom == 0):
                raise InvalidInputError("mean weights sum to zero for some sequence")
            out = Node((xv * w).sum(axis=-2, keepdims=True) / denom)

            def bwd(g):
                if isinstance(x, Node):
                    _accumulate(x, np.broadcast_to(g / denom, xv.shape) * w)

        self._record((out,), bwd)
        return out

    # ------------------------------------------------------------------
    # dense layers and nonlinearities
    # ------------------------------------------------------------------

    def linear(self, x: Node, weight: Node, bias: Node | None = None) -> Node:
        """Affine map over the last axis: ``x @ W + b``."""
        xv, wv = _val(x), _val(weight)
        if xv.shape[-1] != wv.shape[0]:
            raise InvalidInputError(
                f"linear: inner dims differ, {xv.shape[-1]} vs {wv.shape[0]}"
            )
        x2 = xv.reshape(-1, wv.shape[0])
        out2 = x2 @ wv
        if bias is not None:
            out2 = out2 + _val(bias).reshape(1, -1)
        out = Node(out2.reshape(xv.shape[:-1] + (wv.shape[1],)))

        def bwd(g):
            g2 = g.reshape(-1, wv.shape[1])
            if isinstance(weight, Node):
                _accumulate(weight, x2.T @ g2)
            if bias is not None and isinstance(bias, Node):
                _accumulate(bias, g2.sum(axis=0).reshape(bias.value.shape))
            if isinstance(x, Node):
                _accumulate(x, (g2 @ wv.T).reshape(xv.shape))

        self._record((out,), bwd)
        return out

    def matmul_rt(self, x: Node, table: Node) -> Node:
        """``x @ table.T`` for a 2-D ``x``; used by the tied prediction head."""
        xv, tv = _val(x), _val(table)
        out = Node(xv @ tv.T)

        def bwd(g):
            if isinstance(x, Node):
                _accumulate(x, g @ tv)
            if isinstance(table, Node):
                _accumulate(table, g.T @ xv)

        self._record((out,), bwd)
        return out

    def embedding(self, table: Node, ids: np.ndarray) -> Node:
        """Row lookup ``table[ids]``; backward scatter-adds into the table."""
        ids = np.asarray(ids)
        tv = _val(table)
        if ids.size and (ids.min() < 0 or ids.max() >= tv.shape[0]):
            raise InvalidInputError(
                f"embedding ids out of range [0, {tv.shape[0]}): "
                f"min={ids.min()}, max={ids.max()}"
            )
        out = Node(tv[ids])

        def bwd(g):
            if isinstance(table, Node):
                if table.grad is None:
                    table.grad = np.zeros_like(table.value)
                np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, tv.shape[1]))

        self._record((out,), bwd)
        return out

    def gelu(self, x: Node) -> Node:
        """Exact GELU ``x * Phi(x)`` with the standard normal CDF."""
        xv = _val(x)
        cdf = 0.5 * (1.0 + erf(xv * _INV_SQRT2))
        out = Node(xv * cdf)

        def bwd(g):
            if isinstance(x, Node):
                pdf = np.exp(-0.5 * xv * xv) * _INV_SQRT_2PI
                _accumulate(x, g * (cdf + xv * pdf))

        self._record((out,), bwd)
        return out

    def layer_norm(self, x: Node, gamma: Node, beta: Node, eps: float = 1e-12) -> Node:
        """Per-row standardization over the last axis, then scale and shift."""
        xv = _val(x)
        mean = xv.mean(axis=-1, keepdims=True)
        centered = xv - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv
        gv, bv = _val(gamma), _val(beta)
        out = Node(xhat * gv + bv)

        def bwd(g):
            if isinstance(gamma, Node):
                _accumulate(gamma, _unbroadcast(g * xhat, gamma.value.shape))
            if isinstance(beta, Node):
                _accumulate(beta, _unbroadcast(g, beta.value.shape))
            if isinstance(x, Node):
                gx = g * gv
                term = gx.mean(axis=-1, keepdims=True)
                term2 = (gx * xhat).mean(axis=-1, keepdims=True)
                _accumulate(x, inv * (gx - term - xhat * term2))

        self._record((out,), bwd)
        return out

    def dropout(self, x: Node, rate: float, rng: np.random.Generator) -> Node:
        """Inverted dropout; kept entries are scaled by ``1/(1-rate)``.

        Callers gate this on training mode; evaluation simply skips the op.
        """
        if not 0.0 <= rate < 1.0:
            raise InvalidInputError(f"dropout rate must be in [0, 1), got {rate}")
        xv = _val(x)
        if rate == 0.0:
            return x if isinstance(x, Node) else Node(xv)
        keep = rng.random(xv.shape) >= rate
        scale = 1.0 / (1.0 - rate)
        factor = keep.astype(xv.dtype) * scale
        out = Node(xv * factor)

        def bwd(g):
            if isinstance(x, Node):
                _accumulate(x, g * factor)

        self._record((out,), bwd)
        return out

    # ------------------------------------------------------------------
    # spectral transforms (adjoints from the spectral module)
    # ------------------------------------------------------------------

    def rfft(self, x: Node) -> tuple[Node, Node]:
        xv = _val(x)
        spec = spectral.rfft(xv)
        re, im = Node(spec.re), Node(spec.im)
        n = spec.n_origin

        def bwd(g_re, g_im):
            if isinstance(x, Node):
                _accumulate(x, spectral.rfft_adjoint(g_re, g_im, n).astype(xv.dtype))

        self._record((re, im), bwd)
        return re, im

    def irfft(self, re: Node, im: Node, n: int) -> Node:
        out = Node(spectral.irfft(spectral.ComplexSpectrum(_val(re), _val(im), n), n))

        def bwd(g):
            g_re, g_im = spectral.irfft_adjoint(g)
            if isinstance(re, Node):
                _accumulate(re, g_re)
            if isinstance(im, Node):
                _accumulate(im, g_im)

        self._record((out,), bwd)
        return out

    def haar_dwt(self, x: Node) -> tuple[Node, Node]:
        pair = spectral.haar_dwt(_val(x))
        approx, detail = Node(pair.approx), Node(pair.detail)

        def bwd(g_a, g_d):
            if isinstance(x, Node):
                _accumulate(x, spectral.haar_dwt_adjoint(g_a, g_d))

        self._record((approx, detail), bwd)
        return approx, detail

    def haar_idwt(self, approx: Node, detail: Node) -> Node:
        av = _val(approx)
        out = Node(
            spectral.haar_idwt(
                spectral.WaveletPair(av, _val(detail), 2 * av.shape[-2])
            )
        )

        def bwd(g):
            g_a, g_d = spectral.haar_idwt_adjoint(g)
            if isinstance(approx, Node):
                _accumulate(approx, g_a)
            if isinstance(detail, Node):
                _accumulate(detail, g_d)

        self._record((out,), bwd)
        return out

    # ------------------------------------------------------------------
    # loss
    # ------------------------------------------------------------------

    def softmax_cross_entropy(self, logits: Node, targets) -> Node:
        """Stable ``-log softmax(logits)[target]``; mean over a 2-D batch.

        ``logits`` is ``(V,)`` with an int target, or ``(B, V)`` with an
        int array of targets.  The gradient is ``softmax - one_hot``
        (scaled by ``1/B`` for the batched mean).
        """
        lv = _val(logits)
        t = np.asarray(targets)
        single = lv.ndim == 1
        l2 = lv.reshape(1, -1) if single else lv
        t2 = t.reshape(-1)
        if t2.min() < 0 or t2.max() >= l2.shape[-1]:
            raise InvalidInputError(
                f"target out of range [0, {l2.shape[-1]}): {t2.min()}..{t2.max()}"
            )
        rows = np.arange(l2.shape[0])
        z = l2 - l2.max(axis=-1, keepdims=True)
        ez = np.exp(z)
        denom = ez.sum(axis=-1, keepdims=True)
        losses = np.log(denom[:, 0]) - z[rows, t2]
        out = Node(losses.mean().astype(lv.dtype))

        def bwd(g):
            if isinstance(logits, Node):
                p = ez / denom
                p[rows, t2] -= 1.0
                p *= float(g) / l2.shape[0]
                _accumulate(logits, p[0] if single else p)

        self._record((out,), bwd)
        return out
