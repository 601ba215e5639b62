"""Real FFT and level-1 Haar wavelet transforms with exact adjoints.

Conventions
-----------
* Signals are real arrays whose time axis is the second-to-last axis, so a
  block is ``(n, c)`` and a batch of blocks is ``(batch, n, c)``.
* The forward DFT is unnormalized and the inverse carries ``1/n``:
  ``X_k = sum_m x_m exp(-2*pi*i*m*k/n)``.  Only the ``n // 2 + 1``
  non-redundant bins of a real signal are kept, split into separate real
  and imaginary arrays.
* The Haar filters are orthonormal (``1/sqrt(2)`` taps), which makes the
  analysis operator orthogonal: its adjoint equals its inverse and energy
  is preserved exactly.  The detail sign convention is
  ``detail[m] = (x[2m] - x[2m+1]) / sqrt(2)``.

Every transform here is a real-linear map, and the module exposes the
exact adjoint of each one; the autodiff layer consumes those adjoints as
backward passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SQRT1_2 = math.sqrt(0.5)

# Orthonormal Haar analysis filters.  The high-pass taps satisfy
# H[m] = (-1)^m * L[1 - m] exactly, coefficient by coefficient.
HAAR_LO = np.array([SQRT1_2, SQRT1_2])
HAAR_HI = np.array([SQRT1_2, -SQRT1_2])


def n_bins(n: int) -> int:
    """Number of one-sided spectrum bins for a length-``n`` real signal."""
    return n // 2 + 1


@dataclass
class ComplexSpectrum:
    """One-sided spectrum of a real block: ``re``/``im`` are ``(..., M, c)``."""

    re: np.ndarray
    im: np.ndarray
    n_origin: int


@dataclass
class WaveletPair:
    """Level-1 Haar coefficients: ``approx``/``detail`` are ``(..., n/2, c)``."""

    approx: np.ndarray
    detail: np.ndarray
    n_origin: int


def _check_block(x: np.ndarray, min_len: int = 2) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2:
        raise InvalidInputError(f"expected a (time, channel) block, got shape {x.shape}")
    if x.shape[-2] < min_len:
        raise InvalidInputError(f"time length must be >= {min_len}, got {x.shape[-2]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("block contains non-finite values")
    return x


def rfft(x: np.ndarray) -> ComplexSpectrum:
    """One-sided DFT along the time axis of a real block."""
    x = _check_block(x)
    spec = np.fft.rfft(x, axis=-2)
    return ComplexSpectrum(spec.real.copy(), spec.imag.copy(), x.shape[-2])


def irfft(spectrum: ComplexSpectrum, n: int) -> np.ndarray:
    """Inverse of :func:`rfft`; ``n`` disambiguates even/odd signal length."""
    re, im = np.asarray(spectrum.re), np.asarray(spectrum.im)
    if re.shape != im.shape:
        raise InvalidInputError(f"re/im shapes differ: {re.shape} vs {im.shape}")
    if re.shape[-2] != n_bins(n):
        raise InvalidInputError(
            f"spectrum has {re.shape[-2]} bins, expected {n_bins(n)} for length {n}"
        )
    return np.fft.irfft(re + 1j * im, n=n, axis=-2)


def rfft_adjoint(g_re: np.ndarray, g_im: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of :func:`rfft` viewed as a real-linear map.

    Each one-sided bin contributes once (no Hermitian double counting):
    ``g_x[m] = sum_k g_re[k] cos(2 pi m k / n) - g_im[k] sin(2 pi m k / n)``.
    """
    g_re, g_im = np.asarray(g_re), np.asarray(g_im)
    full_shape = g_re.shape[:-2] + (n,) + g_re.shape[-1:]
    full = np.zeros(full_shape, dtype=np.result_type(g_re.dtype, np.complex64))
    full[..., : g_re.shape[-2], :] = g_re + 1j * g_im
    return np.fft.ifft(full, axis=-2).real * float(n)


def irfft_adjoint(g_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`irfft`: maps a time gradient to (re, im) gradients.

    Interior bins enter the inverse transform twice via conjugate symmetry,
    hence the weight 2; the DC bin (and Nyquist bin for even ``n``) enter
    once, and their imaginary parts have zero sensitivity.
    """
    g_x = np.asarray(g_x)
    n = g_x.shape[-2]
    spec = np.fft.rfft(g_x, axis=-2)
    w = np.full((spec.shape[-2], 1), 2.0 / n)
    w[0] = 1.0 / n
    if n % 2 == 0:
        w[-1] = 1.0 / n
    g_re = spec.real * w
    g_im = spec.imag * w
    # rfft of a real signal leaves a zero imaginary part at DC/Nyquist, so no
    # explicit zeroing is needed; keep dtype aligned with the input.
    return g_re.astype(g_x.dtype, copy=False), g_im.astype(g_x.dtype, copy=False)


def haar_dwt(x: np.ndarray) -> WaveletPair:
    """Level-1 orthonormal Haar decomposition along the time axis."""
    x = _check_block(x)
    n = x.shape[-2]
    if n % 2 != 0:
        raise InvalidInputError(f"Haar decomposition requires even length, got {n}")
    even = x[..., 0::2, :]
    odd = x[..., 1::2, :]
    return WaveletPair((even + odd) * SQRT1_2, (even - odd) * SQRT1_2, n)


def haar_idwt(pair: WaveletPair) -> np.ndarray:
    """Perfect reconstruction from level-1 Haar coefficients."""
    a, d = np.asarray(pair.approx), np.asarray(pair.detail)
    if a.shape != d.shape:
        raise InvalidInputError(f"approx/detail shapes differ: {a.shape} vs {d.shape}")
    out_shape = a.shape[:-2] + (2 * a.shape[-2],) + a.shape[-1:]
    x = np.empty(out_shape, dtype=a.dtype)
    x[..., 0::2, :] = (a + d) * SQRT1_2
    x[..., 1::2, :] = (a - d) * SQRT1_2
    return x


# The analysis operator is orthogonal, so each transform's adjoint is the
# other transform with the pair metadata stripped.


def haar_dwt_adjoint(g_approx: np.ndarray, g_detail: np.ndarray) -> np.ndarray:
    return haar_idwt(WaveletPair(g_approx, g_detail, 2 * np.asarray(g_approx).shape[-2]))


def haar_idwt_adjoint(g_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pair = haar_dwt(g_x)
    return pair.approx, pair.detail


def parseval_residual(x: np.ndarray) -> float:
    """Absolute gap between time energy and ``1/n`` of two-sided spectral energy.

    The two-sided energy is reconstructed from the one-sided spectrum via
    conjugate symmetry: interior bins count twice, DC and (for even ``n``)
    Nyquist count once.
    """
    x = _check_block(x)
    n = x.shape[-2]
    spec = rfft(x)
    power = spec.re.astype(np.float64) ** 2 + spec.im.astype(np.float64) ** 2
    weights = np.full((power.shape[-2], 1), 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    freq_energy = float(np.sum(power * weights))
    time_energy = float(np.sum(np.asarray(x, dtype=np.float64) ** 2))
    return abs(time_energy - freq_energy / n)


def convolution_theorem_residual(h: np.ndarray, x: np.ndarray) -> float:
    """Max abs gap between direct circular convolution and the spectral route.

    The direct side is the O(n^2) sum over the periodic extension of ``x``;
    the spectral side multiplies one-sided spectra bin-wise and inverts.
    """
    h = np.asarray(h, dtype=np.float64).reshape(-1, 1)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    if h.shape != x.shape:
        raise InvalidInputError(f"length mismatch: {h.shape[0]} vs {x.shape[0]}")
    n = h.shape[0]
    if n < 2:
        raise InvalidInputError("signals must have length >= 2")

    direct = np.zeros_like(x)
    for k in range(n):
        direct += h[k, 0] * np.roll(x, k, axis=0)

    hs, xs = rfft(h), rfft(x)
    prod = ComplexSpectrum(
        hs.re * xs.re - hs.im * xs.im,
        hs.re * xs.im + hs.im * xs.re,
        n,
    )
    spectral = irfft(prod, n)
    return float(np.max(np.abs(direct - spectral)))
