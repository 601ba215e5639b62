"""Finite-difference validation of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InvalidInputError, NumericalError
from .tape import ParamSlot, Tape


def grad_check(
    loss_fn: Callable[[Tape], object],
    params: list[ParamSlot],
    h: float = 1e-5,
    sample: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error of tape gradients vs central differences.

    ``loss_fn`` builds a scalar loss node on the tape it is given; it must
    be a pure function of the current parameter values.  Up to ``sample``
    coordinates per parameter are probed with ``(f(t+h) - f(t-h)) / 2h``.
    Requires 64-bit parameters.

    Discrepancies at or below the absolute floor of 1e-8 are attributed
    to finite-difference round-off (the difference quotient carries noise
    of roughly ``eps * |f| / h``) and count as zero; anything larger is
    normalized by the bigger of the two gradient magnitudes.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    trainable = [p for p in params if p.trainable]
    for p in trainable:
        if p.value.dtype != np.float64:
            raise InvalidInputError(
                f"grad_check requires float64 parameters, {p.name} is {p.value.dtype}"
            )

    def scalar_loss() -> float:
        value = loss_fn(Tape(grad_enabled=False)).value
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss during grad_check: {value}")
        return float(value)

    tape = Tape()
    loss = loss_fn(tape)
    if not np.isfinite(loss.value):
        raise NumericalError(f"non-finite loss during grad_check: {loss.value}")
    for p in trainable:
        p.zero_grad()
    tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in trainable}

    worst = 0.0
    for p in trainable:
        flat = p.value.reshape(-1)
        size = flat.shape[0]
        coords = (
            np.arange(size)
            if size <= sample
            else rng.choice(size, size=sample, replace=False)
        )
        grads = analytic[p.name].reshape(-1)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + h
            f_plus = scalar_loss()
            flat[j] = orig - h
            f_minus = scalar_loss()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            diff = abs(grads[j] - numeric)
            if diff <= 1e-8:
                continue
            worst = max(worst, diff / max(abs(grads[j]), abs(numeric)))
    return worst
