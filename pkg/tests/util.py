"""Shared test helpers: finite-difference gradient checking and tiny fixtures."""

from __future__ import annotations

import numpy as np

from gumbel_rerank import autodiff as ad


def finite_difference_check(build, tensors, rel_tol=1e-5, abs_floor=1e-8, h=1e-6):
    """Compare analytic gradients of build() against central differences.

    build must construct a fresh scalar loss from the current .data of the
    given tensors each time it is called (so perturbing .data reruns the
    computation).  Tolerance: relative rel_tol with an absolute floor for
    near-zero entries.
    """
    loss = build()
    for t in tensors:
        t.zero_grad()
    ad.backward(loss)
    for t in tensors:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = build().item()
            flat[i] = orig - h
            f_minus = build().item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        numeric = numeric.reshape(t.shape)
        err = np.abs(analytic - numeric)
        tol = np.maximum(rel_tol * np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
        assert np.all(err <= tol), (
            f"gradient mismatch: max err {err.max():.3e}, analytic {analytic}, numeric {numeric}")


class FixedUniformRng:
    """Stand-in rng whose .random(n) returns preset values."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def random(self, n):
        assert n == self.values.size
        return self.values.copy()
