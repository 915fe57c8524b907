"""Closed-form predictors used as ground truth for the sampler."""
from __future__ import annotations

import numpy as np

from ..schedule import Schedule, bridge_coeffs


def _sigma(s: Schedule, step: int) -> float:
    if not 1 <= step <= s.n_steps:
        raise ValueError(f"noise prediction undefined at step {step}")
    return s.sigma(step)


class DiracOracle:
    """Exact noise target when every mask equals ``a``."""

    def __init__(self, a, s: Schedule):
        a = np.asarray(a, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise ValueError("oracle target must be finite")
        self.a = a
        self.schedule = s

    def predict(self, x_t, label, step):
        return (np.asarray(x_t, dtype=np.float64) - self.a) / _sigma(self.schedule, step)


class GaussianOracle:
    """Posterior-mean predictor for a Gaussian mask prior N(mean, prior_var * I).

    The bridge likelihood depends on the image endpoint, so the oracle must be
    bound to ``x1`` (``generate`` does this through :meth:`bind`) before use.
    """

    def __init__(self, mean, prior_var: float, s: Schedule, x1=None):
        if not prior_var > 0:
            raise ValueError("prior_var must be positive")
        self.mean = np.asarray(mean, dtype=np.float64)
        self.prior_var = float(prior_var)
        self.schedule = s
        self.x1 = None if x1 is None else np.asarray(x1, dtype=np.float64)

    def bind(self, x1) -> "GaussianOracle":
        return GaussianOracle(self.mean, self.prior_var, self.schedule, x1)

    def posterior_mean(self, x_t, step: int) -> np.ndarray:
        if self.x1 is None:
            raise RuntimeError("GaussianOracle used before bind(x1)")
        c = bridge_coeffs(self.schedule, step)
        x_t = np.asarray(x_t, dtype=np.float64)
        if c.w0 == 0.0:
            return np.broadcast_to(self.mean, x_t.shape).copy()
        if c.var == 0.0:
            raise RuntimeError(f"zero bridge variance at interior step {step}")
        gain = self.prior_var * c.w0 / (c.w0 * c.w0 * self.prior_var + c.var)
        return self.mean + gain * (x_t - c.w0 * self.mean - c.w1 * self.x1)

    def predict(self, x_t, label, step):
        sigma = _sigma(self.schedule, step)
        return (np.asarray(x_t, dtype=np.float64) - self.posterior_mean(x_t, step)) / sigma


def dirac_oracle(a, s: Schedule) -> DiracOracle:
    return DiracOracle(a, s)


def gaussian_oracle(mean, prior_var: float, s: Schedule) -> GaussianOracle:
    return GaussianOracle(mean, prior_var, s)
