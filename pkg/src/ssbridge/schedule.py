"""Discrete noise schedule for the zero-drift image-to-mask bridge.

The forward process has no drift, so the accumulated variances are plain
cumulative sums of the per-step increments ``beta``. ``sigma_sq[n]`` is the
variance accumulated from the mask end (step 0) and ``sigma_bar_sq[n]`` the
variance still to be accumulated up to the image end (step ``n_steps``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Schedule:
    n_steps: int
    beta: np.ndarray
    sigma_sq: np.ndarray
    sigma_bar_sq: np.ndarray
    origin: dict

    @property
    def total_variance(self) -> float:
        return float(self.sigma_sq[-1])

    def sigma(self, step: int) -> float:
        return float(np.sqrt(self.sigma_sq[step]))

    def params(self) -> dict:
        """Keyword arguments that rebuild this schedule via :func:`make_schedule`."""
        return dict(self.origin)


@dataclass(frozen=True)
class BridgeCoeffs:
    w0: float
    w1: float
    var: float


def triangular_profile(n_steps: int) -> np.ndarray:
    """Symmetric tent evaluated at step midpoints, peak value 1."""
    i = np.arange(n_steps)
    # 1 - |2 (i + 1/2) / n - 1|, written so that the mirror image is exact
    return (2.0 * np.minimum(i, n_steps - 1 - i) + 1.0) / n_steps


def make_schedule(n_steps: int = 50, beta_max: float | None = None,
                  total_variance: float = 1.0) -> Schedule:
    """Build a symmetric triangular schedule.

    Either ``beta_max`` (peak increment) is given directly, or the profile is
    scaled so that the accumulated variance at the image end equals
    ``total_variance``.
    """
    if not isinstance(n_steps, (int, np.integer)) or n_steps < 2:
        raise ValueError(f"n_steps must be an integer >= 2, got {n_steps!r}")
    profile = triangular_profile(int(n_steps))
    if beta_max is not None:
        if not beta_max > 0:
            raise ValueError(f"beta_max must be positive, got {beta_max!r}")
        beta = beta_max * profile
        origin = {"n_steps": int(n_steps), "beta_max": float(beta_max)}
    else:
        if not total_variance > 0:
            raise ValueError(f"total_variance must be positive, got {total_variance!r}")
        beta = profile * (total_variance / profile.sum())
        origin = {"n_steps": int(n_steps), "total_variance": float(total_variance)}
    return _from_beta(beta, origin)


def _from_beta(beta: np.ndarray, origin: dict) -> Schedule:
    beta = np.asarray(beta, dtype=np.float64)
    sigma_sq = np.concatenate([[0.0], np.cumsum(beta)])
    # suffix sums, summed from the image end so that sigma_bar_sq[-1] is exactly 0
    sigma_bar_sq = np.concatenate([np.cumsum(beta[::-1])[::-1], [0.0]])
    for arr in (beta, sigma_sq, sigma_bar_sq):
        arr.setflags(write=False)
    return Schedule(n_steps=len(beta), beta=beta, sigma_sq=sigma_sq,
                    sigma_bar_sq=sigma_bar_sq, origin=origin)


def bridge_coeffs(s: Schedule, step: int) -> BridgeCoeffs:
    """Mixing weights and variance of X_step given both endpoints."""
    if not 0 <= step <= s.n_steps:
        raise ValueError(f"step {step} outside [0, {s.n_steps}]")
    var_fwd = float(s.sigma_sq[step])
    var_bwd = float(s.sigma_bar_sq[step])
    # endpoints hit exactly: 0/x and x/x are exact in floating point
    denom = var_fwd + var_bwd
    w0 = var_bwd / denom
    w1 = var_fwd / denom
    return BridgeCoeffs(w0=w0, w1=w1, var=var_fwd * var_bwd / denom)


def step_ladder(n_steps: int, nfe: int) -> np.ndarray:
    """Strictly decreasing, evenly spaced integer steps from ``n_steps`` to 0.

    The ladder has ``nfe + 1`` entries, i.e. ``nfe`` transitions.
    """
    if not 1 <= nfe <= n_steps:
        raise ValueError(f"nfe must lie in [1, {n_steps}], got {nfe}")
    ladder = np.round(np.linspace(n_steps, 0, nfe + 1)).astype(np.int64)
    # nfe <= n_steps keeps spacing >= 1, so rounding never merges entries
    assert np.all(np.diff(ladder) < 0)
    return ladder
