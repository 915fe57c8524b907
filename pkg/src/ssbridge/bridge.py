"""Bridge posterior sampling, regression targets and the reverse sampler.

Grids are plain float64 arrays. Every operation works elementwise, so a
leading batch axis is accepted wherever a single grid is.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import rng as rngmod
from .schedule import Schedule, bridge_coeffs, step_ladder

log = logging.getLogger(__name__)


class Predictor(Protocol):
    def predict(self, x_t: np.ndarray, label, step: int) -> np.ndarray: ...


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleConfig:
    omega: float = 0.0
    nfe: int = 50
    stochastic: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.nfe < 1:
            raise ValueError(f"nfe must be positive, got {self.nfe}")


def _same_shape(*arrays: np.ndarray) -> None:
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"shape mismatch: {shape} vs {np.shape(a)}")


def sample_xt(x0, x1, step: int, s: Schedule, rng: np.random.Generator) -> np.ndarray:
    """Draw X_step from the Gaussian bridge pinned at ``x0`` and ``x1``."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _same_shape(x0, x1)
    c = bridge_coeffs(s, step)
    mean = c.w0 * x0 + c.w1 * x1
    if c.var == 0.0:
        return mean
    return mean + np.sqrt(c.var) * rng.standard_normal(x0.shape)


def training_target(x_t, x0, step: int, s: Schedule) -> np.ndarray:
    """Scaled displacement ``(x_t - x0) / sigma_step`` regressed by the network."""
    if step < 1 or step > s.n_steps:
        raise ValueError(f"training target undefined at step {step} (sigma must be > 0)")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    _same_shape(x_t, x0)
    return (x_t - x0) / s.sigma(step)


def predict_x0(x_t, eps, step: int, s: Schedule) -> np.ndarray:
    if step < 1 or step > s.n_steps:
        raise ValueError(f"cannot predict x0 at step {step}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(x_t, eps)
    return x_t - s.sigma(step) * eps


def guided_eps(p: Predictor, x_t, label, step: int, omega: float) -> np.ndarray:
    """Classifier-free guided noise estimate.

    ``omega == 0`` skips the unconditional pass, which also makes the result
    bitwise identical to the conditional prediction.
    """
    if label is None:
        raise ValueError("guided_eps needs a concrete expert label")
    cond = np.asarray(p.predict(x_t, label, step), dtype=np.float64)
    if omega == 0:
        return cond
    uncond = np.asarray(p.predict(x_t, None, step), dtype=np.float64)
    return (1.0 + omega) * cond - omega * uncond


def reverse_step(x_n, x0_hat, step_from: int, step_to: int, s: Schedule,
                 stochastic: bool, rng: np.random.Generator | None) -> np.ndarray:
    """Brownian-bridge transition from ``step_from`` down to ``step_to``.

    Conditions the zero-drift path on ``x0_hat`` at variance 0 and ``x_n`` at
    variance ``sigma_sq[step_from]``.
    """
    if not 0 <= step_to < step_from <= s.n_steps:
        raise ValueError(f"need 0 <= step_to < step_from <= {s.n_steps}, "
                         f"got {step_from} -> {step_to}")
    x_n = np.asarray(x_n, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    _same_shape(x_n, x0_hat)
    if step_to == 0:
        return x0_hat.copy()
    v_from = float(s.sigma_sq[step_from])
    v_to = float(s.sigma_sq[step_to])
    r = v_to / v_from
    mean = (1.0 - r) * x0_hat + r * x_n
    if not stochastic:
        return mean
    var = v_to * (v_from - v_to) / v_from
    return mean + np.sqrt(var) * _noise(rng, x_n.shape)


def _noise(rng, shape) -> np.ndarray:
    # a sequence of generators supplies one independent stream per batch element
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    if len(rng) != shape[0]:
        raise ValueError(f"{len(rng)} generators for a batch of {shape[0]}")
    return np.stack([g.standard_normal(shape[1:]) for g in rng])


def generate(p: Predictor, x1, label, cfg: SampleConfig, s: Schedule,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Run the reverse chain from the image ``x1`` down to a mask estimate.

    ``x1`` may carry a leading batch axis, in which case ``label`` must be
    accepted by the predictor for that batch, and ``rng`` may be a sequence
    of generators, one per batch element. Without an explicit ``rng`` the
    noise stream is derived from ``cfg.seed``.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    if not np.all(np.isfinite(x1)):
        raise GenerationError("input image contains non-finite values")
    if cfg.nfe > s.n_steps:
        raise ValueError(f"nfe={cfg.nfe} exceeds schedule length {s.n_steps}")
    if rng is None:
        rng = rngmod.stream(cfg.seed, rngmod.SAMPLE)
    bind = getattr(p, "bind", None)
    if bind is not None:
        p = bind(x1)
    ladder = step_ladder(s.n_steps, cfg.nfe)
    x = x1
    for step_from, step_to in zip(ladder[:-1], ladder[1:]):
        step_from, step_to = int(step_from), int(step_to)
        try:
            eps = guided_eps(p, x, label, step_from, cfg.omega)
        except Exception as exc:
            raise GenerationError(f"predictor failed at step {step_from}: {exc}") from exc
        x0_hat = predict_x0(x, eps, step_from, s)
        x = reverse_step(x, x0_hat, step_from, step_to, s, cfg.stochastic, rng)
        if not np.all(np.isfinite(x)):
            raise GenerationError(f"non-finite values after step {step_from} -> {step_to}")
    return x
