"""Training loop: bridge-sampled regression with label dropout and Adam."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import rng as rngmod
from ..loss import LossConfig, bridge_loss
from ..schedule import Schedule
from .optim import Adam
from .unet import TinyUNet, UNetConfig

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eta: int = 4
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.steps < 0 or self.batch < 1 or self.eta < 1:
            raise ValueError("steps >= 0, batch >= 1 and eta >= 1 required")
        if not self.lr > 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("invalid optimizer settings")

    def to_dict(self) -> dict:
        return asdict(self)


def _stack(records, eta):
    images = np.stack([r.image for r in records]).astype(np.float64)
    masks = np.stack([r.expert_masks for r in records]).astype(np.float64)
    if masks.shape[1] < eta:
        raise ValueError(f"records carry {masks.shape[1]} expert masks but eta={eta}")
    return images, masks


def train(records, cfg: TrainConfig, s: Schedule, arch: UNetConfig | None = None,
          net: TinyUNet | None = None, log_every: int = 0):
    """Train a TinyUNet on ``records``; returns ``(net, loss_trace)``.

    Each batch element draws a record, a step in 1..n_steps and an expert in
    1..eta, samples X_t from the bridge between that expert's mask and the
    image, and drops the label with probability ``label_drop_prob``.
    """
    if not records:
        raise ValueError("cannot train on an empty dataset")
    if arch is None:
        arch = UNetConfig(grid_size=records[0].image.shape[0], eta=cfg.eta)
    if arch.eta != cfg.eta:
        raise ValueError(f"architecture eta={arch.eta} != training eta={cfg.eta}")
    if net is None:
        net = TinyUNet.init(arch, cfg.seed)
    images, masks = _stack(records, cfg.eta)
    gen = rngmod.stream(cfg.seed, rngmod.TRAIN)
    opt = Adam(net.n_params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)

    w0 = s.sigma_bar_sq / (s.sigma_sq + s.sigma_bar_sq)
    w1 = s.sigma_sq / (s.sigma_sq + s.sigma_bar_sq)
    std = np.sqrt(s.sigma_sq * s.sigma_bar_sq / (s.sigma_sq + s.sigma_bar_sq))
    sigma = np.sqrt(s.sigma_sq)

    trace = []
    t0 = time.perf_counter()
    b = cfg.batch
    for it in range(cfg.steps):
        idx = gen.integers(0, len(records), b)
        steps = gen.integers(1, s.n_steps + 1, b)
        labels = gen.integers(1, cfg.eta + 1, b)
        z = gen.standard_normal((b,) + images.shape[1:])
        dropped = gen.random(b) < cfg.loss.label_drop_prob

        x0 = masks[idx, labels - 1]
        x1 = images[idx]
        col = (slice(None), None, None)
        x_t = w0[steps][col] * x0 + w1[steps][col] * x1 + std[steps][col] * z
        net_labels = np.where(dropped, 0, labels)

        eps_pred, tape = net.forward(x_t, net_labels, steps)
        lv = bridge_loss(eps_pred, x_t, x0, sigma[steps], cfg.loss)
        if not np.isfinite(lv.value):
            raise TrainingError(it, f"non-finite loss {lv.value}")
        grad = net.backward(tape, lv.d_eps.astype(np.float32))
        opt.step(net.params, grad)
        trace.append(lv.value)
        if log_every and (it + 1) % log_every == 0:
            window = np.mean(trace[-log_every:])
            log.info("iter %d  loss %.4f  (%.1fs)", it + 1, window, time.perf_counter() - t0)
    return net, np.asarray(trace)
