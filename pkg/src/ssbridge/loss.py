"""Score-matching loss with a soft-Dice penalty on the predicted mask."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.5
    dice_smooth: float = 1.0
    label_drop_prob: float = 0.1
    # "x0": Dice on the predicted mask; "eps": Dice on the raw noise estimate
    dice_on: str = "x0"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.dice_smooth > 0:
            raise ValueError("dice_smooth must be > 0")
        if not 0 <= self.label_drop_prob < 1:
            raise ValueError("label_drop_prob must lie in [0, 1)")
        if self.dice_on not in ("x0", "eps"):
            raise ValueError(f"dice_on must be 'x0' or 'eps', got {self.dice_on!r}")


@dataclass
class LossValue:
    """Loss and its gradients.

    ``d_eps`` is the partial derivative w.r.t. ``eps_pred`` through the MSE
    term only; ``d_x0`` is the derivative w.r.t. the *unclamped* ``x0_pred``.
    Shapes follow the inputs.
    """
    value: float
    mse: float
    dice: float
    d_eps: np.ndarray = field(repr=False)
    d_x0: np.ndarray = field(repr=False)


def _check(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch: {shape} vs {a.shape}")


def soft_dice(pred, truth, smooth: float = 1.0) -> float:
    pred = np.clip(np.asarray(pred, dtype=np.float64), 0.0, 1.0)
    truth = np.asarray(truth, dtype=np.float64)
    _check(pred, truth)
    inter = float(np.sum(pred * truth))
    return (2.0 * inter + smooth) / (float(pred.sum()) + float(truth.sum()) + smooth)


def _soft_dice_batch(pred, truth, smooth):
    """Per-sample soft Dice over the trailing two axes plus d(dice)/d(pred)."""
    axes = (-2, -1)
    inter = np.sum(pred * truth, axis=axes, keepdims=True)
    denom = np.sum(pred, axis=axes, keepdims=True) + np.sum(truth, axis=axes, keepdims=True) + smooth
    num = 2.0 * inter + smooth
    dice = num / denom
    grad = (2.0 * truth * denom - num) / denom ** 2
    return dice[..., 0, 0], grad


def ssb_loss(eps_pred, eps_target, x0_pred, x0_true, cfg: LossConfig) -> LossValue:
    """MSE(eps_pred, eps_target) + gamma * (1 - softDice(clamp(x0_pred), x0_true)).

    Inputs are single grids or batches with a leading axis; batch losses are
    averaged over samples. The gradient through the clamp is zero outside
    (0, 1).
    """
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    eps_target = np.asarray(eps_target, dtype=np.float64)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    x0_true = np.asarray(x0_true, dtype=np.float64)
    _check(eps_pred, eps_target, x0_pred, x0_true)

    diff = eps_pred - eps_target
    n = diff.size
    mse = float(np.sum(diff * diff)) / n
    d_eps = 2.0 * diff / n

    n_samples = 1 if x0_pred.ndim <= 2 else int(np.prod(x0_pred.shape[:-2]))
    clamped = np.clip(x0_pred, 0.0, 1.0)
    dice, d_dice = _soft_dice_batch(clamped, x0_true, cfg.dice_smooth)
    inside = (x0_pred > 0.0) & (x0_pred < 1.0)
    d_x0 = np.where(inside, -cfg.gamma * d_dice / n_samples, 0.0)
    mean_dice = float(np.mean(dice))
    value = mse + cfg.gamma * (1.0 - mean_dice)
    return LossValue(value=value, mse=mse, dice=mean_dice, d_eps=d_eps, d_x0=d_x0)


def bridge_loss(eps_pred, x_t, x0_true, sigma, cfg: LossConfig) -> LossValue:
    """Full training loss for one batch, with the gradient chained to ``eps_pred``.

    ``sigma`` is the per-sample noise scale (scalar or shape ``(B,)``). The
    returned ``d_eps`` is the total derivative w.r.t. ``eps_pred``.
    """
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    sig = np.asarray(sigma, dtype=np.float64)
    sig = sig.reshape(sig.shape + (1, 1)) if sig.ndim else sig
    target = (x_t - x0_true) / sig
    if cfg.dice_on == "x0":
        x0_pred = x_t - sig * eps_pred
        lv = ssb_loss(eps_pred, target, x0_pred, x0_true, cfg)
        lv.d_eps = lv.d_eps - sig * lv.d_x0
    else:
        lv = ssb_loss(eps_pred, target, eps_pred, x0_true, cfg)
        lv.d_eps = lv.d_eps + lv.d_x0
    return lv
