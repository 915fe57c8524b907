"""Segmentation-diversity metrics over sets of binary masks.

Mask sets are sequences (or stacked arrays) of equally shaped binary grids.
Dice and IoU of two empty masks are 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _binary(m, name="mask") -> np.ndarray:
    a = np.asarray(m)
    if a.dtype == bool:
        return a
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} is not binary")
    return a.astype(bool)


def _mask_set(masks, name) -> np.ndarray:
    arr = np.stack([_binary(m, name) for m in masks]) if not isinstance(masks, np.ndarray) \
        else _binary(masks, name)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty set of 2-D masks")
    return arr


def _pair(a, b):
    a, b = _binary(a, "a"), _binary(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    return 1.0 if total == 0 else 2.0 * int((a & b).sum()) / total


def iou(a, b) -> float:
    a, b = _pair(a, b)
    union = int((a | b).sum())
    return 1.0 if union == 0 else int((a & b).sum()) / union


def _pairwise(x: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    """All-pairs Dice or IoU between mask stacks, shape (len(x), len(y))."""
    xf = x.reshape(len(x), -1).astype(np.int64)
    yf = y.reshape(len(y), -1).astype(np.int64)
    inter = xf @ yf.T
    sx, sy = xf.sum(1)[:, None], yf.sum(1)[None, :]
    if kind == "dice":
        num, den = 2 * inter, sx + sy
    else:
        num, den = inter, sx + sy - inter
    out = np.ones(inter.shape, dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def _sets(generated, experts):
    g = _mask_set(generated, "generated")
    e = _mask_set(experts, "experts")
    if g.shape[1:] != e.shape[1:]:
        raise ValueError(f"shape mismatch: {g.shape[1:]} vs {e.shape[1:]}")
    return g, e


def dice_matrix(experts, generated) -> np.ndarray:
    """M x N matrix of Dice(expert_i, generated_j)."""
    g, e = _sets(generated, experts)
    return _pairwise(e, g, "dice")


def ged(generated, experts) -> float:
    """Squared generalized energy distance under d = 1 - IoU, clamped at 0."""
    g, e = _sets(generated, experts)
    cross = np.mean(1.0 - _pairwise(g, e, "iou"))
    self_g = np.mean(1.0 - _pairwise(g, g, "iou"))
    self_e = np.mean(1.0 - _pairwise(e, e, "iou"))
    return max(0.0, float(2.0 * cross - self_g - self_e))


def d_max(generated, experts) -> float:
    g, e = _sets(generated, experts)
    return float(np.mean(_pairwise(e, g, "dice").max(axis=1)))


def combine(masks) -> np.ndarray:
    """Pixelwise majority with ties going to foreground (mean >= 0.5)."""
    return np.mean(masks, axis=0) >= 0.5


def ci_score(generated, experts) -> float:
    g, e = _sets(generated, experts)
    return dice(combine(g), combine(e))


def set_diversity(masks) -> float:
    """Mean pairwise (1 - IoU) over distinct pairs."""
    m = _mask_set(masks, "masks")
    n = len(m)
    d = 1.0 - _pairwise(m, m, "iou")
    return float(d[np.triu_indices(n, 1)].mean())


def diversity_agreement(generated, experts) -> float | None:
    """1 - |D_gen - D_exp| / max(D_gen, D_exp); ``None`` when either set is a singleton."""
    g, e = _sets(generated, experts)
    if len(g) < 2 or len(e) < 2:
        return None
    dg, de = set_diversity(g), set_diversity(e)
    return 1.0 - abs(dg - de) / max(dg, de, 1e-12)


def js_divergence(p, q) -> float:
    """Base-2 Jensen-Shannon divergence of two probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("p and q must be 1-D vectors of equal length")
    for v in (p, q):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("arguments must be probability vectors")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    sums = mat.sum(axis=1, keepdims=True)
    uniform = np.full_like(mat, 1.0 / mat.shape[1])
    return np.where(sums > 0, mat / np.where(sums > 0, sums, 1.0), uniform)


def _ddi_rows(rows: np.ndarray) -> float:
    k = len(rows)
    total = sum(js_divergence(rows[i], rows[j])
                for i in range(k) for j in range(k) if i != j)
    return 3.0 * total / math.comb(k, 2)


def ddi(dm) -> tuple[float | None, float | None]:
    """Diversity Divergence Index over expert rows and generated columns.

    Rows/columns of the Dice matrix are L1-normalized (uniform if all zero);
    each index is 3 / C(k, 2) times the JS divergence summed over ordered
    pairs i != j. A component is ``None`` when fewer than two rows/columns
    exist.
    """
    dm = np.asarray(dm, dtype=np.float64)
    if dm.ndim != 2:
        raise ValueError("Dice matrix must be 2-D")
    m, n = dm.shape
    ddi_exp = _ddi_rows(_normalize_rows(dm)) if m >= 2 else None
    ddi_gen = _ddi_rows(_normalize_rows(dm.T)) if n >= 2 else None
    return ddi_exp, ddi_gen


@dataclass
class MetricsReport:
    ged: float
    d_max: float
    ci: float
    d_a: float | None
    ddi_exp: float | None
    ddi_gen: float | None

    FIELDS = ("ged", "d_max", "ci", "d_a", "ddi_exp", "ddi_gen")


def evaluate(generated, experts) -> MetricsReport:
    g, e = _sets(generated, experts)
    ddi_exp, ddi_gen = ddi(_pairwise(e, g, "dice"))
    return MetricsReport(ged=ged(g, e), d_max=d_max(g, e), ci=ci_score(g, e),
                         d_a=diversity_agreement(g, e), ddi_exp=ddi_exp, ddi_gen=ddi_gen)
