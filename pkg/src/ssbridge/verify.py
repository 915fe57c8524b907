"""Built-in oracle suite behind ``ssbridge verify``.

Each check returns a :class:`Check`; ``run_all`` collects them. The
``corrupt-schedule`` fault scales the noise increments by 1.3 without
touching the expected values, so the moment check must fail.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import metrics
from . import rng as rngmod
from .bridge import SampleConfig, generate, guided_eps, reverse_step, sample_xt
from .loss import LossConfig, bridge_loss
from .predictor.oracles import DiracOracle, GaussianOracle
from .predictor.unet import TinyUNet, UNetConfig, UNetPredictor
from .schedule import Schedule, _from_beta, make_schedule

FAULTS = ("corrupt-schedule",)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def unit_schedule(fault: str | None = None, n_steps: int = 50) -> Schedule:
    s = make_schedule(n_steps, total_variance=1.0)
    if fault == "corrupt-schedule":
        s = _from_beta(s.beta * 1.3, dict(s.origin))
    return s


def check_moments(s: Schedule, n: int = 100_000) -> Check:
    gen = rngmod.stream(0, 9, 1)
    draws = sample_xt(np.zeros(n), np.ones(n), s.n_steps // 2, s, gen)
    m, v = draws.mean(), draws.var()
    ok = bool(abs(m - 0.5) <= 0.005 and abs(v / 0.25 - 1.0) <= 0.05)
    return Check("bridge moments", ok, f"mean {m:.5f} (0.5), var {v:.5f} (0.25)")


def check_marginals(s: Schedule, n: int = 100_000) -> Check:
    gen = rngmod.stream(0, 9, 2)
    x0, x1 = 0.0, 1.0
    x = np.full(n, x1)
    total = s.sigma_sq[-1]
    worst = 0.0
    for step in range(s.n_steps, 0, -1):
        x = reverse_step(x, np.full(n, x0), step, step - 1, s, True, gen)
        var = s.sigma_sq[step - 1] * s.sigma_bar_sq[step - 1] / total
        mean = (s.sigma_bar_sq[step - 1] * x0 + s.sigma_sq[step - 1] * x1) / total
        if var > 0:
            worst = max(worst, abs(x.mean() - mean) / np.sqrt(var / n),
                        abs(x.var() - var) / (var * np.sqrt(2.0 / n)))
    return Check("marginal consistency", bool(worst <= 5.0), f"worst deviation {worst:.2f} SE (<= 5)")


def check_dirac(s: Schedule, trials: int = 100) -> Check:
    gen = rngmod.stream(0, 9, 3)
    worst = 0.0
    for t in range(trials):
        a, x1 = gen.random((4, 4)), gen.random((4, 4))
        for nfe in (5, 50):
            out = generate(DiracOracle(a, s), x1, 1, SampleConfig(nfe=nfe, seed=t), s)
            worst = max(worst, float(np.abs(out - a).max()))
    return Check("dirac oracle", worst <= 1e-9, f"max abs error {worst:.2e} (<= 1e-9)")


def check_gaussian(n: int = 10_000) -> Check:
    s = make_schedule(1000, total_variance=1.0)
    mu, tau2 = 0.3, 0.2
    p = GaussianOracle(np.array([[mu]]), tau2, s)
    x1 = np.full((n, 1, 1), 0.8)
    out = generate(p, x1, 1, SampleConfig(nfe=1000, seed=4), s).ravel()
    z_mean = (out.mean() - mu) / np.sqrt(tau2 / n)
    z_var = (out.var() - tau2) / (tau2 * np.sqrt(2.0 / (n - 1)))
    ok = bool(abs(z_mean) <= 3 and abs(z_var) <= 3)
    return Check("gaussian oracle", ok, f"mean {z_mean:+.2f} SE, var {z_var:+.2f} SE (<= 3)")


def check_cfg_identity() -> Check:
    net = TinyUNet.init(UNetConfig(grid_size=8, channels=(8, 16), eta=2), 0)
    p = UNetPredictor(net)
    gen = rngmod.stream(0, 9, 5)
    same = all(
        np.array_equal(guided_eps(p, x, 1, 7, 0.0), p.predict(x, 1, 7))
        for x in gen.random((20, 8, 8))
    )
    return Check("cfg identity", same, "omega=0 bitwise equals conditional")


def gradient_check(n_sampled: int = 200, seed: int = 0):
    """Max relative error of the analytic loss gradient against central differences."""
    gen = rngmod.stream(seed, 9, 6)
    cfg = UNetConfig(grid_size=8, channels=(8, 16), eta=2)
    net = TinyUNet.init(cfg, seed).copy(np.float64)
    net.params += gen.normal(0.0, 0.02, net.n_params)
    s = make_schedule(20)
    b = 2
    x0 = (gen.random((b, 8, 8)) < 0.5).astype(np.float64)
    x1 = gen.random((b, 8, 8))
    steps = np.array([4, 15])
    labels = np.array([1, 0])
    x_t = np.stack([sample_xt(x0[i], x1[i], steps[i], s, gen) for i in range(b)])
    sig = np.sqrt(s.sigma_sq[steps])
    lcfg = LossConfig()

    def loss():
        eps, _ = net.forward(x_t, labels, steps, np.float64)
        x0_pred = x_t - sig[:, None, None] * eps
        return bridge_loss(eps, x_t, x0, sig, lcfg).value, np.sign(x0_pred) + np.sign(x0_pred - 1.0)

    eps, tape = net.forward(x_t, labels, steps, np.float64)
    grad = net.backward(tape, bridge_loss(eps, x_t, x0, sig, lcfg).d_eps)
    _, side0 = loss()
    h = 1e-5
    pairs = []
    for i in gen.permutation(net.n_params):
        old = net.params[i]
        net.params[i] = old + h
        fp, sp = loss()
        net.params[i] = old - h
        fm, sm = loss()
        net.params[i] = old
        # steps that push a pixel across the [0, 1] clamp do not measure a derivative
        if np.array_equal(sp, side0) and np.array_equal(sm, side0):
            pairs.append((grad[i], (fp - fm) / (2 * h)))
            if len(pairs) == n_sampled:
                break
    a, num = np.array(pairs).T
    # some parameters have an exactly zero gradient; judge them on the gradient scale
    floor = 1e-4 * max(1.0, float(np.abs(grad).max()))
    rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
    return float(rel.max()), len(pairs)


def check_gradient(n_sampled: int = 200) -> Check:
    err, n = gradient_check(n_sampled)
    return Check("gradient check", err <= 1e-4, f"max relative error {err:.2e} over {n} params (<= 1e-4)")


def check_metric_fixtures() -> Check:
    a = np.array([[1, 1], [0, 0]])
    b = np.array([[1, 0], [1, 0]])
    empty, full = np.zeros((2, 2), int), np.ones((2, 2), int)
    top, bottom = a, 1 - a
    cases = [
        ("dice", metrics.dice(a, b), 0.5),
        ("ged disjoint", metrics.ged([top], [bottom]), 2.0),
        ("ged equal", metrics.ged([a, b], [a, b]), metrics.ged([b, a], [a, b])),
        ("d_max", metrics.d_max([top, np.array([[0, 0], [0, 1]])], [top, np.array([[0, 0], [1, 0]])]), 0.5),
        ("ci", metrics.ci_score([full], [full, empty]), 1.0),
        ("js", metrics.js_divergence([0.5, 0.5], [1.0, 0.0]), 0.31127812445913283),
        ("ddi extremal", metrics.ddi(np.eye(2))[0], 6.0),
    ]
    bad = [name for name, got, want in cases if abs(got - want) > 1e-9]
    return Check("metric fixtures", not bad, "all match" if not bad else "mismatch: " + ", ".join(bad))


def run_all(fault: str | None = None, progress: Callable[[Check], None] | None = None) -> list[Check]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    s = unit_schedule(fault)
    plan = [
        lambda: check_moments(s),
        lambda: check_marginals(s),
        lambda: check_dirac(s),
        check_gaussian,
        check_cfg_identity,
        check_gradient,
        check_metric_fixtures,
    ]
    out = []
    for fn in plan:
        t0 = time.perf_counter()
        c = fn()
        c.seconds = time.perf_counter() - t0
        out.append(c)
        if progress is not None:
            progress(c)
    return out
