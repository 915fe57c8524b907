import numpy as np
import pytest

from ssbridge import rng as rngmod
from ssbridge.bridge import (GenerationError, SampleConfig, generate, guided_eps, predict_x0,
                             reverse_step, sample_xt, training_target)
from ssbridge.predictor.oracles import DiracOracle
from ssbridge.schedule import make_schedule


class Const:
    """Predictor returning fixed grids for labelled / unlabelled calls."""

    def __init__(self, cond, uncond):
        self.cond, self.uncond = cond, uncond

    def predict(self, x_t, label, step):
        return np.full(np.shape(x_t), self.uncond if label is None else self.cond)


def test_sample_xt_endpoints(unit_schedule, rng):
    x0, x1 = rng.random((4, 4)), rng.random((4, 4))
    np.testing.assert_array_equal(sample_xt(x0, x1, 0, unit_schedule, rng), x0)
    np.testing.assert_array_equal(sample_xt(x0, x1, 50, unit_schedule, rng), x1)


def test_sample_xt_shape_mismatch(unit_schedule, rng):
    with pytest.raises(ValueError):
        sample_xt(np.zeros((2, 2)), np.zeros((3, 2)), 10, unit_schedule, rng)


def test_sample_xt_midpoint_moments(unit_schedule, rng):
    draws = sample_xt(np.zeros(100_000), np.ones(100_000), 25, unit_schedule, rng)
    assert abs(draws.mean() - 0.5) < 0.005
    assert abs(draws.var() / 0.25 - 1) < 0.05


def test_training_target_examples(unit_schedule, rng):
    s = unit_schedule
    x0 = rng.random((3, 3))
    np.testing.assert_array_equal(training_target(x0, x0, 7, s), np.zeros((3, 3)))
    z = rng.standard_normal((3, 3))
    np.testing.assert_allclose(training_target(x0 + s.sigma(7) * z, x0, 7, s), z, atol=1e-12)
    with pytest.raises(ValueError):
        training_target(x0, x0, 0, s)


def test_scalar_target_and_inverse():
    # sigma_1 = 0.5 for a two-step schedule with beta_max = 0.5: beta = [0.25, 0.25]
    s = make_schedule(2, beta_max=0.5)
    assert s.sigma(1) == 0.5
    assert training_target(0.7, 0.2, 1, s) == pytest.approx(1.0, abs=1e-15)
    assert predict_x0(0.7, 1.0, 1, s) == pytest.approx(0.2, abs=1e-15)


def test_predict_x0_round_trip(unit_schedule, rng):
    s = unit_schedule
    x0, x1 = rng.random((5, 5)), rng.random((5, 5))
    for n in range(1, s.n_steps + 1):
        xt = sample_xt(x0, x1, n, s, rng)
        np.testing.assert_allclose(predict_x0(xt, training_target(xt, x0, n, s), n, s), x0,
                                   rtol=0, atol=1e-12)
    np.testing.assert_array_equal(predict_x0(x1, np.zeros_like(x1), 10, s), x1)


def test_guided_eps():
    x = np.zeros((2, 2))
    cond = Const(1.0, 0.0)
    np.testing.assert_array_equal(guided_eps(cond, x, 1, 3, 0.0), cond.predict(x, 1, 3))
    np.testing.assert_allclose(guided_eps(cond, x, 1, 3, 0.5), 1.5)
    same = Const(0.3, 0.3)
    for omega in (0.0, 1.0, 7.5):
        np.testing.assert_allclose(guided_eps(same, x, 2, 3, omega), 0.3, rtol=1e-15)
    with pytest.raises(ValueError):
        guided_eps(cond, x, None, 3, 1.0)


def test_reverse_step_examples(unit_schedule, rng):
    s = unit_schedule
    x0h, xn = rng.random((3, 3)), rng.random((3, 3))
    np.testing.assert_array_equal(reverse_step(xn, x0h, 10, 0, s, True, rng), x0h)
    np.testing.assert_allclose(reverse_step(xn, xn, 40, 12, s, False, rng), xn, atol=1e-15)
    with pytest.raises(ValueError):
        reverse_step(xn, x0h, 5, 5, s, True, rng)
    with pytest.raises(ValueError):
        reverse_step(xn, x0h, 5, 7, s, True, rng)


def test_reverse_step_scalar_moments(rng):
    # sigma^2 at step 1 and 2 of a [0.25, 0.25] schedule are 0.25 and 0.5
    s = make_schedule(2, beta_max=0.5)
    assert (s.sigma_sq[2], s.sigma_sq[1]) == (0.5, 0.25)
    assert reverse_step(1.0, 0.0, 2, 1, s, False, rng) == pytest.approx(0.5)
    draws = reverse_step(np.ones(200_000), np.zeros(200_000), 2, 1, s, True, rng)
    se_mean = np.sqrt(0.125 / draws.size)
    assert abs(draws.mean() - 0.5) < 5 * se_mean
    assert abs(draws.var() - 0.125) < 5 * 0.125 * np.sqrt(2 / draws.size)


def test_generate_dirac_oracle_is_exact(unit_schedule, rng):
    a = rng.random((6, 6))
    x1 = rng.random((6, 6))
    out = generate(DiracOracle(a, unit_schedule), x1, 1, SampleConfig(nfe=50, seed=3), unit_schedule)
    np.testing.assert_allclose(out, a, rtol=0, atol=1e-9)


def test_generate_single_step(unit_schedule, rng):
    s = unit_schedule
    x1 = rng.random((4, 4))
    p = Const(0.2, -0.1)
    out = generate(p, x1, 2, SampleConfig(nfe=1, omega=0.7, seed=1), s)
    expected = predict_x0(x1, guided_eps(p, x1, 2, 50, 0.7), 50, s)
    np.testing.assert_array_equal(out, expected)


def test_generate_determinism(unit_schedule, rng):
    s = unit_schedule
    x1 = rng.random((4, 4))
    p = Const(0.4, 0.1)
    cfg = SampleConfig(nfe=20, omega=1.0, seed=99)
    a = generate(p, x1, 1, cfg, s)
    b = generate(p, x1, 1, cfg, s)
    assert a.tobytes() == b.tobytes()
    c = generate(p, x1, 1, SampleConfig(nfe=20, omega=1.0, seed=100), s)
    assert not np.array_equal(a, c)


def test_generate_errors(unit_schedule):
    class Boom:
        def predict(self, x_t, label, step):
            raise RuntimeError("kaput")

    class Blowup:
        def predict(self, x_t, label, step):
            return np.full(np.shape(x_t), np.inf)

    x1 = np.zeros((2, 2))
    with pytest.raises(GenerationError, match="step 50"):
        generate(Boom(), x1, 1, SampleConfig(nfe=5), unit_schedule)
    with pytest.raises(GenerationError, match="after step 50"):
        generate(Blowup(), x1, 1, SampleConfig(nfe=5), unit_schedule)
    with pytest.raises(GenerationError):
        generate(Const(0, 0), np.array([[np.nan]]), 1, SampleConfig(nfe=5), unit_schedule)
    with pytest.raises(ValueError):
        generate(Const(0, 0), x1, 1, SampleConfig(nfe=51), unit_schedule)


def test_marginal_consistency_small(unit_schedule):
    """Chaining bridge steps with the true x0 reproduces the bridge marginals."""
    s = unit_schedule
    n = 20_000
    gen = rngmod.stream(5, 0)
    x0, x1 = 0.2, 1.3
    x = np.full(n, x1)
    for step in range(s.n_steps, 0, -1):
        x = reverse_step(x, np.full(n, x0), step, step - 1, s, True, gen)
        w0 = s.sigma_bar_sq[step - 1] / s.sigma_sq[-1]
        var = s.sigma_sq[step - 1] * s.sigma_bar_sq[step - 1] / s.sigma_sq[-1]
        mean = w0 * x0 + (1 - w0) * x1
        if var > 0:
            assert abs(x.mean() - mean) < 5 * np.sqrt(var / n)
            assert abs(x.var() - var) < 5 * var * np.sqrt(2 / n)
    np.testing.assert_array_equal(x, x0)


def test_per_element_streams(unit_schedule, rng):
    s = unit_schedule
    x, x0 = rng.random((2, 3, 3)), rng.random((2, 3, 3))
    batched = reverse_step(x, x0, 20, 10, s, True, [rngmod.stream(1, 0), rngmod.stream(1, 1)])
    for i in range(2):
        single = reverse_step(x[i], x0[i], 20, 10, s, True, rngmod.stream(1, i))
        np.testing.assert_array_equal(batched[i], single)
    with pytest.raises(ValueError):
        reverse_step(x, x0, 5, 4, s, True, [rngmod.stream(1, 0)])
