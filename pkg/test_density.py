# test_density.py
import math

import numpy as np
import pandas as pd
import pytest
import torch
from scipy import integrate, stats

from density.fitting import (TOY_DISTRIBUTIONS, fit_density, monte_carlo_entropy, sample_toy, toy_density,
                             write_fit_csv)
from density.noisy import NoisyDensity, ScaleField, noisy_log_likelihood, noisy_pmf
from density.nonparametric import NonParametricDensity, cumulative, log_density
from utils import config
from utils.errors import ConfigurationError


def logistic_model(h=1.0, b=0.0):
    """K=1 model: c(x) = sigmoid(h x + b)."""
    model = NonParametricDensity(channels=1, filters=(), init_scale=1.0 / h).double()
    model.matrices[0].assign(torch.full((1, 1, 1), h, dtype=torch.float64))
    model.biases[0].assign(torch.full((1, 1, 1), b, dtype=torch.float64))
    return model


def randomized_model(channels=1, seed=0):
    model = NonParametricDensity(channels=channels, filters=(3, 3, 3), init_scale=4.0)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in model.parameters():
            param.add_(0.5 * torch.randn(param.shape, generator=generator))
    return model.double()


# ---------------------------------------------------------------------------
# non-parametric cumulative and density
# ---------------------------------------------------------------------------

def test_logistic_stage_at_origin():
    model = logistic_model()
    assert cumulative(model, 0.0) == pytest.approx(0.5, abs=1e-7)
    assert math.exp(log_density(model, 0.0)) == pytest.approx(0.25, abs=1e-7)
    assert log_density(model, 0.0) == pytest.approx(math.log(0.25), abs=1e-6)


def test_cumulative_saturates():
    model = randomized_model()
    assert cumulative(model, -1e6) < 1e-9
    assert cumulative(model, 1e6) > 1 - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_cumulative_is_monotone_for_random_parameters(seed):
    model = randomized_model(channels=2, seed=seed)
    rng = np.random.default_rng(seed)
    pairs = np.sort(rng.uniform(-60, 60, size=(2, 500, 2)), axis=-1)
    with torch.no_grad():
        lower = model.cumulative(torch.as_tensor(pairs[..., 0]))
        upper = model.cumulative(torch.as_tensor(pairs[..., 1]))
    assert bool((upper >= lower).all())


def test_density_integrates_to_cumulative_difference():
    model = randomized_model(seed=3)
    grid = np.linspace(-50, 50, 200_001)
    with torch.no_grad():
        p = model.density(torch.as_tensor(grid).reshape(1, -1)).reshape(-1).numpy()
    area = integrate.trapezoid(p, grid)
    assert area == pytest.approx(cumulative(model, 50.0) - cumulative(model, -50.0), abs=1e-4)


def test_density_is_normalized():
    model = randomized_model(seed=1)
    total, _ = integrate.quad(lambda t: math.exp(log_density(model, t)), -np.inf, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_density_matches_derivative_of_cumulative():
    model = randomized_model(seed=2)
    x = torch.as_tensor(np.random.default_rng(0).uniform(-20, 20, size=(1, 100)), dtype=torch.float64)
    h = 1e-5
    with torch.no_grad():
        numeric = (model.cumulative(x + h) - model.cumulative(x - h)) / (2 * h)
        analytic = model.density(x)
    assert torch.allclose(analytic, numeric, atol=1e-5)

    x.requires_grad_(True)
    autograd = torch.autograd.grad(model.cumulative(x).sum(), x)[0]
    assert torch.allclose(model.density(x).detach(), autograd, atol=1e-10)


def test_single_stage_is_logistic():
    h, b = 0.7, 0.4
    model = logistic_model(h, b)
    x = np.linspace(-30, 30, 301)
    with torch.no_grad():
        p = model.density(torch.as_tensor(x).reshape(1, -1)).reshape(-1).numpy()
    expected = h / 2 / (1 + np.cosh(h * x + b))
    np.testing.assert_allclose(p, expected, rtol=0, atol=1e-10)
    np.testing.assert_allclose(p, stats.logistic(loc=-b / h, scale=1 / h).pdf(x), atol=1e-10)


def test_median_of_logistic_stage():
    model = logistic_model(h=0.5, b=0.3)
    assert model.median()[0] == pytest.approx(-0.6, abs=1e-4)


def test_channel_count_is_checked():
    model = NonParametricDensity(channels=3)
    with pytest.raises(ValueError):
        model.cumulative(torch.zeros(2, 5))


def test_constrained_parameters_stay_valid_after_arbitrary_updates():
    model = randomized_model(seed=4)
    with torch.no_grad():
        for param in model.parameters():
            param.fill_(-5.0)
    for matrix in model.matrices:
        assert bool((matrix.value >= 0).all())
    for factor in model.factors:
        assert bool((factor.value > -1).all())


# ---------------------------------------------------------------------------
# noisy densities
# ---------------------------------------------------------------------------

def test_gaussian_pmf_at_zero():
    density = NoisyDensity.gaussian(1.0)
    assert noisy_pmf(density, 0) == pytest.approx(0.382925, abs=1e-6)
    assert float(noisy_log_likelihood(density, 0.0)) == pytest.approx(math.log(0.382925), abs=1e-5)


@pytest.mark.parametrize("n", [-7, -2, 0, 1, 5])
@pytest.mark.parametrize("sigma", [0.3, 1.0, 4.0])
def test_gaussian_pmf_matches_numeric_integration(n, sigma):
    density = NoisyDensity.gaussian(sigma)
    expected, _ = integrate.quad(stats.norm(scale=sigma).pdf, n - 0.5, n + 0.5, epsabs=1e-13)
    assert noisy_pmf(density, n) == pytest.approx(expected, abs=1e-8)


def test_gaussian_pmf_sums_to_one():
    density = NoisyDensity.gaussian(3.0)
    total = float(noisy_pmf(density, torch.arange(-30, 31)).sum())
    # floored tail terms contribute a few 1e-9
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("sigma", np.geomspace(config.SIGMA_MIN, 1e3, 8).tolist())
def test_gaussian_pmf_normalized_across_scales(sigma):
    radius = int(6 * sigma) + 2
    density = NoisyDensity.gaussian(sigma)
    total = float(noisy_pmf(density, torch.arange(-radius, radius + 1)).sum())
    assert total == pytest.approx(1.0, abs=1e-6)


def test_collapsed_gaussian_concentrates_on_zero():
    assert noisy_pmf(NoisyDensity.gaussian(config.SIGMA_MIN), 0) >= 0.999


def test_nonparametric_pmf_sums_to_one_per_channel():
    model = randomized_model(channels=3, seed=5)
    density = NoisyDensity.nonparametric(model)
    support = torch.arange(-400, 401, dtype=torch.float64).expand(3, -1)
    totals = noisy_pmf(density, support).sum(dim=1)
    assert torch.allclose(totals, torch.ones(3, dtype=torch.float64), atol=1e-6)


def test_nonparametric_likelihood_is_cumulative_difference():
    model = randomized_model(seed=6)
    v = torch.linspace(-5, 5, 41, dtype=torch.float64).reshape(1, -1)
    with torch.no_grad():
        expected = model.cumulative(v + 0.5) - model.cumulative(v - 0.5)
        actual = NoisyDensity.nonparametric(model).likelihood(v)
    assert torch.allclose(actual, expected, atol=1e-12)


def test_nonparametric_channel_axis():
    model = randomized_model(channels=2, seed=7)
    values = torch.randn(4, 2, 3, 3, dtype=torch.float64)
    with torch.no_grad():
        batched = NoisyDensity.nonparametric(model, channel_axis=1).likelihood(values)
        direct = NoisyDensity.nonparametric(model).likelihood(values.movedim(1, 0)).movedim(0, 1)
    assert batched.shape == values.shape
    assert torch.allclose(batched, direct)


def test_constant_base_gives_point_mass():
    model = logistic_model(h=1e4, b=0.0)
    assert noisy_pmf(NoisyDensity.nonparametric(model), 0) == pytest.approx(1.0, abs=1e-6)


def test_tail_likelihood_is_floored():
    density = NoisyDensity.gaussian(1.0)
    log_l = noisy_log_likelihood(density, 20.0)
    assert torch.isfinite(log_l)
    assert float(log_l) == pytest.approx(math.log(config.LIKELIHOOD_FLOOR))


def test_gaussian_likelihood_is_symmetric():
    density = NoisyDensity.gaussian(torch.tensor([0.5, 2.0, 7.0], dtype=torch.float64))
    v = torch.tensor([1.3, -0.2, 4.0], dtype=torch.float64)
    assert torch.allclose(density.likelihood(v), density.likelihood(-v))


def test_gaussian_log_likelihood_gradient_in_sigma():
    sigma = torch.tensor([1.7], dtype=torch.float64, requires_grad=True)
    value = torch.tensor([0.8], dtype=torch.float64)
    NoisyDensity.gaussian(sigma).log_likelihood(value).sum().backward()
    h = 1e-6
    with torch.no_grad():
        plus = NoisyDensity.gaussian(sigma + h).log_likelihood(value)
        minus = NoisyDensity.gaussian(sigma - h).log_likelihood(value)
    numeric = float((plus - minus) / (2 * h))
    assert float(sigma.grad) == pytest.approx(numeric, rel=1e-4)


def test_nonparametric_log_likelihood_gradcheck():
    model = randomized_model(seed=8)
    values = torch.linspace(-3, 3, 7, dtype=torch.float64).reshape(1, -1).requires_grad_()
    density = NoisyDensity.nonparametric(model)
    assert torch.autograd.gradcheck(lambda v: density.log_likelihood(v), (values,), eps=1e-6, atol=1e-6)


def test_pmf_rejects_non_integers():
    with pytest.raises(ValueError):
        NoisyDensity.gaussian(1.0).pmf(0.5)


def test_noisy_density_needs_exactly_one_base():
    with pytest.raises(ValueError):
        NoisyDensity()
    with pytest.raises(ValueError):
        NoisyDensity(base=NonParametricDensity(), scales=1.0)
    with pytest.raises(ValueError):
        NoisyDensity.gaussian(0.0)


def test_scale_field_lower_bound():
    field = ScaleField.from_log_scales(torch.tensor([-10.0, 0.0, 2.0]))
    assert torch.allclose(field.scales, torch.tensor([config.SIGMA_MIN, 1.0, math.exp(2.0)]))
    assert field.shape == (3,)
    with pytest.raises(ValueError):
        ScaleField(torch.tensor([1e-3]), sigma_min=1e-2)


# ---------------------------------------------------------------------------
# toy distributions and fitting
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", TOY_DISTRIBUTIONS)
def test_sample_toy_shapes(name, rng):
    samples = sample_toy(name, 500, rng)
    assert samples.shape == (500,)
    assert np.isfinite(samples).all()


def test_toy_helpers_reject_unknown_names(rng):
    with pytest.raises(ConfigurationError):
        sample_toy("cauchy", 10, rng)
    with pytest.raises(ConfigurationError):
        toy_density("cauchy")
    assert toy_density("constant") is None
    with pytest.raises(ConfigurationError):
        monte_carlo_entropy("constant")


def test_monte_carlo_entropy_of_gaussian():
    assert monte_carlo_entropy("gaussian", count=200_000) == pytest.approx(0.5 * math.log(2 * math.pi * math.e),
                                                                           abs=0.01)


def test_mixture_density_is_normalized():
    total, _ = integrate.quad(toy_density("mixture"), -np.inf, np.inf)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_quick_fit_reduces_nll_and_traces(rng):
    samples = sample_toy("gaussian", 2000, rng)
    result = fit_density(samples, steps=30, trace_every=10, true_density=toy_density("gaussian"))
    assert list(result.trace.columns) == ["x", "true_density", "step_0", "step_10", "step_20", "step_30"]
    assert len(result.nll_history) == 30
    assert result.nll_history[-1] < result.nll_history[0]
    assert np.isfinite(result.final_nll)
    assert result.fitted_density(np.array([0.0])).shape == (1,)


def test_fit_needs_enough_samples(rng):
    with pytest.raises(ConfigurationError):
        fit_density(rng.standard_normal(999), steps=1)


def test_fit_rejects_non_finite_samples(rng):
    samples = rng.standard_normal(2000)
    samples[10] = np.nan
    with pytest.raises(ConfigurationError):
        fit_density(samples, steps=1)


def test_fit_rejects_multichannel_model(rng):
    with pytest.raises(ConfigurationError):
        fit_density(rng.standard_normal(2000), model=NonParametricDensity(channels=2), steps=1)


def test_write_fit_csv(tmp_path, rng):
    result = fit_density(sample_toy("constant", 1000, rng), steps=5, trace_every=5)
    path = tmp_path / "fit.csv"
    write_fit_csv(result, str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["x", "step_0", "step_5"]
    assert len(frame) == len(result.trace)


@pytest.mark.slow
def test_noisy_fit_to_uniform_reaches_zero_entropy(rng):
    result = fit_density(sample_toy("uniform", 20_000, rng), noisy=True, trace_every=0)
    assert result.final_nll <= 0.02


@pytest.mark.slow
def test_plain_fit_to_mixture_approaches_entropy(rng):
    result = fit_density(sample_toy("mixture", 20_000, rng), noisy=False, trace_every=0)
    assert abs(result.final_nll - monte_carlo_entropy("mixture")) <= 0.05


@pytest.mark.slow
def test_plain_fit_to_gaussian_approaches_entropy(rng):
    result = fit_density(sample_toy("gaussian", 20_000, rng), noisy=False, trace_every=0)
    assert abs(result.final_nll - 0.5 * math.log(2 * math.pi * math.e)) <= 0.05


@pytest.mark.slow
def test_noisy_fit_to_constant_puts_all_mass_on_it(rng):
    result = fit_density(sample_toy("constant", 5000, rng), noisy=True, trace_every=0)
    assert result.final_nll <= 1e-3
    assert noisy_pmf(NoisyDensity.nonparametric(result.model), 0) >= 0.999
