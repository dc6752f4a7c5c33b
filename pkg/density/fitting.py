"""
fitting.py - Maximum-likelihood fits of a univariate density to samples

Used by the `fit-density` command to reproduce the density-model
experiments: a plain fit (the model density itself) and a noisy fit (the
model convolved with a unit uniform), with the fitted curve sampled on a
grid at regular steps for external plotting.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from scipy import stats

from density.noisy import NoisyDensity
from density.nonparametric import NonParametricDensity
from utils import config
from utils.console_logger import debug, info, progress_bar, success
from utils.errors import ConfigurationError, TrainingError

TOY_DISTRIBUTIONS = ("uniform", "gaussian", "mixture", "constant")

# Three-component toy mixture
MIXTURE_WEIGHTS = (0.3, 0.5, 0.2)
MIXTURE_MEANS = (-3.0, 0.0, 4.0)
MIXTURE_STDS = (1.0, 0.6, 1.5)


@dataclass
class FitResult:
    model: NonParametricDensity
    final_nll: float
    trace: pd.DataFrame
    nll_history: List[float] = field(default_factory=list)
    noisy: bool = True

    def fitted_density(self, x: np.ndarray) -> np.ndarray:
        return _evaluate(self.model, np.asarray(x, dtype=np.float64), self.noisy)


def _evaluate(model: NonParametricDensity, grid: np.ndarray, noisy: bool) -> np.ndarray:
    with torch.no_grad():
        x = torch.as_tensor(grid, dtype=torch.float64).reshape(1, -1)
        if noisy:
            values = NoisyDensity.nonparametric(model).likelihood(x)
        else:
            values = model.density(x)
    return values.reshape(-1).numpy()


def _negative_log_likelihood(model: NonParametricDensity, samples: torch.Tensor, noisy: bool) -> torch.Tensor:
    if noisy:
        return -NoisyDensity.nonparametric(model).log_likelihood(samples).mean()
    return -model.log_density(samples).mean()


def default_grid(samples: np.ndarray, points: int = 401) -> np.ndarray:
    lo, hi = np.percentile(samples, [0.1, 99.9])
    pad = max(0.5, 0.1 * (hi - lo))
    return np.linspace(lo - pad, hi + pad, points)


def fit_density(samples: Sequence[float], model: Optional[NonParametricDensity] = None,
                steps: Optional[int] = None, noisy: bool = True, lr: Optional[float] = None,
                trace_every: Optional[int] = None, grid: Optional[np.ndarray] = None,
                true_density: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> FitResult:
    """
    Fit `model` to `samples` by minimizing the average negative log-likelihood (nats).

    noisy=True evaluates the model convolved with U(-1/2, 1/2); noisy=False
    evaluates the model density directly. Full-batch Adam.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < config.DENSITY_FIT_MIN_SAMPLES:
        raise ConfigurationError(
            f"need at least {config.DENSITY_FIT_MIN_SAMPLES} samples, got {samples.size}")
    if not np.isfinite(samples).all():
        raise ConfigurationError("samples contain non-finite values")

    model = NonParametricDensity(channels=1) if model is None else model
    if model.channels != 1:
        raise ConfigurationError(f"fit_density fits one channel, model has {model.channels}")
    steps = config.DENSITY_FIT_STEPS if steps is None else int(steps)
    lr = config.DENSITY_FIT_LEARNING_RATE if lr is None else lr
    trace_every = config.DENSITY_FIT_TRACE_EVERY if trace_every is None else int(trace_every)
    grid = default_grid(samples) if grid is None else np.asarray(grid, dtype=np.float64)

    trace = pd.DataFrame({"x": grid})
    if true_density is not None:
        trace["true_density"] = true_density(grid)
    trace["step_0"] = _evaluate(model, grid, noisy)

    data = torch.as_tensor(samples, dtype=torch.float32).reshape(1, -1)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    history = []

    info(f"Fitting {'noisy' if noisy else 'plain'} density to {samples.size} samples for {steps} steps")
    for step in progress_bar(range(1, steps + 1), total=steps, desc="Fitting density", unit="step"):
        optimizer.zero_grad(set_to_none=True)
        loss = _negative_log_likelihood(model, data, noisy)
        if not torch.isfinite(loss):
            raise TrainingError("negative log-likelihood is not finite", step=step)
        loss.backward()
        optimizer.step()
        history.append(float(loss.detach()))

        if trace_every and step % trace_every == 0:
            trace[f"step_{step}"] = _evaluate(model, grid, noisy)
            debug(f"step {step}: nll={history[-1]:.5f} nats")

    with torch.no_grad():
        final = float(_negative_log_likelihood(model, data.double(), noisy))
    if not np.isfinite(final):
        raise TrainingError("final negative log-likelihood is not finite", step=steps)
    if f"step_{steps}" not in trace.columns:
        trace[f"step_{steps}"] = _evaluate(model, grid, noisy)

    success(f"Density fit finished: NLL = {final:.5f} nats")
    return FitResult(model=model, final_nll=final, trace=trace, nll_history=history, noisy=noisy)


def _mixture_components():
    return [(w, stats.norm(loc=mu, scale=s)) for w, mu, s in zip(MIXTURE_WEIGHTS, MIXTURE_MEANS, MIXTURE_STDS)]


def sample_toy(name: str, count: int, rng: np.random.Generator) -> np.ndarray:
    """Samples from one of TOY_DISTRIBUTIONS. "constant" is a point mass at 0."""
    if name == "uniform":
        return rng.uniform(-0.5, 0.5, size=count)
    if name == "gaussian":
        return rng.standard_normal(count)
    if name == "mixture":
        component = rng.choice(len(MIXTURE_WEIGHTS), size=count, p=MIXTURE_WEIGHTS)
        means = np.asarray(MIXTURE_MEANS)[component]
        return means + np.asarray(MIXTURE_STDS)[component] * rng.standard_normal(count)
    if name == "constant":
        return np.zeros(count)
    raise ConfigurationError(f"unknown toy distribution '{name}' (choose from {', '.join(TOY_DISTRIBUTIONS)})")


def toy_density(name: str) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """The true density of a toy distribution, or None for the point mass."""
    if name == "uniform":
        return stats.uniform(loc=-0.5, scale=1.0).pdf
    if name == "gaussian":
        return stats.norm().pdf
    if name == "mixture":
        return lambda x: sum(w * c.pdf(x) for w, c in _mixture_components())
    if name == "constant":
        return None
    raise ConfigurationError(f"unknown toy distribution '{name}' (choose from {', '.join(TOY_DISTRIBUTIONS)})")


def monte_carlo_entropy(name: str, count: int = 1_000_000, seed: int = 0) -> float:
    """Differential entropy estimate in nats, -E[log p(x)]."""
    density = toy_density(name)
    if density is None:
        raise ConfigurationError(f"'{name}' has no density")
    samples = sample_toy(name, count, np.random.default_rng(seed))
    return float(-np.mean(np.log(density(samples))))


def write_fit_csv(result: FitResult, path: str) -> None:
    """x, true_density (when known) and one fitted-density column per traced step."""
    result.trace.to_csv(path, index=False, float_format="%.8g")
    info(f"Wrote density fit trace to {path}")
