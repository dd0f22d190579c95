"""Forward stochastic processes and their regression targets.

Covers the noised bridge between current and future states,
variance-preserving discrete diffusion, the elucidated sigma schedule,
and the constant-velocity noise-to-data path. Each construction returns
the sample together with the quantity the network is trained to regress.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ScheduleError, ShapeMismatchError, TimeRangeError

__all__ = [
    "InterpolantSchedule",
    "DiffusionSchedule",
    "EdmSchedule",
    "ProcessSample",
    "interpolant_point",
    "interpolant_target",
    "antithetic_pair",
    "vp_forward",
    "fm_forward",
    "build_linear_schedule",
    "build_edm_schedule",
    "sample_interpolant_time",
]


@dataclass(frozen=True)
class InterpolantSchedule:
    """Linear bridge coefficients with a scaled noise bump.

    alpha(t) = 1 - t, beta(t) = t, gamma(t) = sigma * (1 - t) * sqrt(t).
    gamma vanishes at both endpoints so the bridge hits the data exactly;
    its derivative is singular at t = 0, which callers of derivative-based
    quantities must avoid when sigma > 0.
    """

    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ScheduleError(f"sigma must be nonnegative, got {self.sigma}")

    def alpha(self, t):
        return 1.0 - np.asarray(t, dtype=float)

    def beta(self, t):
        return np.asarray(t, dtype=float) + 0.0

    def gamma(self, t):
        t = np.asarray(t, dtype=float)
        return self.sigma * (1.0 - t) * np.sqrt(t)

    def dalpha(self, t):
        return -np.ones_like(np.asarray(t, dtype=float))

    def dbeta(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def dgamma(self, t):
        # d/dt [(1-t) sqrt(t)] = (1 - 3t) / (2 sqrt(t)); singular at t = 0.
        t = np.asarray(t, dtype=float)
        return self.sigma * (1.0 - 3.0 * t) / (2.0 * np.sqrt(t))


@dataclass(frozen=True)
class DiffusionSchedule:
    """Discrete variance-preserving schedule: per-step beta, alpha, and
    the cumulative signal product alphabar (strictly decreasing)."""

    betas: np.ndarray
    alphas: np.ndarray = field(default=None)
    alphabar: np.ndarray = field(default=None)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        object.__setattr__(self, "betas", betas)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("betas must be a 1D array with at least one step")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ScheduleError("each beta must lie in (0, 1)")
        alphas = 1.0 - betas if self.alphas is None else np.asarray(self.alphas, dtype=float)
        alphabar = (
            np.cumprod(alphas) if self.alphabar is None else np.asarray(self.alphabar, dtype=float)
        )
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alphabar", alphabar)
        if np.any(np.diff(alphabar) >= 0):
            raise ScheduleError("alphabar must be strictly decreasing")

    @property
    def T(self) -> int:
        return self.betas.size


@dataclass(frozen=True)
class EdmSchedule:
    """Decreasing sigma levels with an appended terminal zero."""

    sigma_levels: np.ndarray
    sigma_min: float
    sigma_max: float
    rho: float

    def __post_init__(self):
        levels = np.asarray(self.sigma_levels, dtype=float)
        object.__setattr__(self, "sigma_levels", levels)
        if np.any(np.diff(levels) >= 0):
            raise ScheduleError("sigma levels must be strictly decreasing")

    @property
    def steps(self) -> int:
        return self.sigma_levels.size - 1


@dataclass(frozen=True)
class ProcessSample:
    """One draw of a forward process: the noised state, its time (or step
    index), the Gaussian used, and the regression target."""

    x_t: np.ndarray
    t: "float | int | np.ndarray"
    z: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.target).all():
            raise ValueError("non-finite regression target")


def _expand(coef, ref: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or per-sample coefficient over field dims."""
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (ref.ndim - coef.ndim))


def _check_same_shape(**fields):
    shapes = {name: np.shape(arr) for name, arr in fields.items()}
    if len(set(shapes.values())) > 1:
        raise ShapeMismatchError(f"field shapes disagree: {shapes}")


def _check_t_range(t, lo, hi, open_interval=False):
    t = np.asarray(t, dtype=float)
    if open_interval:
        bad = np.any(t <= lo) or np.any(t >= hi)
    else:
        bad = np.any(t < lo) or np.any(t > hi)
    if bad:
        kind = "open" if open_interval else "closed"
        raise TimeRangeError(f"t={t} outside {kind} interval [{lo}, {hi}]")
    return t


def interpolant_point(s: InterpolantSchedule, x0, x1, z, t) -> np.ndarray:
    """alpha(t) x0 + beta(t) x1 + gamma(t) z for t in [0, 1].

    ``t`` may be a scalar or a vector matching the leading (batch) axis.
    """
    x0, x1, z = np.asarray(x0, float), np.asarray(x1, float), np.asarray(z, float)
    _check_same_shape(x0=x0, x1=x1, z=z)
    t = _check_t_range(t, 0.0, 1.0)
    a = _expand(s.alpha(t), x0)
    b = _expand(s.beta(t), x0)
    g = _expand(s.gamma(t), x0)
    return a * x0 + b * x1 + g * z


def interpolant_target(s: InterpolantSchedule, x0, x1, z, t) -> np.ndarray:
    """Time derivative of the bridge: dalpha x0 + dbeta x1 + dgamma z.

    Requires t strictly inside (0, 1) when sigma > 0 because dgamma is
    singular at the endpoints.
    """
    x0, x1, z = np.asarray(x0, float), np.asarray(x1, float), np.asarray(z, float)
    _check_same_shape(x0=x0, x1=x1, z=z)
    if s.sigma > 0:
        t = _check_t_range(t, 0.0, 1.0, open_interval=True)
    else:
        t = _check_t_range(t, 0.0, 1.0)
    da = _expand(s.dalpha(t), x0)
    db = _expand(s.dbeta(t), x0)
    drift = da * x0 + db * x1
    if s.sigma == 0:
        return drift
    return drift + _expand(s.dgamma(t), x0) * z


def antithetic_pair(s: InterpolantSchedule, x0, x1, z, t) -> tuple[ProcessSample, ProcessSample]:
    """The +gamma(t) z and -gamma(t) z samples with matching targets.

    Both share x0, x1, t; the odd noise terms cancel in the pair mean,
    which bounds the loss variance near the singular endpoints.
    """
    x0, x1, z = np.asarray(x0, float), np.asarray(x1, float), np.asarray(z, float)
    _check_same_shape(x0=x0, x1=x1, z=z)
    if s.sigma > 0:
        t = _check_t_range(t, 0.0, 1.0, open_interval=True)
    else:
        t = _check_t_range(t, 0.0, 1.0)
    base = _expand(s.alpha(t), x0) * x0 + _expand(s.beta(t), x0) * x1
    tbase = _expand(s.dalpha(t), x0) * x0 + _expand(s.dbeta(t), x0) * x1
    if s.sigma == 0:
        noise = np.zeros_like(base)
        tnoise = np.zeros_like(base)
    else:
        noise = _expand(s.gamma(t), x0) * z
        tnoise = _expand(s.dgamma(t), x0) * z
    plus = ProcessSample(base + noise, t, z, tbase + tnoise)
    minus = ProcessSample(base - noise, t, -z, tbase - tnoise)
    return plus, minus


def vp_forward(d: DiffusionSchedule, x0, z, step) -> ProcessSample:
    """sqrt(abar) x0 + sqrt(1 - abar) z at a discrete step; target is z."""
    x0, z = np.asarray(x0, float), np.asarray(z, float)
    _check_same_shape(x0=x0, z=z)
    step = np.asarray(step)
    if not np.issubdtype(step.dtype, np.integer):
        raise TimeRangeError(f"step must be integer, got dtype {step.dtype}")
    if np.any(step < 0) or np.any(step >= d.T):
        raise TimeRangeError(f"step {step} outside [0, {d.T})")
    abar = d.alphabar[step]
    x_t = _expand(np.sqrt(abar), x0) * x0 + _expand(np.sqrt(1.0 - abar), x0) * z
    return ProcessSample(x_t, step if step.ndim else int(step), z, z)


def fm_forward(x1, z, t) -> ProcessSample:
    """Constant-velocity path (1 - t) z + t x1; target is x1 - z.

    Convention: t = 0 is pure noise, t = 1 is data, matching the bridge
    direction so the Gaussian-source case is the sigma-free special case.
    """
    x1, z = np.asarray(x1, float), np.asarray(z, float)
    _check_same_shape(x1=x1, z=z)
    t = _check_t_range(t, 0.0, 1.0)
    x_t = (1.0 - _expand(t, x1)) * z + _expand(t, x1) * x1
    return ProcessSample(x_t, t, z, x1 - z)


def build_linear_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    """Linearly spaced betas; alphabar is the cumulative product of (1 - beta)."""
    if T < 2:
        raise ScheduleError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T)
    return DiffusionSchedule(betas=betas)


def build_edm_schedule(
    steps: int,
    sigma_min: float = 0.002,
    sigma_max: float = 80.0,
    rho: float = 7.0,
) -> EdmSchedule:
    """sigma_i = (smax^(1/rho) + i/(steps-1) (smin^(1/rho) - smax^(1/rho)))^rho
    for i = 0..steps-1, with a terminal 0 appended."""
    if steps < 1:
        raise ScheduleError(f"steps must be >= 1, got {steps}")
    if not (0.0 < sigma_min < sigma_max):
        raise ScheduleError(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    if rho <= 0:
        raise ScheduleError(f"rho must be positive, got {rho}")
    if steps == 1:
        levels = np.array([sigma_max, 0.0])
    else:
        i = np.arange(steps) / (steps - 1)
        inv = 1.0 / rho
        levels = (sigma_max**inv + i * (sigma_min**inv - sigma_max**inv)) ** rho
        levels = np.concatenate([levels, [0.0]])
    return EdmSchedule(levels, sigma_min, sigma_max, rho)


def sample_interpolant_time(rng: np.random.Generator, sigma: float, size=None, eps: float = 1e-3):
    """Uniform training times; restricted to [eps, 1-eps] when sigma > 0
    so the singular dgamma endpoint is never evaluated."""
    if sigma > 0:
        return rng.uniform(eps, 1.0 - eps, size=size)
    return rng.uniform(0.0, 1.0, size=size)
