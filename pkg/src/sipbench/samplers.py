"""Sampling procedures for every framework, plus autoregressive rollout.

All samplers are pure functions of (net, inputs, seed): the initial
Gaussian comes from the substream (seed, "init") and per-step noise from
(seed, "steps"), drawn in step order, so a fixed seed gives bit-identical
output. ``net`` is any callable (x, cond, t) -> field; trained networks
additionally carry a ``head`` tag that is checked against the framework.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    IncompatibleHeadError,
    RolloutDivergedError,
    ScheduleError,
    ShapeMismatchError,
)
from .process import DiffusionSchedule, EdmSchedule, InterpolantSchedule
from .rng import substream, substream_seed

__all__ = [
    "SamplerSpec",
    "FRAMEWORKS",
    "sample_ddpm",
    "sample_ddim",
    "sample_edm",
    "sample_tsm",
    "sample_fm",
    "sample_si_euler",
    "sample_si_em",
    "sample_direct",
    "run_sampler",
    "rollout",
]

FRAMEWORKS = ("DDPM", "DDIM", "EDM", "TSM", "FM", "SI-E", "SI-EM", "DIRECT")

# Which loss head a framework's sampler expects the network to carry.
REQUIRED_HEAD = {
    "DDPM": "epsilon",
    "DDIM": "epsilon",
    "TSM": "epsilon",
    "EDM": "denoiser",
    "FM": "velocity",
    "SI-E": "drift",
    "SI-EM": "drift",
    "DIRECT": "regression",
}


@dataclass(frozen=True)
class SamplerSpec:
    """Framework tag plus the knobs that fully determine a sampling run."""

    framework: str
    steps: int = 1
    eta: float = 0.0
    sigma: float = 1.0
    seed: int = 0
    em_noise_scale: float = 1.0
    tsm_trunc_step: int | None = None

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ScheduleError(f"unknown framework {self.framework!r}, expected one of {FRAMEWORKS}")
        if self.steps < 1:
            raise ScheduleError(f"steps must be >= 1, got {self.steps}")
        if self.framework == "TSM" and self.steps != 1:
            raise ScheduleError("TSM is a single-evaluation sampler; steps must be 1")
        if self.framework == "SI-EM":
            if self.sigma <= 0:
                raise ScheduleError("SI-EM requires sigma > 0 (use SI-E for the noise-free path)")
            if self.steps < 2:
                raise ScheduleError("SI-EM requires steps >= 2 (the first step is analytic)")
        if not (0.0 <= self.eta <= 1.0):
            raise ScheduleError(f"eta must lie in [0, 1], got {self.eta}")


def _check_head(net, framework: str):
    head = getattr(net, "head", None)
    required = REQUIRED_HEAD[framework]
    if head is not None and head != required:
        raise IncompatibleHeadError(
            f"{framework} sampling needs a {required!r}-head network, got {head!r}"
        )


def _init_noise(seed, shape) -> np.ndarray:
    return substream(seed, "init").standard_normal(shape)


def _norm_step(step: int, T: int) -> float:
    return step / (T - 1) if T > 1 else 0.0


def sample_ddpm(net, d: DiffusionSchedule, cond, seed, x_init=None) -> np.ndarray:
    """Ancestral chain from the most-noised step down to step 0.

    Per-step variance is beta_t; no noise is added on the final step.
    """
    _check_head(net, "DDPM")
    cond = np.asarray(cond, dtype=float)
    x = np.array(x_init, dtype=float) if x_init is not None else _init_noise(seed, cond.shape)
    steps_rng = substream(seed, "steps")
    for t in range(d.T - 1, -1, -1):
        eps = net(x, cond, _norm_step(t, d.T))
        mean = (x - (d.betas[t] / np.sqrt(1.0 - d.alphabar[t])) * eps) / np.sqrt(d.alphas[t])
        if t > 0:
            x = mean + np.sqrt(d.betas[t]) * steps_rng.standard_normal(x.shape)
        else:
            x = mean
    return x


def _ddim_subschedule(T: int, steps: int) -> np.ndarray:
    """Uniform stride over the full schedule, noisiest first, both endpoints
    included (a single step uses only the noisiest level)."""
    taus = np.round(np.linspace(T - 1, 0, steps)).astype(int)
    if np.any(np.diff(taus) >= 0):
        raise ScheduleError(f"sub-schedule from steps={steps} over T={T} is not strictly decreasing")
    return taus


def _tweedie(x, eps, abar):
    return (x - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)


def sample_ddim(net, d: DiffusionSchedule, cond, steps: int, eta: float, seed, x_init=None) -> np.ndarray:
    """Sub-sampled reverse chain; deterministic at eta = 0."""
    _check_head(net, "DDIM")
    if steps > d.T:
        raise ScheduleError(f"steps={steps} exceeds schedule length T={d.T}")
    if steps < 1:
        raise ScheduleError("steps must be >= 1")
    cond = np.asarray(cond, dtype=float)
    x = np.array(x_init, dtype=float) if x_init is not None else _init_noise(seed, cond.shape)
    taus = _ddim_subschedule(d.T, steps)
    steps_rng = substream(seed, "steps")
    for i, tau in enumerate(taus):
        abar_t = d.alphabar[tau]
        eps = net(x, cond, _norm_step(int(tau), d.T))
        x0_hat = _tweedie(x, eps, abar_t)
        if i == len(taus) - 1:
            return x0_hat
        abar_prev = d.alphabar[taus[i + 1]]
        sig2 = (eta**2) * ((1.0 - abar_prev) / (1.0 - abar_t)) * (1.0 - abar_t / abar_prev)
        sig2 = max(sig2, 0.0)
        x = np.sqrt(abar_prev) * x0_hat + np.sqrt(max(1.0 - abar_prev - sig2, 0.0)) * eps
        if eta > 0:
            x = x + np.sqrt(sig2) * steps_rng.standard_normal(x.shape)
    return x


def sample_edm(net, e: EdmSchedule, cond, seed, x_init=None) -> np.ndarray:
    """Euler steps along decreasing sigma levels from x ~ N(0, sigma_max^2 I).

    The update is written in ratio form x <- (s'/s) x + (1 - s'/s) D, so the
    terminal level 0 returns the denoiser prediction exactly. The network
    time slot receives log sigma.
    """
    _check_head(net, "EDM")
    cond = np.asarray(cond, dtype=float)
    levels = e.sigma_levels
    if x_init is not None:
        x = np.array(x_init, dtype=float)
    else:
        x = levels[0] * _init_noise(seed, cond.shape)
    for i in range(len(levels) - 1):
        sig, sig_next = levels[i], levels[i + 1]
        denoised = net(x, cond, np.log(sig))
        ratio = sig_next / sig
        x = ratio * x + (1.0 - ratio) * denoised
    return x


def sample_tsm(net, d: DiffusionSchedule, cond, seed, trunc_step: int | None = None, x_init=None) -> np.ndarray:
    """Single posterior-mean evaluation at the truncation step (default:
    the most-noised step)."""
    _check_head(net, "TSM")
    cond = np.asarray(cond, dtype=float)
    t = d.T - 1 if trunc_step is None else int(trunc_step)
    if not (0 <= t < d.T):
        raise ScheduleError(f"truncation step {t} outside [0, {d.T})")
    x = np.array(x_init, dtype=float) if x_init is not None else _init_noise(seed, cond.shape)
    eps = net(x, cond, _norm_step(t, d.T))
    return _tweedie(x, eps, d.alphabar[t])


def sample_fm(net, cond, steps: int, seed, x_init=None) -> np.ndarray:
    """Euler integration of the learned velocity from noise over [0, 1]."""
    _check_head(net, "FM")
    if steps < 1:
        raise ScheduleError(f"steps must be >= 1, got {steps}")
    cond = np.asarray(cond, dtype=float)
    x = np.array(x_init, dtype=float) if x_init is not None else _init_noise(seed, cond.shape)
    dt = 1.0 / steps
    for k in range(steps):
        x = x + net(x, cond, k * dt) * dt
    return x


def sample_si_euler(net, s: InterpolantSchedule, x0, steps: int) -> np.ndarray:
    """Probability-flow integration starting from the current state.

    The condition is pinned to x0 for the whole path; drift is evaluated
    at left endpoints. Deterministic: no seed is consumed.
    """
    _check_head(net, "SI-E")
    if steps < 1:
        raise ScheduleError(f"steps must be >= 1, got {steps}")
    x0 = np.asarray(x0, dtype=float)
    x = x0.copy()
    dt = 1.0 / steps
    for k in range(steps):
        x = x + net(x, x0, k * dt) * dt
    return x


def sample_si_em(net, s: InterpolantSchedule, x0, steps: int, seed, noise_scale: float = 1.0) -> np.ndarray:
    """Stochastic path with diffusion coefficient dgamma(t)/sqrt(t).

    The first step is the analytic update x0 + dt b(x0, 0) + sqrt(dt)
    sigma (1-t) z at t = 0, which sidesteps the t = 0 singularity; the
    final step into t = 1 adds no noise (gamma(1) = 0). ``noise_scale``
    rescales the diffusion term without retraining the drift.
    """
    _check_head(net, "SI-EM")
    if s.sigma <= 0:
        raise ScheduleError("sample_si_em requires sigma > 0; use sample_si_euler")
    if steps < 2:
        raise ScheduleError("sample_si_em requires steps >= 2")
    x0 = np.asarray(x0, dtype=float)
    rng = substream(seed, "steps")
    dt = 1.0 / steps
    # Analytic first step at t = 0 (coefficient sigma (1 - t) with t = 0).
    x = x0 + dt * net(x0, x0, 0.0) + np.sqrt(dt) * s.sigma * noise_scale * rng.standard_normal(x0.shape)
    for k in range(1, steps):
        t = k * dt
        x = x + net(x, x0, t) * dt
        if k < steps - 1:
            coef = s.dgamma(t) / np.sqrt(t)
            x = x + np.sqrt(dt) * coef * noise_scale * rng.standard_normal(x.shape)
    return x


def sample_direct(net, cond) -> np.ndarray:
    """Deterministic regression baseline: one forward pass.

    The network predicts the state delta (residual parameterisation, the
    usual choice for autoregressive surrogates), so the prediction is
    cond + net(cond, cond, 0).
    """
    _check_head(net, "DIRECT")
    cond = np.asarray(cond, dtype=float)
    return cond + net(cond, cond, 0.0)


def run_sampler(net, spec: SamplerSpec, current, schedule, seed=None) -> np.ndarray:
    """Dispatch one prediction of the next state from ``current``.

    ``schedule`` must match the framework: DiffusionSchedule for the
    discrete chains, EdmSchedule for EDM, InterpolantSchedule for the
    bridge samplers, None for FM/DIRECT.
    """
    seed = spec.seed if seed is None else seed
    fw = spec.framework
    _check_head(net, fw)
    if fw in ("DDPM", "DDIM", "TSM"):
        if not isinstance(schedule, DiffusionSchedule):
            raise ScheduleError(f"{fw} needs a DiffusionSchedule, got {type(schedule).__name__}")
        if fw == "DDPM":
            return sample_ddpm(net, schedule, current, seed)
        if fw == "DDIM":
            return sample_ddim(net, schedule, current, spec.steps, spec.eta, seed)
        return sample_tsm(net, schedule, current, seed, trunc_step=spec.tsm_trunc_step)
    if fw == "EDM":
        if not isinstance(schedule, EdmSchedule):
            raise ScheduleError(f"EDM needs an EdmSchedule, got {type(schedule).__name__}")
        return sample_edm(net, schedule, current, seed)
    if fw == "FM":
        return sample_fm(net, current, spec.steps, seed)
    if fw in ("SI-E", "SI-EM"):
        if not isinstance(schedule, InterpolantSchedule):
            raise ScheduleError(f"{fw} needs an InterpolantSchedule, got {type(schedule).__name__}")
        if fw == "SI-E":
            return sample_si_euler(net, schedule, current, spec.steps)
        return sample_si_em(net, schedule, current, spec.steps, seed, noise_scale=spec.em_noise_scale)
    return sample_direct(net, current)


def rollout(net, spec: SamplerSpec, initial, horizon: int, schedule=None) -> np.ndarray:
    """Autoregressive chain of ``horizon`` predictions.

    Returns frames stacked on axis 0 with the initial state as frame 0.
    Prediction step k (1-based) draws its seed from the substream
    (spec.seed, "rollout", k). A non-finite prediction aborts with an
    error naming the offending step.
    """
    if horizon < 1:
        raise ScheduleError(f"horizon must be >= 1, got {horizon}")
    initial = np.asarray(initial, dtype=float)
    frames = np.empty((horizon + 1,) + initial.shape, dtype=float)
    frames[0] = initial
    state = initial
    for k in range(1, horizon + 1):
        step_seed = substream_seed(spec.seed, "rollout", k)
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                pred = run_sampler(net, spec, state, schedule, seed=step_seed)
            except ValueError as exc:
                # overflow inside the sampler's own integration loop
                raise RolloutDivergedError(
                    k, f"non-finite prediction at rollout step {k} ({exc})"
                ) from exc
        if pred.shape != state.shape:
            raise ShapeMismatchError(f"sampler returned {pred.shape}, expected {state.shape}")
        if not np.isfinite(pred).all():
            raise RolloutDivergedError(k, f"non-finite prediction at rollout step {k}")
        frames[k] = pred
        state = pred
    return frames
