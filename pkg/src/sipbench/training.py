"""End-to-end training loops binding the forward processes to the drift
network, one per framework, plus the deterministic regression baseline
and rollout-based evaluation.

Training is single-threaded and fully seeded: batch order, process times
and noise all come from named substreams of the config seed, so two runs
of the same config produce identical loss curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics
from .drift import AdamState, DriftNetwork, adam_update, backward, init_drift_network
from .errors import (
    IncompatibleHeadError,
    ScheduleError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .kflow import Dataset
from .process import (
    InterpolantSchedule,
    antithetic_pair,
    build_edm_schedule,
    build_linear_schedule,
    fm_forward,
    interpolant_point,
    interpolant_target,
    sample_interpolant_time,
    vp_forward,
)
from .rng import substream, substream_seed
from .samplers import REQUIRED_HEAD, SamplerSpec, rollout

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "make_pairs",
    "train",
    "evaluate",
    "rollout_model",
    "save_model",
    "load_model",
    "sampler_schedule",
    "TRAIN_FRAMEWORKS",
    "HEAD_BY_FRAMEWORK",
    "METRIC_NAMES",
]

TRAIN_FRAMEWORKS = ("si", "fm", "ddpm", "ddim", "tsm", "edm", "regression")

HEAD_BY_FRAMEWORK = {
    "si": "drift",
    "fm": "velocity",
    "ddpm": "epsilon",
    "ddim": "epsilon",
    "tsm": "epsilon",
    "edm": "denoiser",
    "regression": "regression",
}

LOSS_BY_FRAMEWORK = {
    "si": "si",
    "fm": "velocity",
    "ddpm": "epsilon",
    "ddim": "epsilon",
    "tsm": "epsilon",
    "edm": "denoiser",
    "regression": "regression",
}

METRIC_NAMES = ("vrmse", "nrmse", "srmse_low", "srmse_mid", "srmse_high")

DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class TrainConfig:
    framework: str = "si"
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    lr_decay: float = 1.0  # per-epoch multiplicative factor
    weight_decay: float = 0.0
    seed: int = 0
    # bridge process
    sigma: float = 1.0
    antithetic: bool = True
    t_epsilon: float = 1e-3
    # train-time perturbation of the source state (standardized units);
    # teaches the map to damp its own rollout errors
    source_noise: float = 0.0
    # discrete diffusion
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # elucidated schedule shape and training noise draw
    edm_sigma_min: float = 0.002
    edm_sigma_max: float = 80.0
    edm_rho: float = 7.0
    edm_logsigma_mean: float = -1.2
    edm_logsigma_std: float = 1.2
    # network
    width: int = 256
    depth: int = 4
    time_embed_dim: int = 64
    # data handling
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.framework not in TRAIN_FRAMEWORKS:
            raise ScheduleError(
                f"unknown framework {self.framework!r}, expected one of {TRAIN_FRAMEWORKS}"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ScheduleError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ScheduleError("learning rate must be positive")
        if self.framework == "si" and self.antithetic and self.sigma <= 0:
            raise ScheduleError("antithetic sampling requires sigma > 0")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ScheduleError("val_fraction must lie in [0, 1)")


@dataclass
class TrainedModel:
    """Network plus everything needed to sample and evaluate it."""

    net: DriftNetwork
    framework: str
    norm_mean: float
    norm_std: float
    config: TrainConfig
    loss_history: list = field(default_factory=list)

    @property
    def head(self) -> str:
        return self.net.head


def make_pairs(dataset: Dataset, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """All adjacent (u(t), u(t+1)) pairs across trajectories.

    Order is trajectory-major and deterministic; passing a seed shuffles
    with the substream (seed, "pairs").
    """
    frames = np.asarray(dataset.frames, dtype=float)
    if frames.shape[0] == 0 or frames.shape[1] < 2:
        raise ShapeMismatchError(
            f"need at least one trajectory with >= 2 frames, got {frames.shape}"
        )
    current = frames[:, :-1].reshape((-1,) + frames.shape[2:])
    future = frames[:, 1:].reshape((-1,) + frames.shape[2:])
    if seed is not None:
        perm = substream(seed, "pairs").permutation(current.shape[0])
        current, future = current[perm], future[perm]
    return current, future


def _split(dataset: Dataset, val_fraction: float):
    n_traj = dataset.frames.shape[0]
    n_val = max(1, int(n_traj * val_fraction)) if val_fraction > 0 else 0
    n_train = n_traj - n_val
    if n_train < 1:
        raise ShapeMismatchError("validation split leaves no training trajectories")
    return dataset.frames[:n_train], dataset.frames[n_train:]


def _batch_construct(framework, cfg, curr, futr, rng, schedule):
    """Build (x_t, cond, t, target) arrays for one batch.

    curr/futr are standardized (B, n, n). For the bridge, antithetic
    construction concatenates the +noise and -noise samples. A nonzero
    source_noise perturbs the current state of each pair (future kept
    clean), so the learned map pulls perturbed states back toward the
    data manifold.
    """
    B = curr.shape[0]
    if cfg.source_noise > 0:
        curr = curr + cfg.source_noise * rng.standard_normal(curr.shape)
    if framework == "si":
        t = sample_interpolant_time(rng, cfg.sigma, size=B, eps=cfg.t_epsilon)
        z = rng.standard_normal(curr.shape)
        if cfg.antithetic:
            plus, minus = antithetic_pair(schedule, curr, futr, z, t)
            x_t = np.concatenate([plus.x_t, minus.x_t])
            target = np.concatenate([plus.target, minus.target])
            return x_t, np.concatenate([curr, curr]), np.concatenate([t, t]), target
        x_t = interpolant_point(schedule, curr, futr, z, t)
        target = interpolant_target(schedule, curr, futr, z, t)
        return x_t, curr, t, target
    if framework == "fm":
        t = rng.uniform(0.0, 1.0, size=B)
        z = rng.standard_normal(curr.shape)
        sample = fm_forward(futr, z, t)
        return sample.x_t, curr, t, sample.target
    if framework in ("ddpm", "ddim", "tsm"):
        steps = rng.integers(0, schedule.T, size=B)
        z = rng.standard_normal(curr.shape)
        sample = vp_forward(schedule, futr, z, steps)
        t_norm = steps / (schedule.T - 1) if schedule.T > 1 else np.zeros(B)
        return sample.x_t, curr, t_norm, sample.target
    if framework == "edm":
        log_sigma = rng.normal(cfg.edm_logsigma_mean, cfg.edm_logsigma_std, size=B)
        sigma = np.exp(log_sigma)
        z = rng.standard_normal(curr.shape)
        x_t = futr + sigma[:, None, None] * z
        return x_t, curr, log_sigma, futr
    # Regression baseline: deterministic map current -> future in residual
    # form. MSE on (curr + out) vs future equals MSE on out vs the delta,
    # so the delta is the stored target.
    return curr, curr, np.zeros(B), futr - curr


def train(dataset: Dataset, cfg: TrainConfig) -> TrainedModel:
    """Train one model; returns the network with per-epoch loss history.

    Fields are standardized with mean/std computed on the training split
    only; the statistics travel with the model (and its checkpoint).
    Diverging loss (non-finite or > 1e6) aborts with diagnostics.
    """
    train_frames, _ = _split(dataset, cfg.val_fraction)
    state_shape = train_frames.shape[2:]
    mean = float(train_frames.mean())
    std = float(train_frames.std())
    if std < 1e-12:
        std = 1.0
    ds_train = Dataset(
        frames=train_frames,
        grid=dataset.grid,
        config=dataset.config,
        base_seed=dataset.base_seed,
    )
    curr_all, futr_all = make_pairs(ds_train)
    curr_all = (curr_all - mean) / std
    futr_all = (futr_all - mean) / std
    n_pairs = curr_all.shape[0]

    head = HEAD_BY_FRAMEWORK[cfg.framework]
    loss_kind = LOSS_BY_FRAMEWORK[cfg.framework]
    net = init_drift_network(
        state_shape,
        hidden_width=cfg.width,
        depth=cfg.depth,
        time_embed_dim=cfg.time_embed_dim,
        head=head,
        seed=substream_seed(cfg.seed, "net-init"),
    )
    schedule = _train_schedule(cfg)

    params = net.parameters()
    adam = AdamState.zeros_like(params)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = substream(cfg.seed, "epoch-order", epoch).permutation(n_pairs)
        batch_rng = substream(cfg.seed, "epoch-draws", epoch)
        lr = cfg.lr * cfg.lr_decay**epoch
        epoch_losses = []
        for start in range(0, n_pairs, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            curr, futr = curr_all[idx], futr_all[idx]
            x_t, cond, t, target = _batch_construct(
                cfg.framework, cfg, curr, futr, batch_rng, schedule
            )
            loss, grads = backward(net, x_t, cond, t, target, loss_kind)
            if not np.isfinite(loss) or loss > DIVERGENCE_BOUND:
                raise TrainingDivergedError(
                    f"loss {loss} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            step += 1
            params, adam = adam_update(params, grads, adam, step, lr=lr)
            if cfg.weight_decay > 0:
                # Decoupled decay on weights only (biases carry the mean response).
                params = [p * (1.0 - lr * cfg.weight_decay) if p.ndim == 2 else p for p in params]
            net = net.with_parameters(params)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return TrainedModel(
        net=net,
        framework=cfg.framework,
        norm_mean=mean,
        norm_std=std,
        config=cfg,
        loss_history=history,
    )


def _train_schedule(cfg: TrainConfig):
    if cfg.framework == "si":
        return InterpolantSchedule(sigma=cfg.sigma)
    if cfg.framework in ("ddpm", "ddim", "tsm"):
        return build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    return None  # fm, edm (noise drawn directly), regression


def sampler_schedule(model: TrainedModel, spec: SamplerSpec):
    """Schedule object the sampler needs, rebuilt from the train config."""
    cfg = model.config
    if spec.framework in ("DDPM", "DDIM", "TSM"):
        return build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    if spec.framework == "EDM":
        return build_edm_schedule(spec.steps, cfg.edm_sigma_min, cfg.edm_sigma_max, cfg.edm_rho)
    if spec.framework in ("SI-E", "SI-EM"):
        return InterpolantSchedule(sigma=cfg.sigma)
    return None


def _check_compat(model: TrainedModel, spec: SamplerSpec):
    required = REQUIRED_HEAD[spec.framework]
    if model.head != required:
        raise IncompatibleHeadError(
            f"sampler {spec.framework} needs head {required!r}; model trained with "
            f"{model.framework!r} carries head {model.head!r}"
        )


def rollout_model(model: TrainedModel, spec: SamplerSpec, initial: np.ndarray, horizon: int) -> np.ndarray:
    """Autoregressive rollout in physical units.

    Standardizes the initial state, rolls out in model space, and maps
    the frames back. ``initial`` may be a single field or a batch.
    """
    _check_compat(model, spec)
    schedule = sampler_schedule(model, spec)
    z0 = (np.asarray(initial, dtype=float) - model.norm_mean) / model.norm_std
    frames = rollout(model.net, spec, z0, horizon, schedule=schedule)
    return frames * model.norm_std + model.norm_mean


def evaluate(model: TrainedModel, dataset: Dataset, spec: SamplerSpec, metric_names) -> dict:
    """Roll out from every validation initial frame and score the result.

    Validation trajectories are the held-out tail of the dataset (same
    split rule as training). Frame 0 is shared with the truth and is
    excluded from the scores. Returns per-trajectory values, a summary
    (mean/std across trajectories), and per-timestep series averaged
    across trajectories.
    """
    metric_names = list(metric_names)
    if not metric_names:
        raise ShapeMismatchError("metric set must not be empty")
    unknown = [m for m in metric_names if m not in METRIC_NAMES]
    if unknown:
        raise ShapeMismatchError(f"unknown metrics {unknown}; supported: {METRIC_NAMES}")
    _check_compat(model, spec)
    _, val_frames = _split(dataset, model.config.val_fraction)
    if val_frames.shape[0] == 0:
        raise ShapeMismatchError("dataset has no validation trajectories under the split rule")
    truth = np.asarray(val_frames, dtype=float)
    n_val, n_frames = truth.shape[0], truth.shape[1]
    if n_frames < 2:
        raise ShapeMismatchError("need at least 2 frames to roll out")
    preds = rollout_model(model, spec, truth[:, 0], n_frames - 1)  # (n_frames, n_val, n, n)
    preds = np.moveaxis(preds, 0, 1)  # (n_val, n_frames, n, n)

    per_traj = {name: [] for name in metric_names}
    series_acc = {name: [] for name in metric_names}
    for i in range(n_val):
        p, o = preds[i, 1:], truth[i, 1:]
        band_series = None
        if any(name.startswith("srmse") for name in metric_names):
            band_series = metrics.srmse_band_series(p, o)
        for name in metric_names:
            if name == "vrmse":
                series = metrics.vrmse_series(p, o)
            elif name == "nrmse":
                series = metrics.nrmse_series(p, o)
            else:
                series = band_series[BAND_INDEX[name]]
            per_traj[name].append(float(series.mean()))
            series_acc[name].append(series)

    summary = {
        name: {
            "mean": float(np.mean(per_traj[name])),
            "std": float(np.std(per_traj[name])),
        }
        for name in metric_names
    }
    series = {name: np.mean(series_acc[name], axis=0) for name in metric_names}
    return {"per_trajectory": per_traj, "summary": summary, "series": series}


BAND_INDEX = {"srmse_low": 0, "srmse_mid": 1, "srmse_high": 2}


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def save_model(path, model: TrainedModel) -> None:
    """Checkpoint the network with framework tag, normalisation statistics,
    and the full training config for schedule reconstruction."""
    from .drift import save_checkpoint

    save_checkpoint(
        path,
        model.net,
        extra={
            "framework": model.framework,
            "norm_mean": model.norm_mean,
            "norm_std": model.norm_std,
            "train_config": config_dict(model.config),
            "loss_history": [float(v) for v in model.loss_history],
        },
    )


def load_model(path) -> TrainedModel:
    from .drift import load_checkpoint

    net, header = load_checkpoint(path)
    cfg = TrainConfig(**header["train_config"])
    return TrainedModel(
        net=net,
        framework=header["framework"],
        norm_mean=float(header["norm_mean"]),
        norm_std=float(header["norm_std"]),
        config=cfg,
        loss_history=list(header.get("loss_history", [])),
    )
