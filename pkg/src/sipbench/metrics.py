"""Evaluation metrics for trajectories and ensemble forecasts.

Pointwise scores (variance-scaled and relative L2), isotropic spectral
errors in log-spaced radial bands, latitude-weighted scores for
equiangular grids, the fair ensemble probability score with its paired
spread term, the spread-skill ratio, and long-run climatological bias.
Everything operates on plain arrays: trajectories are (n_t, ny, nx) (or
(n_t, C, ny, nx) where channels are averaged), ensembles carry a leading
member axis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError

__all__ = [
    "SpectrumBands",
    "LatGrid",
    "EnsembleForecast",
    "vrmse",
    "vrmse_series",
    "nrmse",
    "nrmse_series",
    "radial_power_spectrum",
    "band_edges",
    "srmse_bands",
    "srmse_band_series",
    "lat_weights",
    "lrmse",
    "lmae",
    "crps",
    "ssr",
    "climatological_bias",
    "lead_time_scores",
    "write_metric_csv",
    "write_metric_summary",
]

EPS = 1e-6
BAND_NAMES = ("low", "mid", "high")
POWER_CAP = 10.0  # sentinel contribution when predicted band power is zero


def _rms(a, axis=None):
    return np.sqrt(np.mean(np.square(a), axis=axis))


def _check_traj(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs truth {truth.shape}")
    if pred.ndim < 3:
        raise ShapeMismatchError(f"expected (n_t, ..., ny, nx), got {pred.shape}")
    return pred, truth


def vrmse_series(pred, truth, eps: float = EPS) -> np.ndarray:
    """Per-timestep RMS error over RMS deviation from the spatial mean.

    Predicting the spatial mean field scores ~1; the eps guard keeps the
    degenerate constant-truth case finite.
    """
    pred, truth = _check_traj(pred, truth)
    axes = tuple(range(1, truth.ndim))
    num = _rms(pred - truth, axis=axes)
    mean = truth.mean(axis=axes, keepdims=True)
    den = _rms(truth - mean, axis=axes) + eps
    return num / den


def vrmse(pred, truth, eps: float = EPS) -> float:
    return float(np.mean(vrmse_series(pred, truth, eps)))


def nrmse_series(pred, truth, eps: float = EPS) -> np.ndarray:
    """Per-timestep relative L2 error."""
    pred, truth = _check_traj(pred, truth)
    axes = tuple(range(1, truth.ndim))
    return _rms(pred - truth, axis=axes) / (_rms(truth, axis=axes) + eps)


def nrmse(pred, truth, eps: float = EPS) -> float:
    return float(np.mean(nrmse_series(pred, truth, eps)))


def radial_power_spectrum(field) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic power spectrum by integer radial wavenumber.

    Power is normalised as |F_k|^2 / (n^2)^2 so the bins sum to the
    spatial mean square of the field (discrete Parseval identity). Modes
    whose radius rounds beyond n//2 are folded into the top bin so no
    mode is dropped.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 2 or field.shape[0] != field.shape[1]:
        raise ShapeMismatchError(f"radial spectrum needs a square field, got {field.shape}")
    n = field.shape[0]
    coeffs = np.fft.fft2(field)
    power2d = np.abs(coeffs) ** 2 / float(n * n) ** 2
    m = np.fft.fftfreq(n, 1.0 / n).astype(int)
    radius = np.rint(np.hypot(m[:, None], m[None, :])).astype(int)
    kmax = n // 2
    radius = np.minimum(radius, kmax)
    bins = np.arange(kmax + 1)
    power = np.bincount(radius.ravel(), weights=power2d.ravel(), minlength=kmax + 1)
    return bins, power


def band_edges(kmax: int, n_bands: int = 3) -> np.ndarray:
    """Geometric edges partitioning radial bins 1..kmax into n_bands."""
    if kmax < n_bands:
        raise ShapeMismatchError(f"kmax={kmax} too small to split into {n_bands} bands")
    return np.geomspace(1.0, float(kmax), n_bands + 1)


@dataclass(frozen=True)
class SpectrumBands:
    """Band partition of the radial axis plus per-band per-time errors."""

    edges: np.ndarray
    errors: np.ndarray = field(default=None)  # (n_bands, n_t)

    def band_of(self, k: int) -> int:
        idx = int(np.searchsorted(self.edges, k, side="right") - 1)
        return min(max(idx, 0), len(self.edges) - 2)


def _band_power(power: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Sum single-spectrum power over each band (DC bin excluded)."""
    kmax = power.size - 1
    out = np.zeros(len(edges) - 1)
    bands = SpectrumBands(edges)
    for k in range(1, kmax + 1):
        out[bands.band_of(k)] += power[k]
    return out


def srmse_band_series(pred, truth, mode: str = "pooled", cap: float = POWER_CAP) -> np.ndarray:
    """Relative spectral-power error |1 - p/p_pred| per band per time.

    ``pooled`` sums power within a band before taking one ratio;
    ``per_bin`` averages the per-bin ratios inside the band. Timesteps
    where the predicted power vanishes contribute the sentinel ``cap``.
    Channel axes (n_t, C, n, n) are averaged.
    """
    pred, truth = _check_traj(pred, truth)
    if pred.ndim == 4:
        per_channel = [
            srmse_band_series(pred[:, c], truth[:, c], mode=mode, cap=cap)
            for c in range(pred.shape[1])
        ]
        return np.mean(per_channel, axis=0)
    if mode not in ("pooled", "per_bin"):
        raise ValueError(f"unknown band mode {mode!r}")
    n_t, n = pred.shape[0], pred.shape[-1]
    edges = band_edges(n // 2)
    out = np.zeros((len(edges) - 1, n_t))
    bands = SpectrumBands(edges)
    for t in range(n_t):
        _, p_true = radial_power_spectrum(truth[t])
        _, p_pred = radial_power_spectrum(pred[t])
        if mode == "pooled":
            bt = _band_power(p_true, edges)
            bp = _band_power(p_pred, edges)
            for b in range(len(edges) - 1):
                out[b, t] = min(abs(1.0 - bt[b] / bp[b]), cap) if bp[b] > 0 else cap
        else:
            sums = np.zeros(len(edges) - 1)
            counts = np.zeros(len(edges) - 1)
            for k in range(1, n // 2 + 1):
                b = bands.band_of(k)
                counts[b] += 1
                sums[b] += min(abs(1.0 - p_true[k] / p_pred[k]), cap) if p_pred[k] > 0 else cap
            out[:, t] = sums / np.maximum(counts, 1)
    return out


def srmse_bands(pred, truth, mode: str = "pooled") -> np.ndarray:
    """Time-averaged spectral errors, one scalar per band (low, mid, high)."""
    return srmse_band_series(pred, truth, mode=mode).mean(axis=1)


@dataclass(frozen=True)
class LatGrid:
    """Latitude-weighted grid; weights average to exactly 1.

    Weights follow (sin upper - sin lower) of each latitude cell divided
    by the mean of those differences, compensating the equiangular-grid
    area distortion toward the poles.
    """

    n_lat: int
    n_lon: int
    weights: np.ndarray

    @classmethod
    def from_edges(cls, edges_rad: np.ndarray, n_lon: int) -> "LatGrid":
        edges = np.asarray(edges_rad, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ShapeMismatchError("cell edges must be strictly increasing")
        diffs = np.sin(edges[1:]) - np.sin(edges[:-1])
        return cls(n_lat=edges.size - 1, n_lon=n_lon, weights=diffs / diffs.mean())

    @classmethod
    def equiangular(cls, n_lat: int, n_lon: int) -> "LatGrid":
        return cls.from_edges(np.linspace(-np.pi / 2, np.pi / 2, n_lat + 1), n_lon)

    @classmethod
    def uniform(cls, n_lat: int, n_lon: int) -> "LatGrid":
        """Degenerate all-ones weighting; reduces lrmse/lmae to plain RMSE/MAE."""
        return cls(n_lat=n_lat, n_lon=n_lon, weights=np.ones(n_lat))


def lat_weights(grid: LatGrid) -> np.ndarray:
    return grid.weights


def _check_latlon(a, grid: LatGrid):
    a = np.asarray(a, dtype=float)
    if a.shape[-2:] != (grid.n_lat, grid.n_lon):
        raise ShapeMismatchError(f"field {a.shape} does not end in ({grid.n_lat}, {grid.n_lon})")
    return a


def lrmse(pred, truth, grid: LatGrid) -> float:
    """Latitude-weighted RMSE over the trailing (lat, lon) axes."""
    pred = _check_latlon(pred, grid)
    truth = _check_latlon(truth, grid)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs truth {truth.shape}")
    w = grid.weights[:, None]
    return float(np.sqrt(np.mean(w * (pred - truth) ** 2, axis=(-2, -1))))


def lmae(pred, truth, grid: LatGrid) -> float:
    """Latitude-weighted mean absolute error."""
    pred = _check_latlon(pred, grid)
    truth = _check_latlon(truth, grid)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs truth {truth.shape}")
    w = grid.weights[:, None]
    return float(np.mean(w * np.abs(pred - truth), axis=(-2, -1)))


@dataclass(frozen=True)
class EnsembleForecast:
    """M member trajectories against one observed trajectory."""

    members: np.ndarray  # (M, n_t, [n_level,] n_lat, n_lon)
    observation: np.ndarray  # (n_t, [n_level,] n_lat, n_lon)
    grid: LatGrid

    def __post_init__(self):
        members = np.asarray(self.members, dtype=float)
        obs = np.asarray(self.observation, dtype=float)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "observation", obs)
        if members.shape[1:] != obs.shape:
            raise ShapeMismatchError(f"members {members.shape} vs observation {obs.shape}")

    @property
    def size(self) -> int:
        return self.members.shape[0]

    def at(self, t: int, level=None):
        f = self.members[:, t]
        o = self.observation[t]
        if level is not None:
            f, o = f[:, level], o[level]
        return f, o


def _pairwise_lmae_sum(fields: np.ndarray, grid: LatGrid, chunk: int = 256) -> float:
    """Sum of weighted MAE over all ordered member pairs, chunked over the
    first axis to bound memory for large ensembles."""
    M = fields.shape[0]
    w = grid.weights[:, None]
    total = 0.0
    for start in range(0, M, chunk):
        block = fields[start : start + chunk]
        diffs = np.abs(block[:, None] - fields[None, :])  # (c, M, lat, lon)
        total += float(np.sum(np.mean(w * diffs, axis=(-2, -1))))
    return total


def crps(ens: EnsembleForecast, t: int, level=None) -> float:
    """Fair ensemble probability score at one lead time and level.

    mean_m lMAE(f_m, o) - (1 / (2 M (M-1))) sum_{m,n} lMAE(f_m, f_n);
    the pair term makes the estimator unbiased in the ensemble size.
    """
    M = ens.size
    if M < 2:
        raise ShapeMismatchError(f"need at least 2 members for the pair term, got {M}")
    f, o = ens.at(t, level)
    skill = float(np.mean([lmae(f[m], o, ens.grid) for m in range(M)]))
    pair = _pairwise_lmae_sum(f, ens.grid) / (2.0 * M * (M - 1))
    return skill - pair


def ssr(ens: EnsembleForecast, t: int, level=None) -> float:
    """Spread-skill ratio: weighted-mean member spread over the error of
    the ensemble mean. Calibrated ensembles score ~1."""
    M = ens.size
    if M < 2:
        raise ShapeMismatchError(f"need at least 2 members, got {M}")
    f, o = ens.at(t, level)
    w = ens.grid.weights[:, None]
    var = f.var(axis=0, ddof=1)
    spread = float(np.sqrt(np.mean(w * var)))
    skill = lrmse(f.mean(axis=0), o, ens.grid)
    if skill == 0.0:
        return float("inf") if spread > 0 else 0.0
    return spread / skill


def climatological_bias(pred, truth, grid: LatGrid) -> float:
    """Weighted RMSE between long-run time means of prediction and truth."""
    pred, truth = _check_traj(pred, truth)
    return lrmse(pred.mean(axis=0), truth.mean(axis=0), grid)


def lead_time_scores(forecasts, truth, grid: LatGrid, score=None, init_stride: int = 1) -> np.ndarray:
    """Per-lead-time scores averaged over forecast initialisations.

    ``forecasts[i, k]`` is the k-step-ahead field of the forecast started
    at truth index i * init_stride; it is compared against
    ``truth[i * init_stride + k + 1]``. Returns the (n_lead,) mean score
    per lead time over every initialisation that fits in ``truth``.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if forecasts.ndim != truth.ndim + 1:
        raise ShapeMismatchError(
            f"forecasts {forecasts.shape} must add one init axis over truth {truth.shape}"
        )
    score = lrmse if score is None else score
    n_init, n_lead = forecasts.shape[:2]
    out = np.zeros(n_lead)
    for k in range(n_lead):
        vals = []
        for i in range(n_init):
            target_idx = i * init_stride + k + 1
            if target_idx >= truth.shape[0]:
                break
            vals.append(score(forecasts[i, k], truth[target_idx], grid))
        if not vals:
            raise ShapeMismatchError(f"no initialisation reaches lead {k} inside the truth series")
        out[k] = float(np.mean(vals))
    return out


def write_metric_csv(series: dict, path) -> None:
    """One row per timestep per metric: columns (metric, t, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "t", "value"])
        for name in sorted(series):
            for t, value in enumerate(np.asarray(series[name]).ravel()):
                writer.writerow([name, t, repr(float(value))])


def write_metric_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
