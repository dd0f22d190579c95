"""Distribution-distance heuristics over per-timestep sample sets.

Samples at each timestep are treated as draws from an unknown
distribution; distances between successive timesteps and between
Gaussian noise and future timesteps quantify how far apart those
distributions sit. High-dimensional samples are first reduced with a
distance-preserving Gaussian random projection.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import ShapeMismatchError
from .rng import substream, substream_seed

__all__ = [
    "ProjectedSampleSet",
    "DistanceCurves",
    "jl_project",
    "jl_dim",
    "sliced_wasserstein",
    "mmd",
    "c2st",
    "distance_curves",
    "write_distance_csv",
    "HEURISTICS",
]

HEURISTICS = ("sw", "mmd", "c2st")


def jl_dim(n: int, epsilon: float, d: int) -> int:
    """Reduced dimension ceil(8 ln n / eps^2), capped at the original d."""
    return min(math.ceil(8.0 * math.log(n) / epsilon**2), d)


@dataclass(frozen=True)
class ProjectedSampleSet:
    """n samples reduced to m dimensions with recorded distortion bound."""

    data: np.ndarray  # (n, m)
    epsilon: float
    seed: int
    source_dim: int
    timestep: int | None = None

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]


def jl_project(samples, epsilon: float = 0.2, seed=0, timestep=None) -> ProjectedSampleSet:
    """Gaussian random projection scaled by 1/sqrt(m).

    Entries of the projection matrix are i.i.d. standard normal; pairwise
    squared distances are preserved within (1 +- epsilon) with high
    probability at m = ceil(8 ln n / epsilon^2).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ShapeMismatchError(f"need (n >= 2, d) samples, got {samples.shape}")
    n, d = samples.shape
    m = jl_dim(n, epsilon, d)
    proj = substream(seed, "jl").standard_normal((m, d)) / math.sqrt(m)
    return ProjectedSampleSet(
        data=samples @ proj.T,
        epsilon=epsilon,
        seed=seed if isinstance(seed, int) else 0,
        source_dim=d,
        timestep=timestep,
    )


def sliced_wasserstein(A, B, n_proj: int = 128, seed=0) -> float:
    """Mean 1D transport cost over random unit directions.

    Sample counts are equalised by subsampling the larger set (without
    replacement, from the seeded stream) before directions are drawn.
    """
    if n_proj < 1:
        raise ShapeMismatchError(f"n_proj must be >= 1, got {n_proj}")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(f"need (n, m) sample sets with equal m: {A.shape} vs {B.shape}")
    rng = substream(seed, "sw")
    n = min(A.shape[0], B.shape[0])
    if A.shape[0] > n:
        A = A[rng.choice(A.shape[0], size=n, replace=False)]
    if B.shape[0] > n:
        B = B[rng.choice(B.shape[0], size=n, replace=False)]
    dirs = rng.standard_normal((n_proj, A.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(A @ dirs.T, axis=0)
    pb = np.sort(B @ dirs.T, axis=0)
    return float(np.mean(np.abs(pa - pb)))


def _sq_dists(X, Y):
    xx = np.sum(X * X, axis=1)[:, None]
    yy = np.sum(Y * Y, axis=1)[None, :]
    return np.maximum(xx + yy - 2.0 * (X @ Y.T), 0.0)


def mmd(A, B, bandwidth="median") -> float:
    """Unbiased Gaussian-kernel squared discrepancy estimator.

    Bandwidth policy "median" uses the median pairwise Euclidean distance
    of the pooled sample; a float fixes it directly. Values fluctuate
    below zero under the null, which is expected for the unbiased form.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(f"need (n, m) sample sets with equal m: {A.shape} vs {B.shape}")
    na, nb = A.shape[0], B.shape[0]
    if na < 2 or nb < 2:
        raise ShapeMismatchError("unbiased estimator needs at least 2 samples per set")
    daa = _sq_dists(A, A)
    dbb = _sq_dists(B, B)
    dab = _sq_dists(A, B)
    if bandwidth == "median":
        pooled = np.concatenate(
            [daa[np.triu_indices(na, 1)], dbb[np.triu_indices(nb, 1)], dab.ravel()]
        )
        h = math.sqrt(float(np.median(pooled)))
        h = max(h, 1e-12)
    else:
        h = float(bandwidth)
        if h <= 0:
            raise ValueError(f"bandwidth must be positive, got {h}")
    gamma = 1.0 / (2.0 * h * h)
    kaa = np.exp(-gamma * daa)
    kbb = np.exp(-gamma * dbb)
    kab = np.exp(-gamma * dab)
    term_a = (kaa.sum() - na) / (na * (na - 1))
    term_b = (kbb.sum() - nb) / (nb * (nb - 1))
    return float(term_a + term_b - 2.0 * kab.mean())


def _logistic_fit(X, y, reg: float = 1e-3):
    """L2-regularised linear logistic fit; deterministic quasi-Newton solve."""
    n, d = X.shape
    w0 = np.zeros(d + 1)

    def objective(wb):
        w, b = wb[:-1], wb[-1]
        s = X @ w + b
        margins = y * s
        loss = np.mean(np.logaddexp(0.0, -margins)) + 0.5 * reg * (w @ w)
        coef = -y * expit(-margins) / n
        grad_w = X.T @ coef + reg * w
        grad_b = coef.sum()
        return loss, np.concatenate([grad_w, [grad_b]])

    res = minimize(objective, w0, jac=True, method="L-BFGS-B", options={"maxiter": 300})
    return res.x[:-1], res.x[-1]


def c2st(A, B, folds: int = 5, seed=0) -> float:
    """Cross-validated held-out accuracy of a linear classifier on the
    pooled labelled samples; 0.5 means indistinguishable sets.

    The pair is canonicalised by content hash before fitting, so the
    result is bit-identical under argument swap.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(f"need (n, m) sample sets with equal m: {A.shape} vs {B.shape}")
    if A.shape[0] < folds or B.shape[0] < folds:
        raise ShapeMismatchError(
            f"need at least {folds} samples per class, got {A.shape[0]} and {B.shape[0]}"
        )
    if hashlib.sha256(B.tobytes()).digest() < hashlib.sha256(A.tobytes()).digest():
        A, B = B, A
    rng = substream(seed, "c2st")
    perm_a = rng.permutation(A.shape[0])
    perm_b = rng.permutation(B.shape[0])
    accs = []
    for f in range(folds):
        test_a = perm_a[f::folds]
        test_b = perm_b[f::folds]
        train_a = np.setdiff1d(perm_a, test_a, assume_unique=True)
        train_b = np.setdiff1d(perm_b, test_b, assume_unique=True)
        Xtr = np.vstack([A[train_a], B[train_b]])
        ytr = np.concatenate([-np.ones(train_a.size), np.ones(train_b.size)])
        Xte = np.vstack([A[test_a], B[test_b]])
        yte = np.concatenate([-np.ones(test_a.size), np.ones(test_b.size)])
        mu = Xtr.mean(axis=0)
        sd = Xtr.std(axis=0)
        sd[sd < 1e-12] = 1.0
        w, b = _logistic_fit((Xtr - mu) / sd, ytr)
        scores = ((Xte - mu) / sd) @ w + b
        accs.append(np.mean(np.sign(scores) == yte))
    return float(np.mean(accs))


_HEURISTIC_FNS = {
    "sw": lambda A, B, seed, n_proj: sliced_wasserstein(A, B, n_proj=n_proj, seed=seed),
    "mmd": lambda A, B, seed, n_proj: mmd(A, B),
    "c2st": lambda A, B, seed, n_proj: c2st(A, B, seed=seed),
}


@dataclass(frozen=True)
class DistanceCurves:
    """Per-timestep fold means/stds for the two comparisons."""

    heuristic: str
    t: np.ndarray
    successive_mean: np.ndarray
    successive_std: np.ndarray
    noise_mean: np.ndarray
    noise_std: np.ndarray


def _standardize_timestep(samples: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per timestep (single channel), so the
    Gaussian comparison is made against matched scale."""
    mu = samples.mean()
    sd = samples.std()
    return (samples - mu) / (sd if sd > 1e-12 else 1.0)


def _content_order(frames: np.ndarray) -> np.ndarray:
    """Trajectory order by content hash: fold assignment is then invariant
    to how trajectories happen to be ordered in the file."""
    keys = [hashlib.sha256(np.ascontiguousarray(frames[i]).tobytes()).hexdigest() for i in range(frames.shape[0])]
    return np.argsort(keys, kind="stable")


def _project_pair(A, B, epsilon, seed):
    """Joint projection of two sets when the reduced dimension actually
    reduces; otherwise the originals are returned (the distortion bound
    is vacuous at m >= d)."""
    pooled = np.vstack([A, B])
    if jl_dim(pooled.shape[0], epsilon, pooled.shape[1]) >= pooled.shape[1]:
        return A, B
    proj = jl_project(pooled, epsilon=epsilon, seed=seed)
    return proj.data[: A.shape[0]], proj.data[A.shape[0] :]


def distance_curves(
    frames,
    heuristic: str,
    epsilon: float = 0.2,
    seed: int = 0,
    folds: int = 5,
    n_proj: int = 128,
) -> DistanceCurves:
    """Distance between successive timesteps and between Gaussian noise
    and future timesteps, cross-validated over sample folds.

    ``frames`` is (n_traj, n_t, ny, nx); each timestep's trajectory slice
    is one sample. Per fold, 80% of the samples (all but the held-out
    fold) form the empirical distribution; means and standard deviations
    across folds are reported per timestep.
    """
    if heuristic not in _HEURISTIC_FNS:
        raise ShapeMismatchError(f"unknown heuristic {heuristic!r}, expected one of {HEURISTICS}")
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 4:
        raise ShapeMismatchError(f"expected (n_traj, n_t, ny, nx), got {frames.shape}")
    n_traj, n_t = frames.shape[:2]
    if n_traj < 5 * folds:
        raise ShapeMismatchError(
            f"need at least {5 * folds} trajectories for {folds}-fold curves, got {n_traj}"
        )
    order = _content_order(frames)
    flat = frames[order].reshape(n_traj, n_t, -1)
    d = flat.shape[-1]
    std_by_t = [_standardize_timestep(flat[:, t]) for t in range(n_t)]
    fn = _HEURISTIC_FNS[heuristic]

    succ = np.zeros((folds, n_t - 1))
    noise = np.zeros((folds, n_t - 1))
    for f in range(folds):
        keep = np.ones(n_traj, dtype=bool)
        keep[f::folds] = False
        for t in range(n_t - 1):
            A = std_by_t[t][keep]
            B = std_by_t[t + 1][keep]
            Z = substream(seed, "noise", f, t).standard_normal((A.shape[0], d))
            pa, pb = _project_pair(A, B, epsilon, substream_seed(seed, "proj-pair", f, t))
            succ[f, t] = fn(pa, pb, substream_seed(seed, "h-pair", f, t), n_proj)
            za, zb = _project_pair(Z, B, epsilon, substream_seed(seed, "proj-noise", f, t))
            noise[f, t] = fn(za, zb, substream_seed(seed, "h-noise", f, t), n_proj)
    return DistanceCurves(
        heuristic=heuristic,
        t=np.arange(n_t - 1),
        successive_mean=succ.mean(axis=0),
        successive_std=succ.std(axis=0),
        noise_mean=noise.mean(axis=0),
        noise_std=noise.std(axis=0),
    )


def write_distance_csv(curves: DistanceCurves, path) -> None:
    """Columns (t, mean, std, heuristic, comparison)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "mean", "std", "heuristic", "comparison"])
        for i, t in enumerate(curves.t):
            writer.writerow(
                [int(t), repr(float(curves.successive_mean[i])), repr(float(curves.successive_std[i])), curves.heuristic, "successive"]
            )
        for i, t in enumerate(curves.t):
            writer.writerow(
                [int(t), repr(float(curves.noise_mean[i])), repr(float(curves.noise_std[i])), curves.heuristic, "noise"]
            )
