"""Pseudo-spectral solver and dataset generator for 2D Kolmogorov flow.

Vorticity form on a doubly periodic square box:

    dw/dt = -b (u . grad w) + nu laplacian(w) + lam w - k cos(k 2 pi y / L)

with the advecting velocity recovered from the streamfunction
(u, v) = (d/dy, -d/dx) inv_laplacian(-w). Time stepping is
integrating-factor RK4: diffusion is integrated exactly, the quadratic
convection term is evaluated pseudo-spectrally with 2/3-rule dealiasing,
and drag plus forcing ride in the explicit stage. State is held as the
real-to-complex transform of w, so inverse transforms are real by
construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import container
from .errors import ContainerFormatError, ScheduleError
from .rng import as_rng, seed_sequence

__all__ = [
    "GridSpec",
    "SolverConfig",
    "Trajectory",
    "Dataset",
    "CflWarning",
    "sample_ic",
    "step",
    "integrate_trajectory",
    "simulate_trajectory",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "to_spectral",
    "to_physical",
]

IC_MAX_MODE = 5


class CflWarning(UserWarning):
    """Advective CFL heuristic exceeded one."""


@dataclass(frozen=True)
class GridSpec:
    """Square periodic grid: n points per side on [0, L)^2."""

    n: int = 32
    L: float = 20.0

    def __post_init__(self):
        if self.n < 16 or self.n % 2 != 0:
            raise ScheduleError(f"grid n must be even and >= 16, got {self.n}")
        if self.L <= 0:
            raise ScheduleError(f"domain length must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def dealias_cutoff(self) -> int:
        return self.n // 3

    def coords(self):
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, indexing="ij")  # axis 0 = x, axis 1 = y


@dataclass(frozen=True)
class SolverConfig:
    """Physical coefficients and stepping/saving cadence.

    Defaults keep save_every * dt_solver = 0.2 time units per stored
    frame. By convention lambda_drag < 0 dissipates; k_force = 0 disables
    forcing (the forcing amplitude equals its wavenumber index).
    """

    nu: float = 1e-2
    b_conv: float = 0.2
    lambda_drag: float = -0.2
    k_force: int = 4
    dt_solver: float = 0.02
    save_every: int = 10
    n_frames: int = 100

    def __post_init__(self):
        if self.nu < 0:
            raise ScheduleError(f"viscosity must be >= 0, got {self.nu}")
        if self.dt_solver <= 0:
            raise ScheduleError(f"dt_solver must be positive, got {self.dt_solver}")
        if self.save_every < 1 or self.n_frames < 1:
            raise ScheduleError("save_every and n_frames must be >= 1")
        if self.k_force < 0:
            raise ScheduleError(f"k_force must be >= 0, got {self.k_force}")

    @property
    def dt_frame(self) -> float:
        return self.save_every * self.dt_solver


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered vorticity frames with provenance."""

    frames: np.ndarray  # (n_frames, n, n)
    dt_frame: float
    seed: tuple
    config: SolverConfig
    failed: bool = False


@dataclass(frozen=True)
class Dataset:
    """Stack of trajectories sharing one grid/config."""

    frames: np.ndarray  # (n_traj, n_frames, n, n)
    grid: GridSpec
    config: SolverConfig
    base_seed: int
    failed: tuple = ()

    @property
    def n_traj(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]

    @property
    def dt_frame(self) -> float:
        return self.config.dt_frame


@lru_cache(maxsize=16)
def _operators(grid: GridSpec, cfg: SolverConfig):
    n = grid.n
    two_pi_L = 2.0 * np.pi / grid.L
    mx = np.fft.fftfreq(n, 1.0 / n).astype(int)[:, None]  # (n, 1)
    my = np.arange(n // 2 + 1)[None, :]  # (1, n//2+1)
    kx = two_pi_L * mx
    ky = two_pi_L * my
    k2 = kx * kx + ky * ky
    inv_k2 = np.zeros_like(k2)
    nonzero = k2 > 0
    inv_k2[nonzero] = 1.0 / k2[nonzero]
    cutoff = grid.dealias_cutoff
    mask = (np.abs(mx) <= cutoff) & (my <= cutoff)
    if cfg.k_force > cutoff:
        raise ScheduleError(
            f"forcing wavenumber {cfg.k_force} above dealias cutoff {cutoff} for n={n}"
        )
    _, Y = grid.coords()
    forcing = -cfg.k_force * np.cos(cfg.k_force * two_pi_L * Y)
    forcing_hat = np.fft.rfft2(forcing) * mask
    half = cfg.dt_solver / 2.0
    E = np.exp(-cfg.nu * k2 * half)
    E2 = E * E
    return {
        "ikx": 1j * kx,
        "iky": 1j * ky,
        "inv_k2": inv_k2,
        "mask": mask,
        "forcing_hat": forcing_hat,
        "E": E,
        "E2": E2,
    }


def to_spectral(omega: np.ndarray) -> np.ndarray:
    return np.fft.rfft2(np.asarray(omega, dtype=float))


def to_physical(omega_hat: np.ndarray, n: int) -> np.ndarray:
    return np.fft.irfft2(omega_hat, s=(n, n))


def _nonlinear(w_hat, cfg: SolverConfig, grid: GridSpec, ops, check_cfl: bool):
    """Explicit terms: dealiased convection, drag, forcing."""
    n = grid.n
    w_hat = w_hat * ops["mask"]
    out = cfg.lambda_drag * w_hat + ops["forcing_hat"]
    if cfg.b_conv != 0.0:
        q_hat = -w_hat * ops["inv_k2"]  # inverse Laplacian of w
        u = np.fft.irfft2(-ops["iky"] * q_hat, s=(n, n))
        v = np.fft.irfft2(ops["ikx"] * q_hat, s=(n, n))
        wx = np.fft.irfft2(ops["ikx"] * w_hat, s=(n, n))
        wy = np.fft.irfft2(ops["iky"] * w_hat, s=(n, n))
        if check_cfl:
            umax = max(np.max(np.abs(u)), np.max(np.abs(v)))
            if umax * cfg.dt_solver / grid.dx > 1.0:
                warnings.warn(
                    f"advective CFL {umax * cfg.dt_solver / grid.dx:.2f} > 1", CflWarning
                )
        out = out - cfg.b_conv * np.fft.rfft2(u * wx + v * wy) * ops["mask"]
    return out


def step(w_hat: np.ndarray, cfg: SolverConfig, grid: GridSpec) -> np.ndarray:
    """One integrating-factor RK4 step in spectral space.

    Returns dealiased coefficients; modes above the 2/3 cutoff are
    exactly zero on output.
    """
    ops = _operators(grid, cfg)
    E, E2 = ops["E"], ops["E2"]
    dt = cfg.dt_solver
    n1 = _nonlinear(w_hat, cfg, grid, ops, check_cfl=True)
    n2 = _nonlinear(E * (w_hat + 0.5 * dt * n1), cfg, grid, ops, check_cfl=False)
    n3 = _nonlinear(E * w_hat + 0.5 * dt * n2, cfg, grid, ops, check_cfl=False)
    n4 = _nonlinear(E2 * w_hat + dt * E * n3, cfg, grid, ops, check_cfl=False)
    out = E2 * w_hat + (dt / 6.0) * (E2 * n1 + 2.0 * E * (n2 + n3) + n4)
    return out * ops["mask"]


def sample_ic(grid: GridSpec, seed) -> np.ndarray:
    """Random truncated Fourier vorticity field.

    One plane wave a sin(2 pi (kx x + ky y) / L + phi) per direction pair
    with max(|kx|, |ky|) <= 5 (half-plane enumeration, no redundant
    conjugate modes), amplitudes uniform on [-1, 1] and phases uniform on
    [0, 2 pi]. The field has zero spatial mean by construction.
    """
    rng = as_rng(seed)
    X, Y = grid.coords()
    two_pi_L = 2.0 * np.pi / grid.L
    modes = []
    for kx in range(0, IC_MAX_MODE + 1):
        ky_lo = 1 if kx == 0 else -IC_MAX_MODE
        for ky in range(ky_lo, IC_MAX_MODE + 1):
            if kx == 0 and ky <= 0:
                continue
            modes.append((kx, ky))
    amps = rng.uniform(-1.0, 1.0, size=len(modes))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(modes))
    field = np.zeros_like(X)
    for (kx, ky), a, phi in zip(modes, amps, phases):
        field += a * np.sin(two_pi_L * (kx * X + ky * Y) + phi)
    return field


def integrate_trajectory(grid: GridSpec, cfg: SolverConfig, ic: np.ndarray) -> tuple[np.ndarray, bool]:
    """Run the solver from ``ic``; returns (frames, failed).

    Frame 0 is the initial condition. On blow-up the remaining frames are
    zero-filled and the failed flag is set.
    """
    frames = np.zeros((cfg.n_frames, grid.n, grid.n))
    frames[0] = ic
    w_hat = to_spectral(ic)
    for frame in range(1, cfg.n_frames):
        for _ in range(cfg.save_every):
            w_hat = step(w_hat, cfg, grid)
        field = to_physical(w_hat, grid.n)
        if not np.isfinite(field).all():
            return frames, True
        frames[frame] = field
    return frames, False


def simulate_trajectory(grid: GridSpec, cfg: SolverConfig, seed) -> Trajectory:
    """One seeded trajectory from a random truncated-Fourier start."""
    ic = sample_ic(grid, seed)
    frames, failed = integrate_trajectory(grid, cfg, ic)
    seed_tag = seed if isinstance(seed, (int, tuple)) else str(seed)
    return Trajectory(
        frames=frames,
        dt_frame=cfg.dt_frame,
        seed=seed_tag if isinstance(seed_tag, tuple) else (seed_tag,),
        config=cfg,
        failed=failed,
    )


def generate_dataset(n_traj: int, grid: GridSpec, cfg: SolverConfig, base_seed: int) -> Dataset:
    """n_traj independent trajectories; trajectory i uses the substream
    (base_seed, "trajectory", i) for its initial condition.

    Solver blow-ups do not abort generation: the trajectory is recorded
    as failed (zero-filled past the blow-up) and listed in the summary.
    """
    if n_traj < 1:
        raise ScheduleError(f"n_traj must be >= 1, got {n_traj}")
    frames = np.zeros((n_traj, cfg.n_frames, grid.n, grid.n), dtype=np.float32)
    failed = []
    for i in range(n_traj):
        ic = sample_ic(grid, seed_sequence(base_seed, "trajectory", i))
        traj_frames, bad = integrate_trajectory(grid, cfg, ic)
        frames[i] = traj_frames.astype(np.float32)
        if bad:
            failed.append(i)
    return Dataset(frames=frames, grid=grid, config=cfg, base_seed=base_seed, failed=tuple(failed))


DATASET_KIND = "dataset"


def save_dataset(ds: Dataset, path) -> None:
    cfg = ds.config
    header = {
        "kind": DATASET_KIND,
        "field_names": ["vorticity"],
        "shape": list(ds.frames.shape),
        "frame_dt": cfg.dt_frame,
        "grid": {"n": ds.grid.n, "L": ds.grid.L},
        "config": {
            "nu": cfg.nu,
            "b_conv": cfg.b_conv,
            "lambda_drag": cfg.lambda_drag,
            "k_force": cfg.k_force,
            "dt_solver": cfg.dt_solver,
            "save_every": cfg.save_every,
            "n_frames": cfg.n_frames,
        },
        "seeds": {"base_seed": ds.base_seed, "per_trajectory": "substream(base_seed, 'trajectory', i)"},
        "failed": list(ds.failed),
    }
    container.write_container(path, header, ds.frames)


def load_dataset(path) -> Dataset:
    header, payload = container.read_container(path)
    if header.get("kind") != DATASET_KIND:
        raise ContainerFormatError(f"{path}: not a dataset container")
    shape = tuple(header["shape"])
    frames = payload.reshape(shape)
    grid = GridSpec(n=int(header["grid"]["n"]), L=float(header["grid"]["L"]))
    cfg = SolverConfig(**header["config"])
    return Dataset(
        frames=frames,
        grid=grid,
        config=cfg,
        base_seed=int(header["seeds"]["base_seed"]),
        failed=tuple(header.get("failed", [])),
    )


def synthetic_dataset(frames: np.ndarray, dt_frame: float = 0.2, base_seed: int = 0) -> Dataset:
    """Wrap an arbitrary (n_traj, n_frames, n, n) array as a Dataset.

    Intended for oracle-constructed data in tests and experiments; the
    grid/config metadata record the array shape and frame spacing only.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[2] != frames.shape[3]:
        raise ScheduleError(f"expected (n_traj, n_frames, n, n), got {frames.shape}")
    grid = GridSpec(n=frames.shape[2])
    save_every = max(int(round(dt_frame / 0.01)), 1)
    cfg = SolverConfig(save_every=save_every, dt_solver=dt_frame / save_every, n_frames=frames.shape[1])
    return Dataset(frames=frames, grid=grid, config=cfg, base_seed=base_seed)
