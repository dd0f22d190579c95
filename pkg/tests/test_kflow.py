import numpy as np
import pytest

from sipbench import container
from sipbench.errors import ContainerFormatError, ScheduleError
from sipbench.kflow import (
    CflWarning,
    GridSpec,
    SolverConfig,
    generate_dataset,
    integrate_trajectory,
    load_dataset,
    sample_ic,
    save_dataset,
    step,
    to_physical,
    to_spectral,
)

GRID = GridSpec(n=32)


def quiet_cfg(**kw):
    base = dict(b_conv=0.0, lambda_drag=0.0, k_force=0, dt_solver=0.01, save_every=1, n_frames=3)
    base.update(kw)
    return SolverConfig(**base)


class TestGridSpec:
    def test_validation(self):
        with pytest.raises(ScheduleError):
            GridSpec(n=15)
        with pytest.raises(ScheduleError):
            GridSpec(n=14)
        with pytest.raises(ScheduleError):
            GridSpec(n=32, L=0.0)

    def test_dealias_cutoff(self):
        assert GridSpec(n=32).dealias_cutoff == 10
        assert GridSpec(n=16).dealias_cutoff == 5


class TestSolverConfig:
    def test_frame_spacing_default(self):
        cfg = SolverConfig()
        assert np.isclose(cfg.dt_frame, 0.2)

    def test_validation(self):
        with pytest.raises(ScheduleError):
            SolverConfig(nu=-1e-3)
        with pytest.raises(ScheduleError):
            SolverConfig(dt_solver=0.0)


class TestSampleIc:
    def test_same_seed_identical(self):
        a = sample_ic(GRID, 42)
        b = sample_ic(GRID, 42)
        assert np.array_equal(a, b)

    def test_zero_spatial_mean(self):
        for seed in range(5):
            field = sample_ic(GRID, seed)
            assert abs(field.mean()) < 1e-12

    def test_spectral_support_truncated(self):
        field = sample_ic(GRID, 3)
        coeffs = np.abs(to_spectral(field))
        mx = np.fft.fftfreq(32, 1 / 32).astype(int)[:, None]
        my = np.arange(17)[None, :]
        outside = (np.abs(mx) > 5) | (my > 5)
        assert coeffs[outside].max() < 1e-10 * coeffs.max()


class TestStep:
    def test_zero_state_no_forcing_fixed_point(self):
        cfg = quiet_cfg()
        w_hat = to_spectral(np.zeros((32, 32)))
        out = step(w_hat, cfg, GRID)
        assert np.array_equal(out, w_hat)

    def test_single_mode_viscous_decay(self):
        # cos(2 pi x / L) decays by exp(-nu (2 pi / L)^2 dt) per step
        cfg = quiet_cfg(nu=1e-2)
        X, _ = GRID.coords()
        w0 = np.cos(2 * np.pi * X / GRID.L)
        w_hat = to_spectral(w0)
        for _ in range(3):
            w_hat = step(w_hat, cfg, GRID)
        w = to_physical(w_hat, 32)
        factor = np.exp(-cfg.nu * (2 * np.pi / GRID.L) ** 2 * cfg.dt_solver * 3)
        rel = np.max(np.abs(w - w0 * factor)) / np.max(np.abs(w0 * factor))
        assert rel < 1e-6

    def test_forcing_only_linear_growth(self):
        # b = lambda = nu = 0: after m steps w = -k m dt cos(k 2 pi y / L)
        cfg = quiet_cfg(nu=0.0, k_force=4)
        _, Y = GRID.coords()
        w_hat = to_spectral(np.zeros((32, 32)))
        m = 9
        for _ in range(m):
            w_hat = step(w_hat, cfg, GRID)
        w = to_physical(w_hat, 32)
        expected = -4 * m * cfg.dt_solver * np.cos(4 * 2 * np.pi * Y / GRID.L)
        rel = np.max(np.abs(w - expected)) / np.max(np.abs(expected))
        assert rel < 1e-6

    def test_dealiased_modes_exactly_zero(self):
        cfg = SolverConfig(dt_solver=0.01)
        w_hat = to_spectral(sample_ic(GRID, 1))
        for _ in range(5):
            w_hat = step(w_hat, cfg, GRID)
        mx = np.fft.fftfreq(32, 1 / 32).astype(int)[:, None]
        my = np.arange(17)[None, :]
        above = (np.abs(mx) > GRID.dealias_cutoff) | (my > GRID.dealias_cutoff)
        assert np.all(w_hat[above] == 0.0)

    def test_inverse_transform_real(self):
        # rfft representation keeps fields exactly real by construction
        cfg = SolverConfig(dt_solver=0.01)
        w_hat = to_spectral(sample_ic(GRID, 2))
        for _ in range(3):
            w_hat = step(w_hat, cfg, GRID)
        w = to_physical(w_hat, 32)
        assert np.isrealobj(w)
        # round trip through the full complex transform leaves residue ~0
        resid = np.abs(np.imag(np.fft.ifft2(np.fft.fft2(w)))).max()
        assert resid < 1e-10

    def test_constant_mode_stays_zero_without_drag(self):
        cfg = SolverConfig(lambda_drag=0.0, dt_solver=0.01)
        w_hat = to_spectral(sample_ic(GRID, 4))
        for _ in range(100):
            w_hat = step(w_hat, cfg, GRID)
        assert abs(w_hat[0, 0]) / (32 * 32) < 1e-12

    def test_step_halving_refinement(self):
        ic = sample_ic(GRID, 7)
        fields = {}
        for dt, se in [(0.02, 10), (0.01, 20)]:
            cfg = SolverConfig(dt_solver=dt, save_every=se, n_frames=11)
            frames, failed = integrate_trajectory(GRID, cfg, ic)
            assert not failed
            fields[dt] = frames[10]
        rel = np.linalg.norm(fields[0.02] - fields[0.01]) / np.linalg.norm(fields[0.01])
        assert rel < 1e-3

    def test_matches_reference_integrator(self):
        # cross-check one frame against high-accuracy RK45 on the same RHS
        from scipy.integrate import solve_ivp
        from sipbench.kflow import _nonlinear, _operators

        grid = GridSpec(n=16)
        cfg = SolverConfig(dt_solver=0.01, save_every=20, n_frames=2)
        ic = sample_ic(grid, 5) * 0.3
        frames, _ = integrate_trajectory(grid, cfg, ic)
        ops = _operators(grid, cfg)

        k2 = -np.log(ops["E2"]) / (cfg.nu * cfg.dt_solver) if cfg.nu else None
        n = grid.n

        def rhs(_, y):
            w_hat = y.view(complex).reshape(n, n // 2 + 1)
            out = _nonlinear(w_hat, cfg, grid, ops, check_cfl=False)
            out = out - cfg.nu * k2 * w_hat
            return out.ravel().view(float)

        y0 = to_spectral(ic).ravel().view(float).copy()
        sol = solve_ivp(rhs, [0.0, cfg.dt_frame], y0, method="RK45", rtol=1e-10, atol=1e-12)
        ref = to_physical(sol.y[:, -1].view(complex).reshape(n, n // 2 + 1), n)
        rel = np.linalg.norm(frames[1] - ref) / np.linalg.norm(ref)
        assert rel < 1e-6

    def test_cfl_warning_channel(self):
        cfg = SolverConfig(dt_solver=2.0, save_every=1)
        w_hat = to_spectral(sample_ic(GRID, 8) * 5)
        with pytest.warns(CflWarning):
            step(w_hat, cfg, GRID)

    def test_forcing_above_cutoff_rejected(self):
        cfg = SolverConfig(k_force=11)
        w_hat = to_spectral(np.zeros((32, 32)))
        with pytest.raises(ScheduleError):
            step(w_hat, cfg, GRID)


class TestSimulateTrajectory:
    def test_returns_trajectory_with_provenance(self):
        from sipbench.kflow import simulate_trajectory

        cfg = SolverConfig(n_frames=3)
        traj = simulate_trajectory(GRID, cfg, 5)
        assert traj.frames.shape == (3, 32, 32)
        assert traj.dt_frame == pytest.approx(0.2)
        assert not traj.failed
        assert np.allclose(traj.frames[0], sample_ic(GRID, 5))


class TestGenerateDataset:
    def test_single_frame_contains_ic(self, tmp_path):
        cfg = SolverConfig(n_frames=1)
        ds = generate_dataset(1, GRID, cfg, base_seed=9)
        from sipbench.rng import seed_sequence

        ic = sample_ic(GRID, seed_sequence(9, "trajectory", 0))
        assert np.allclose(ds.frames[0, 0], ic, atol=1e-6)

    def test_same_seed_bit_identical_files(self, tmp_path):
        cfg = SolverConfig(n_frames=3)
        for name in ("a.sipb", "b.sipb"):
            ds = generate_dataset(2, GRID, cfg, base_seed=5)
            save_dataset(ds, tmp_path / name)
        assert (tmp_path / "a.sipb").read_bytes() == (tmp_path / "b.sipb").read_bytes()

    def test_unforced_viscous_enstrophy_decreases(self):
        cfg = SolverConfig(nu=0.5, k_force=0, lambda_drag=0.0, n_frames=8)
        ds = generate_dataset(1, GRID, cfg, base_seed=2)
        enstrophy = np.mean(np.asarray(ds.frames[0], dtype=float) ** 2, axis=(1, 2))
        assert np.all(np.diff(enstrophy) < 0)

    def test_roundtrip_through_container(self, tmp_path):
        cfg = SolverConfig(n_frames=4)
        ds = generate_dataset(3, GRID, cfg, base_seed=11)
        path = tmp_path / "ds.sipb"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.frames, ds.frames)
        assert loaded.grid == ds.grid
        assert loaded.config == ds.config
        assert loaded.base_seed == 11

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "x.sipb"
        container.write_container(path, {"kind": "other"}, np.zeros(4))
        with pytest.raises(ContainerFormatError):
            load_dataset(path)
