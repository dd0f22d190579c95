import numpy as np
import pytest

from sipbench.errors import (
    IncompatibleHeadError,
    RolloutDivergedError,
    ScheduleError,
)
from sipbench.process import (
    DiffusionSchedule,
    InterpolantSchedule,
    build_edm_schedule,
    build_linear_schedule,
)
from sipbench.rng import substream
from sipbench.samplers import (
    SamplerSpec,
    rollout,
    run_sampler,
    sample_ddim,
    sample_ddpm,
    sample_direct,
    sample_edm,
    sample_fm,
    sample_si_em,
    sample_si_euler,
    sample_tsm,
)

SHAPE = (4, 4)


def oracle(fn, head=None):
    if head is not None:
        fn.head = head
    return fn


class TestSamplerSpec:
    def test_valid(self):
        SamplerSpec(framework="SI-E", steps=5)

    def test_unknown_framework(self):
        with pytest.raises(ScheduleError):
            SamplerSpec(framework="XYZ")

    def test_tsm_forces_single_step(self):
        with pytest.raises(ScheduleError):
            SamplerSpec(framework="TSM", steps=3)

    def test_si_em_needs_noise_and_steps(self):
        with pytest.raises(ScheduleError):
            SamplerSpec(framework="SI-EM", steps=5, sigma=0.0)
        with pytest.raises(ScheduleError):
            SamplerSpec(framework="SI-EM", steps=1, sigma=1.0)

    def test_eta_range(self):
        with pytest.raises(ScheduleError):
            SamplerSpec(framework="DDIM", steps=2, eta=1.5)


class TestDdpm:
    def test_single_step_chain_deterministic_denoise(self):
        d = DiffusionSchedule(betas=np.array([0.2]))
        eps0 = oracle(lambda x, c, t: np.zeros_like(x))
        cond = np.zeros(SHAPE)
        out1 = sample_ddpm(eps0, d, cond, seed=3)
        out2 = sample_ddpm(eps0, d, cond, seed=3)
        assert np.array_equal(out1, out2)
        init = substream(3, "init").standard_normal(SHAPE)
        assert np.allclose(out1, init / np.sqrt(d.alphas[0]))

    def test_zero_eps_matches_scalar_recurrence(self):
        # five-line recurrence replaying the same seeded draws
        d = build_linear_schedule(7, 0.05, 0.3)
        eps0 = oracle(lambda x, c, t: np.zeros_like(x))
        seed = 11
        out = sample_ddpm(eps0, d, np.zeros(SHAPE), seed=seed)
        x = substream(seed, "init").standard_normal(SHAPE)
        noise = substream(seed, "steps")
        for t in range(d.T - 1, -1, -1):
            x = x / np.sqrt(d.alphas[t])
            if t > 0:
                x = x + np.sqrt(d.betas[t]) * noise.standard_normal(SHAPE)
        assert np.allclose(out, x, atol=1e-12)

    def test_fixed_seed_bit_identical(self):
        d = build_linear_schedule(5)
        rng = np.random.default_rng(0)
        W = rng.standard_normal((16, 16)) * 0.1
        net = oracle(lambda x, c, t: (x.reshape(-1) @ W).reshape(x.shape))
        a = sample_ddpm(net, d, np.zeros(SHAPE), seed=7)
        b = sample_ddpm(net, d, np.zeros(SHAPE), seed=7)
        assert np.array_equal(a, b)

    def test_head_check(self):
        d = build_linear_schedule(5)
        bad = oracle(lambda x, c, t: x, head="velocity")
        with pytest.raises(IncompatibleHeadError):
            sample_ddpm(bad, d, np.zeros(SHAPE), seed=0)


class TestDdim:
    def test_planted_pair_recovery(self):
        # oracle returns the exact noise used to build x_T from a known x0
        d = build_linear_schedule(50, 1e-3, 0.1)
        rng = np.random.default_rng(5)
        x0 = rng.standard_normal(SHAPE)
        eps = rng.standard_normal(SHAPE)
        abar = d.alphabar[-1]
        x_T = np.sqrt(abar) * x0 + np.sqrt(1 - abar) * eps
        net = oracle(lambda x, c, t: eps)
        out = sample_ddim(net, d, np.zeros(SHAPE), steps=10, eta=0.0, seed=0, x_init=x_T)
        assert np.max(np.abs(out - x0)) < 1e-5

    def test_eta_zero_seed_irrelevant(self):
        d = build_linear_schedule(20)
        rng = np.random.default_rng(1)
        W = rng.standard_normal((16, 16)) * 0.05
        net = oracle(lambda x, c, t: (x.reshape(-1) @ W).reshape(x.shape))
        x_init = rng.standard_normal(SHAPE)
        a = sample_ddim(net, d, np.zeros(SHAPE), steps=5, eta=0.0, seed=1, x_init=x_init)
        b = sample_ddim(net, d, np.zeros(SHAPE), steps=5, eta=0.0, seed=999, x_init=x_init)
        assert np.array_equal(a, b)

    def test_one_step_is_tweedie(self):
        d = build_linear_schedule(30)
        rng = np.random.default_rng(2)
        eps_val = rng.standard_normal(SHAPE)
        net = oracle(lambda x, c, t: eps_val)
        x_init = rng.standard_normal(SHAPE)
        ddim_out = sample_ddim(net, d, np.zeros(SHAPE), steps=1, eta=0.0, seed=0, x_init=x_init)
        tsm_out = sample_tsm(net, d, np.zeros(SHAPE), seed=0, x_init=x_init)
        assert np.array_equal(ddim_out, tsm_out)

    def test_full_schedule_eta1_matches_ddpm_transition_mean(self):
        # exact per-step mean identity given the same eps and x_t
        d = build_linear_schedule(25, 1e-3, 0.15)
        rng = np.random.default_rng(3)
        for t in range(1, d.T):
            x = rng.standard_normal(SHAPE)
            eps = rng.standard_normal(SHAPE)
            abar_t, abar_prev = d.alphabar[t], d.alphabar[t - 1]
            ddpm_mean = (x - (d.betas[t] / np.sqrt(1 - abar_t)) * eps) / np.sqrt(d.alphas[t])
            sig2 = ((1 - abar_prev) / (1 - abar_t)) * (1 - abar_t / abar_prev)
            x0_hat = (x - np.sqrt(1 - abar_t) * eps) / np.sqrt(abar_t)
            ddim_mean = np.sqrt(abar_prev) * x0_hat + np.sqrt(1 - abar_prev - sig2) * eps
            assert np.allclose(ddpm_mean, ddim_mean, atol=1e-12)

    def test_steps_exceeding_schedule_rejected(self):
        d = build_linear_schedule(5)
        net = oracle(lambda x, c, t: np.zeros_like(x))
        with pytest.raises(ScheduleError):
            sample_ddim(net, d, np.zeros(SHAPE), steps=6, eta=0.0, seed=0)

    def test_subschedule_strictly_decreasing(self):
        from sipbench.samplers import _ddim_subschedule

        for T, steps in [(100, 10), (100, 100), (7, 3), (30, 1)]:
            taus = _ddim_subschedule(T, steps)
            assert taus[0] == T - 1
            if steps > 1:
                assert taus[-1] == 0
                assert np.all(np.diff(taus) < 0)


class TestEdm:
    def test_identity_denoiser_keeps_initial_draw(self):
        e = build_edm_schedule(8)
        net = oracle(lambda x, c, t: x)
        out = sample_edm(net, e, np.zeros(SHAPE), seed=4)
        init = e.sigma_levels[0] * substream(4, "init").standard_normal(SHAPE)
        assert np.allclose(out, init)

    def test_zero_denoiser_telescopes_to_zero(self):
        e = build_edm_schedule(6)
        net = oracle(lambda x, c, t: np.zeros_like(x))
        out = sample_edm(net, e, np.zeros(SHAPE), seed=4)
        assert np.allclose(out, 0.0)

    def test_zero_denoiser_matches_product_recurrence(self):
        e = build_edm_schedule(5, 0.01, 2.0, rho=3.0)
        net = oracle(lambda x, c, t: np.zeros_like(x))
        x_init = np.full(SHAPE, 3.0)
        out = sample_edm(net, e, np.zeros(SHAPE), seed=0, x_init=x_init)
        levels = e.sigma_levels
        expected = x_init.copy()
        for i in range(len(levels) - 1):
            expected = expected * (levels[i + 1] / levels[i])
        assert np.array_equal(out, expected)

    def test_single_level_returns_denoiser_prediction_exactly(self):
        e = build_edm_schedule(1)
        pred = np.random.default_rng(6).standard_normal(SHAPE)
        net = oracle(lambda x, c, t: pred)
        out = sample_edm(net, e, np.zeros(SHAPE), seed=0)
        assert np.array_equal(out, pred)


class TestTsm:
    def test_planted_pair_exact_recovery(self):
        d = build_linear_schedule(40, 1e-3, 0.2)
        rng = np.random.default_rng(7)
        x0 = rng.standard_normal(SHAPE)
        eps = rng.standard_normal(SHAPE)
        abar = d.alphabar[-1]
        x_t = np.sqrt(abar) * x0 + np.sqrt(1 - abar) * eps
        net = oracle(lambda x, c, t: eps)
        out = sample_tsm(net, d, np.zeros(SHAPE), seed=0, x_init=x_t)
        assert np.allclose(out, x0, atol=1e-12)

    def test_no_noise_step_passes_through(self):
        d = DiffusionSchedule(betas=np.array([1e-18, 0.5]), alphabar=np.array([1.0, 0.5]))
        net = oracle(lambda x, c, t: np.zeros_like(x))
        x_t = np.random.default_rng(8).standard_normal(SHAPE)
        out = sample_tsm(net, d, np.zeros(SHAPE), seed=0, trunc_step=0, x_init=x_t)
        assert np.allclose(out, x_t)

    def test_deterministic_given_seed(self):
        d = build_linear_schedule(10)
        net = oracle(lambda x, c, t: 0.1 * x)
        a = sample_tsm(net, d, np.zeros(SHAPE), seed=5)
        b = sample_tsm(net, d, np.zeros(SHAPE), seed=5)
        assert np.array_equal(a, b)


class TestFm:
    def test_constant_velocity_exact(self):
        c = np.full(SHAPE, 1.7)
        net = oracle(lambda x, cond, t: c)
        out = sample_fm(net, np.zeros(SHAPE), steps=13, seed=9)
        init = substream(9, "init").standard_normal(SHAPE)
        assert np.allclose(out, init + c, atol=1e-12)

    def test_linear_ode_closed_form(self):
        net = oracle(lambda x, cond, t: -x)
        z = np.random.default_rng(10).standard_normal(SHAPE)
        out = sample_fm(net, np.zeros(SHAPE), steps=1000, seed=0, x_init=z)
        rel = np.max(np.abs(out - z * np.exp(-1.0))) / np.max(np.abs(z * np.exp(-1.0)))
        assert rel < 2e-3

    def test_single_step(self):
        net = oracle(lambda x, cond, t: x + t)
        z = np.random.default_rng(11).standard_normal(SHAPE)
        out = sample_fm(net, np.zeros(SHAPE), steps=1, seed=0, x_init=z)
        assert np.allclose(out, 2 * z)

    def test_euler_global_error_halves_with_step_doubling(self):
        net = oracle(lambda x, cond, t: -x)
        z = np.ones(SHAPE)
        exact = np.exp(-1.0)
        errs = []
        for steps in (64, 128):
            out = sample_fm(net, np.zeros(SHAPE), steps=steps, seed=0, x_init=z)
            errs.append(abs(out[0, 0] - exact))
        ratio = errs[0] / errs[1]
        assert 1.7 < ratio < 2.3


class TestSiEuler:
    def test_constant_drift_exact_for_any_step_count(self):
        s = InterpolantSchedule(sigma=1.0)
        rng = np.random.default_rng(12)
        x0 = rng.standard_normal(SHAPE)
        x1 = rng.standard_normal(SHAPE)
        net = oracle(lambda x, cond, t: x1 - cond)
        for steps in (1, 3, 10):
            out = sample_si_euler(net, s, x0, steps=steps)
            assert np.allclose(out, x1, atol=1e-12)

    def test_hand_euler_linear_in_time_drift(self):
        # b(t) = t from 0: one step -> 0, two steps -> 0.25
        s = InterpolantSchedule(sigma=0.0)
        net = oracle(lambda x, cond, t: np.full_like(x, t))
        x0 = np.zeros(SHAPE)
        assert np.allclose(sample_si_euler(net, s, x0, steps=1), 0.0)
        assert np.allclose(sample_si_euler(net, s, x0, steps=2), 0.25)

    def test_condition_pinned_to_start(self):
        s = InterpolantSchedule(sigma=0.0)
        seen = []
        def net(x, cond, t):
            seen.append(cond.copy())
            return np.zeros_like(x)
        x0 = np.random.default_rng(13).standard_normal(SHAPE)
        sample_si_euler(net, s, x0, steps=4)
        assert all(np.array_equal(c, x0) for c in seen)


class TestSiEm:
    def test_vanishing_noise_matches_euler(self):
        rng = np.random.default_rng(14)
        W = rng.standard_normal((16, 16)) * 0.1
        net = oracle(lambda x, c, t: (np.tanh(x).reshape(-1) @ W).reshape(x.shape))
        x0 = rng.standard_normal(SHAPE)
        em = sample_si_em(net, InterpolantSchedule(sigma=1e-12), x0, steps=8, seed=2)
        euler = sample_si_euler(net, InterpolantSchedule(sigma=1e-12), x0, steps=8)
        assert np.max(np.abs(em - euler)) < 1e-6

    def test_zero_drift_two_steps_hand_value(self):
        # analytic first step contributes sqrt(dt)*sigma*z1; the final step
        # into t=1 adds no noise
        sigma = 0.7
        s = InterpolantSchedule(sigma=sigma)
        net = oracle(lambda x, c, t: np.zeros_like(x))
        x0 = np.zeros(SHAPE)
        out = sample_si_em(net, s, x0, steps=2, seed=21)
        z1 = substream(21, "steps").standard_normal(SHAPE)
        assert np.allclose(out, np.sqrt(0.5) * sigma * z1, atol=1e-14)

    def test_bit_identical_given_seed(self):
        s = InterpolantSchedule(sigma=0.5)
        net = oracle(lambda x, c, t: -0.3 * x)
        x0 = np.random.default_rng(15).standard_normal(SHAPE)
        a = sample_si_em(net, s, x0, steps=6, seed=3)
        b = sample_si_em(net, s, x0, steps=6, seed=3)
        assert np.array_equal(a, b)

    def test_sigma_zero_rejected(self):
        net = oracle(lambda x, c, t: x)
        with pytest.raises(ScheduleError):
            sample_si_em(net, InterpolantSchedule(sigma=0.0), np.zeros(SHAPE), steps=4, seed=0)

    def test_ensemble_spread_nondecreasing_in_sigma(self):
        # 256 members, drift -x/2: spread grows with the noise scale
        net = oracle(lambda x, c, t: -0.5 * x)
        x0 = np.zeros((256,) + SHAPE)
        spreads = []
        for sigma in (0.1, 0.5, 1.0):
            s = InterpolantSchedule(sigma=sigma)
            out = sample_si_em(net, s, x0, steps=10, seed=4)
            spreads.append(out.std(axis=0).mean())
        assert spreads[0] <= spreads[1] <= spreads[2]


class TestDirect:
    def test_residual_parameterisation(self):
        delta = np.full(SHAPE, 0.25)
        net = oracle(lambda x, c, t: delta)
        cond = np.random.default_rng(16).standard_normal(SHAPE)
        assert np.allclose(sample_direct(net, cond), cond + delta)


class TestRunSampler:
    def test_schedule_type_enforced(self):
        net = oracle(lambda x, c, t: x, head="epsilon")
        spec = SamplerSpec(framework="DDPM", steps=1)
        with pytest.raises(ScheduleError):
            run_sampler(net, spec, np.zeros(SHAPE), schedule=None)

    def test_head_matrix_total(self):
        # every (head, framework) pair either runs or raises the typed error
        heads = ["drift", "epsilon", "denoiser", "velocity", "regression"]
        schedules = {
            "DDPM": build_linear_schedule(4),
            "DDIM": build_linear_schedule(4),
            "TSM": build_linear_schedule(4),
            "EDM": build_edm_schedule(2),
            "FM": None,
            "SI-E": InterpolantSchedule(sigma=1.0),
            "SI-EM": InterpolantSchedule(sigma=1.0),
            "DIRECT": None,
        }
        required = {
            "DDPM": "epsilon", "DDIM": "epsilon", "TSM": "epsilon",
            "EDM": "denoiser", "FM": "velocity", "SI-E": "drift",
            "SI-EM": "drift", "DIRECT": "regression",
        }
        for fw, schedule in schedules.items():
            for head in heads:
                def fn(x, c, t):
                    return np.zeros_like(x)
                fn.head = head
                spec_kwargs = dict(framework=fw, steps=2 if fw not in ("TSM",) else 1, seed=0)
                spec = SamplerSpec(**spec_kwargs)
                if head == required[fw]:
                    run_sampler(fn, spec, np.zeros(SHAPE), schedule)
                else:
                    with pytest.raises(IncompatibleHeadError):
                        run_sampler(fn, spec, np.zeros(SHAPE), schedule)


class TestRollout:
    def test_horizon_one_single_call(self):
        calls = []
        def net(x, c, t):
            calls.append(1)
            return np.zeros_like(x)
        spec = SamplerSpec(framework="SI-E", steps=1, seed=0)
        frames = rollout(net, spec, np.ones(SHAPE), horizon=1, schedule=InterpolantSchedule(sigma=1.0))
        assert frames.shape == (2,) + SHAPE
        assert len(calls) == 1

    def test_identity_sampler_constant_trajectory(self):
        net = oracle(lambda x, c, t: np.zeros_like(x))  # zero drift: state unchanged
        spec = SamplerSpec(framework="SI-E", steps=3, seed=0)
        init = np.random.default_rng(17).standard_normal(SHAPE)
        frames = rollout(net, spec, init, horizon=5, schedule=InterpolantSchedule(sigma=1.0))
        for k in range(6):
            assert np.allclose(frames[k], init)

    def test_nan_at_step_three_named(self):
        calls = {"n": 0}
        def net(x, c, t):
            calls["n"] += 1
            out = np.zeros_like(x)
            if calls["n"] == 3:
                out[0, 0] = np.nan
            return out
        spec = SamplerSpec(framework="SI-E", steps=1, seed=0)
        with pytest.raises(RolloutDivergedError) as err:
            rollout(net, spec, np.zeros(SHAPE), horizon=10, schedule=InterpolantSchedule(sigma=1.0))
        assert err.value.step == 3
        assert "step 3" in str(err.value)
