import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from twinspring.analytic import covariance_trajectory, embed_subsystem, stationary_covariance
from twinspring.estimate import covariance_standard_errors, ensemble_covariances, global_min, jittered_covariance
from twinspring.model import K_B, OscillatorMode, build_pair, identical_pair, reference_modes
from twinspring.sim import (
    BurstSchedule,
    DivergenceError,
    ExactPropagator,
    FullBandIntegrator,
    LockIn,
    RotatingState,
    StepSizeError,
    StepSizeWarning,
    apply_phase_jitter,
    euler_maruyama_step,
    exact_step,
    fullband_demodulated_covariance,
    fullband_run,
    lockin_demodulate,
    lockin_variance_factor,
    rotate_planes,
    run_burst_ensemble,
    run_stationary_records,
    transition_matrix,
)

from conftest import make_pair

FAST = BurstSchedule(burst_rate=50, duty_cycle=0.15, n_bursts=1000, sample_rate=2e5)


def reference_pair(gbar):
    return build_pair(*reference_modes(), gbar=gbar)


def zscores(ens, pair_on):
    est = ensemble_covariances(ens)
    se = covariance_standard_errors(ens)
    ref = embed_subsystem(covariance_trajectory(pair_on, np.eye(2), ens.times))
    out = {}
    for i in range(4):
        for j in range(i, 4):
            out[i, j] = (est[:, i, j] - ref[:, i, j]) / se[:, i, j]
    return out


class TestExactStep:
    def test_thermal_equilibrium(self):
        p = make_pair(g1=1.0, g2=3.0)
        x = exact_step(p, np.zeros((40000, 4)), 50.0, np.random.default_rng(1).standard_normal((40000, 4)))
        assert x.var(axis=0) == pytest.approx(np.ones(4), abs=5 * math.sqrt(2 / 40000))

    @pytest.mark.parametrize("gbar", [0.0, 0.5, 1.0, 1.7])
    def test_deterministic_part_matches_expm(self, gbar):
        p = make_pair(g1=0.7, g2=2.1, gbar=gbar, q1=3e4)
        dt = 0.37
        phi = transition_matrix(p, dt)
        oracle = expm(-p.system_matrix() * dt)
        assert phi == pytest.approx(oracle, rel=1e-12, abs=1e-14)
        x0 = np.array([0.3, -1.2, 0.8, 2.0])
        x1 = exact_step(p, x0, dt, np.zeros(4))
        assert x1 == pytest.approx(embed_subsystem(oracle) @ x0, rel=1e-12)
        # eigenvector directions decay at lambda_+/-
        for k, lam in enumerate((p.lambda_plus, p.lambda_minus)):
            v = p.eigvecs[:, k]
            assert phi @ v == pytest.approx(math.exp(-lam * dt) * v, abs=1e-13)

    def test_one_step_covariance(self):
        p = make_pair(g1=1.0, g2=2.0, gbar=0.8, q1=2e4)
        dt = 0.4
        prop = ExactPropagator(p, dt)
        a = p.system_matrix()
        oracle = quad_vec(lambda s: expm(-a * s) @ p.noise_matrix() @ expm(-a * s).T, 0, dt, epsabs=1e-14)[0]
        assert prop.qd == pytest.approx(oracle, rel=1e-10, abs=1e-14)
        n = 100_000
        z = np.random.default_rng(7).standard_normal((n, 4))
        x = prop.step(np.zeros((n, 4)), z)
        emp = np.cov(x, rowvar=False)
        ref = embed_subsystem(oracle)
        for i in range(4):
            for j in range(i, 4):
                se = np.std(x[:, i] * x[:, j], ddof=1) / math.sqrt(n)
                assert abs(emp[i, j] - ref[i, j]) < 5 * se

    def test_state_object_and_guard(self):
        p = identical_pair(1.0, 0.3)
        s = exact_step(p, RotatingState(1.0, 0.0, 0.0, 0.0), 0.1, np.zeros(4))
        assert isinstance(s, RotatingState) and s.time == pytest.approx(0.1)
        with pytest.raises(DivergenceError):
            RotatingState(1e13, 0.0, 0.0, 0.0)
        with pytest.raises(DivergenceError):
            exact_step(identical_pair(1.0, 3.0), np.array([1e11, 0.0, 0.0, 0.0]), 20.0, np.zeros(4))
        with pytest.raises(ValueError):
            exact_step(p, np.zeros(4), 0.0, np.zeros(4))


class TestEulerMaruyama:
    def test_scalar_decay(self):
        p = make_pair(g1=2.0, g2=5.0, gbar=0.0)
        dt = 1e-3
        x = euler_maruyama_step(p, np.ones(4), dt, np.zeros(4))
        assert x == pytest.approx([1 - 2.0 * dt / 2, 1 - 2.0 * dt / 2, 1 - 5.0 * dt / 2, 1 - 5.0 * dt / 2], rel=1e-15)

    def test_warns_on_coarse_step(self):
        p = identical_pair(1.0, 0.0)
        with pytest.warns(StepSizeWarning):
            euler_maruyama_step(p, np.zeros(4), 0.5 / p.lambda_plus, np.zeros(4))

    @pytest.mark.parametrize("gbar", [0.5, 1.0])
    def test_small_step_matches_exact(self, gbar):
        gamma = 1.0
        p = identical_pair(gamma, gbar)
        dt, n_steps, n = 2e-3, 1500, 20000
        rng = np.random.default_rng(3)
        x = rng.standard_normal((n, 4))
        for _ in range(n_steps):
            x = euler_maruyama_step(p, x, dt, rng.standard_normal((n, 4)))
        t = dt * n_steps
        ref = embed_subsystem(covariance_trajectory(p, np.eye(2), [t])[0])
        emp = np.cov(x, rowvar=False)
        for i, j in ((0, 0), (3, 3), (0, 3), (1, 2)):
            se = np.std(x[:, i] * x[:, j], ddof=1) / math.sqrt(n)
            # first-order bias O(lambda dt) on top of the statistical error
            assert abs(emp[i, j] - ref[i, j]) < 5 * se + 2 * dt * p.lambda_plus * abs(ref[i, j])
        if gbar == 1.0:
            v = (x[:, 0] - x[:, 3]) / math.sqrt(2)
            assert v.var() == pytest.approx(1 + gamma * t, rel=5 * math.sqrt(2 / n) + 0.01)


class TestSchedule:
    def test_defaults(self):
        s = BurstSchedule()
        assert s.n_samples == 2000 and s.dt == 5e-6 and s.off_time == pytest.approx(0.01)

    def test_on_duration_override(self):
        s = BurstSchedule(duty_cycle=0.5, on_duration=1e-3)
        assert s.n_samples == 200

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(sample_rate=50.0),
            dict(duty_cycle=0.0),
            dict(duty_cycle=1.5),
            dict(n_bursts=0),
            dict(burst_rate=-1.0),
            dict(on_duration=1.0),
            dict(drive_gbar=-0.1),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            BurstSchedule(**kwargs)


class TestBurstEnsemble:
    def test_reproducible_and_worker_independent(self):
        p = reference_pair(1.3)
        sched = replace(FAST, n_bursts=50)
        a = run_burst_ensemble(p, sched, 42).samples
        b = run_burst_ensemble(p, sched, 42, workers=4).samples
        c = run_burst_ensemble(p, sched, 43).samples
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, c)
        assert a.shape == (50, sched.n_samples, 4)

    def test_undriven_unit_variance(self):
        ens = run_burst_ensemble(reference_pair(0.9), replace(FAST, drive_gbar=0.0), 5)
        var = ens.samples.var(axis=0, ddof=1)
        se = math.sqrt(2 / (ens.n_bursts - 1))
        assert np.abs(var - 1).max() < 5 * se
        assert ens.gbar == 0.0

    @pytest.mark.parametrize("gbar", [0.0, 0.5, 0.92, 1.0, 1.3])
    def test_matches_analytic_propagation(self, gbar):
        p = reference_pair(gbar)
        ens = run_burst_ensemble(p, FAST, 100 + int(gbar * 100))
        z = zscores(ens, p)
        for (i, j), zz in z.items():
            same = (i, j) in ((0, 0), (1, 1), (2, 2), (3, 3), (0, 3), (1, 2))
            assert np.abs(zz).max() < 5.0, f"entry {(i, j)} within-subsystem={same}"

    def test_stationary_tail_anticorrelated(self):
        p = reference_pair(0.5)
        ens = run_burst_ensemble(p, replace(FAST, duty_cycle=0.5, n_bursts=400), 9)
        c = ensemble_covariances(ens)[-1]
        assert c[1, 2] < 0 and c[0, 3] < 0  # K > 0 anti-correlates Y1 with X2 (and X1 with Y2)

    def test_divergent_bursts_flagged(self):
        p = reference_pair(3.0)
        sched = BurstSchedule(burst_rate=25, duty_cycle=0.5, n_bursts=12, sample_rate=2e4)
        with pytest.warns(RuntimeWarning, match="diverged"):
            ens = run_burst_ensemble(p, sched, 0)
        assert ens.aborted.all()
        assert np.isnan(ens.samples).all()
        assert ens.valid_samples.shape[0] == 0

    def test_first_burst_starts_thermal(self):
        p = reference_pair(0.5)
        sched = replace(FAST, n_bursts=3000)
        ens = run_burst_ensemble(p, sched, 11)
        v0 = ens.samples[:, 0].var(axis=0, ddof=1)
        assert np.abs(v0 - 1).max() < 5 * math.sqrt(2 / 3000)


class TestPhaseJitter:
    def test_zero_is_identity(self):
        ens = run_burst_ensemble(reference_pair(0.5), replace(FAST, n_bursts=20), 1)
        assert apply_phase_jitter(ens, 0.0, 3) is ens
        with pytest.raises(ValueError):
            apply_phase_jitter(ens, -0.1, 3)

    def test_rotation_preserves_plane_norms(self, rng):
        s = rng.normal(size=(7, 5, 4))
        r = rotate_planes(s, rng.normal(size=(7, 1)))
        assert np.hypot(r[..., 0], r[..., 1]) == pytest.approx(np.hypot(s[..., 0], s[..., 1]))
        assert np.hypot(r[..., 2], r[..., 3]) == pytest.approx(np.hypot(s[..., 2], s[..., 3]))

    def test_constant_within_burst_and_seeded(self):
        ens = run_burst_ensemble(reference_pair(0.5), replace(FAST, n_bursts=20), 1)
        a = apply_phase_jitter(ens, 0.05, 8)
        b = apply_phase_jitter(ens, 0.05, 8)
        assert a.samples.tobytes() == b.samples.tobytes()
        ang = np.arctan2(a.samples[..., 1], a.samples[..., 0]) - np.arctan2(ens.samples[..., 1], ens.samples[..., 0])
        ang = np.angle(np.exp(1j * ang))
        assert np.abs(ang - ang[:, :1]).max() < 1e-9

    def test_expected_covariance(self):
        # Monte Carlo of the rotation applied to a fixed covariance vs the closed form
        sigma = embed_subsystem(stationary_covariance(identical_pair(1.0, 0.9)).sigma)
        n = 400_000
        rng = np.random.default_rng(4)
        x = rng.multivariate_normal(np.zeros(4), sigma, size=n)
        r = rotate_planes(x, 0.07 * rng.standard_normal(n))
        emp = np.cov(r, rowvar=False)
        ref = jittered_covariance(sigma, 0.07)
        assert np.abs(emp - ref).max() < 5 * math.sqrt(2 / n) * np.abs(sigma).max()

    @pytest.mark.parametrize("dtheta", [0.041, 0.07])
    def test_first_order_formula(self, dtheta):
        g = 0.8
        sigma = embed_subsystem(stationary_covariance(identical_pair(1.0, g)).sigma)
        measured = global_min(jittered_covariance(sigma, dtheta)).value
        excess = measured - 1 / (1 + g)
        assert excess == pytest.approx(dtheta**2 / (1 - g), rel=0.2)


class TestStationaryRecords:
    def test_stationary_from_first_sample(self):
        p = reference_pair(0.7)
        r = run_stationary_records(p, 3000, 40, 1e-4, 2)
        ref = embed_subsystem(stationary_covariance(p).sigma)
        for k in (0, 39):
            c = np.cov(r[:, k], rowvar=False)
            assert np.abs(c - ref).max() < 5 * math.sqrt(2 / 3000) * ref.max()

    def test_seeded(self):
        p = reference_pair(0.2)
        a = run_stationary_records(p, 3, 10, 1e-4, 1)
        b = run_stationary_records(p, 3, 10, 1e-4, 1)
        assert a.tobytes() == b.tobytes()


def slow_modes(f1=50.0, f2=80.0, q=20.0):
    return OscillatorMode.from_hz(1e-7, f1, q, None, 300.0), OscillatorMode.from_hz(2e-7, f2, q, None, 300.0)


class TestFullBand:
    def test_equipartition(self):
        m1, m2 = slow_modes()
        dt = 1 / (64 * 80.0)
        integ = FullBandIntegrator((m1, m2), 0.0, dt, 1, n_traj=4000)
        integ.advance(int(2.0 / dt))
        for i, m in enumerate((m1, m2)):
            ref = K_B * 300 / (m.mass * m.omega**2)
            assert integ.x[i].var() == pytest.approx(ref, rel=5 * math.sqrt(2 / 4000))

    def test_ring_down(self):
        m1, m2 = slow_modes()
        dt = 1 / (64 * 80.0)
        A = 1e-9
        rec = fullband_run((m1, m2), 0.0, 1.0, dt, 0, x0=[[A], [0.0]], noise=False)
        x = rec.x[:, 0]
        g = m1.gamma_eff
        wd = math.sqrt(m1.omega**2 - g * g / 4)
        ref = A * np.exp(-g * rec.times / 2) * (np.cos(wd * rec.times) + g / (2 * wd) * np.sin(wd * rec.times))
        assert np.abs(x - ref).max() < 0.05 * A
        # envelope from samples one damped period apart: exact decay per period
        n_per = 2 * math.pi / wd / dt
        X, Y = lockin_demodulate(x, wd, 0.05, dt)
        amp = np.hypot(X, Y)
        i0, i1 = int(0.3 / dt), int(0.8 / dt)
        rate = -math.log(amp[i1] / amp[i0]) / ((i1 - i0) * dt)
        assert rate == pytest.approx(g / 2, rel=2e-2)
        assert n_per > 20

    def test_step_size_checks(self):
        m1, m2 = slow_modes()
        with pytest.raises(StepSizeError):
            FullBandIntegrator((m1, m2), 0.0, 1 / (10 * 80.0), 0)
        with pytest.raises(ValueError):
            FullBandIntegrator((m1,), 0.0, 1e-4, 0)

    def test_seeded(self):
        m1, m2 = slow_modes()
        a = fullband_run((m1, m2), 1e-3, 0.05, 1e-4, 5, n_traj=3).x
        b = fullband_run((m1, m2), 1e-3, 0.05, 1e-4, 5, n_traj=3).x
        assert a.tobytes() == b.tobytes()


class TestLockIn:
    W, DT, TAU = 2 * math.pi * 1000.0, 1 / 40000.0, 5e-3

    def tone(self, phase):
        t = np.arange(int(0.2 / self.DT)) * self.DT
        return 1.7 * np.cos(self.W * t + phase)

    def test_in_phase(self):
        X, Y = lockin_demodulate(self.tone(0.0), self.W, self.TAU, self.DT)
        # average one carrier period to remove the 2w ripple of size A/(2 w tau)
        assert X[-40:].mean() == pytest.approx(1.7, rel=1e-3) and abs(Y[-40:].mean()) < 2e-3

    def test_quadrature(self):
        X, Y = lockin_demodulate(self.tone(math.pi / 2), self.W, self.TAU, self.DT)
        assert abs(X[-40:].mean()) < 2e-3 and Y[-40:].mean() == pytest.approx(-1.7, rel=1e-3)

    def test_chunked_equals_whole(self):
        x = np.random.default_rng(0).standard_normal(3000)
        X, Y = lockin_demodulate(x, self.W, self.TAU, self.DT, order=2)
        li = LockIn(self.W, self.TAU, self.DT, order=2)
        t = np.arange(3000) * self.DT
        parts = [li.process(t[s], x[s]) for s in (slice(0, 1234), slice(1234, 3000))]
        assert np.concatenate([p[0][:, 0] for p in parts]) == pytest.approx(X, abs=1e-14)

    def test_tau_too_short(self):
        with pytest.raises(ValueError):
            LockIn(self.W, 4 * self.DT, self.DT)

    def test_broadband_variance_factor(self):
        lam, tau, w, dt, n_traj = 50.0, 0.01, 2 * math.pi * 2000, 1 / 40000.0, 2000
        rng = np.random.default_rng(0)
        a = math.exp(-lam * dt)
        s = math.sqrt(1 - a * a)
        X, Y = rng.standard_normal(n_traj), rng.standard_normal(n_traj)
        li = LockIn(w, tau, dt, 1, n_traj)
        chunk, k, snaps = 2000, 0, []
        while k < int(0.6 / dt):
            xs = np.empty((chunk, n_traj))
            for j in range(chunk):
                X = a * X + s * rng.standard_normal(n_traj)
                Y = a * Y + s * rng.standard_normal(n_traj)
                t = (k + j + 1) * dt
                xs[j] = X * math.cos(w * t) + Y * math.sin(w * t)
            Xd, Yd = li.process((k + 1 + np.arange(chunk)) * dt, xs)
            k += chunk
            if k * dt > 0.15:
                snaps += [Xd[-1], Yd[-1]]
        assert np.var(snaps) == pytest.approx(lockin_variance_factor(lam, tau), rel=0.05)

    def test_factor_orders(self):
        assert lockin_variance_factor(2.0, 0.3) == pytest.approx(1 / 1.6)
        two = lockin_variance_factor(2.0, 0.3, order=2)
        assert two < lockin_variance_factor(2.0, 0.3)


@pytest.fixture(scope="module")
def undriven_fullband():
    m1, m2 = reference_modes()
    s = 1e-3
    scaled = [OscillatorMode.from_hz(m.mass, m.omega / (2 * math.pi) * s, m.q_factor, m.gamma_eff / (2 * math.pi) * s, m.temperature) for m in (m1, m2)]
    pair = build_pair(*scaled, gbar=0.0)
    return fullband_demodulated_covariance(pair, n_traj=1000, duration=2.1, seed=3)


def test_fullband_undriven_modes_uncorrelated(undriven_fullband):
    c = undriven_fullband.covariance
    bound = 5 / math.sqrt(1000)
    for i in (0, 1):
        for j in (2, 3):
            assert abs(c[i, j]) < bound
    assert np.diag(c) == pytest.approx(np.ones(4), abs=0.1)
