"""Stochastic simulation of the coupled quadratures.

Two integrators are provided:

* the rotating-frame linear system, discretized exactly (matrix
  exponential for the drift, closed-form Gaussian increment for the
  noise). This drives the burst emulation.
* a full-band second-order Langevin integrator for the two positions,
  with a software lock-in, used to check the rotating-wave reduction.

Quadrature vectors are ordered (X1, Y1, X2, Y2), variance-normalized.
Random streams are Philox generators keyed by (seed, purpose, index), so
results do not depend on how work is split across threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_discrete_lyapunov
from scipy.signal import lfilter

from .analytic import covariance_trajectory, embed_subsystem, stationary_covariance
from .model import CoupledPair, OscillatorMode, force_psd

DIVERGENCE_LIMIT = 1e12

# spawn-key domains for the per-purpose random streams
_BURST, _JITTER, _INIT, _RECORD, _FULLBAND = range(5)


class DivergenceError(FloatingPointError):
    """State left the representable range (|entry| > 1e12)."""


class StepSizeError(ValueError):
    """Time step too coarse for a stable or accurate integration."""


class StepSizeWarning(UserWarning):
    pass


def _rng(seed, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _psd_sqrt(q):
    try:
        return np.linalg.cholesky(q)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (q + q.T))
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class RotatingState:
    x1t: float
    y1t: float
    x2t: float
    y2t: float
    time: float = 0.0

    def __post_init__(self):
        v = self.as_array()
        if not np.all(np.isfinite(v)) or np.abs(v).max() > DIVERGENCE_LIMIT:
            raise DivergenceError(f"quadrature state diverged at t = {self.time}: {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1t, self.y1t, self.x2t, self.y2t], dtype=float)

    @classmethod
    def from_array(cls, v, time=0.0) -> "RotatingState":
        return cls(*map(float, v), time=time)


@dataclass(frozen=True)
class FullBandState:
    x1: float
    x2: float
    p1: float
    p2: float
    time: float = 0.0


class ExactPropagator:
    """One exact step of length ``dt`` for both subsystems.

    ``x(t+dt) = Phi x(t) + L z`` with ``L L^T`` the covariance of the
    noise accumulated over the step. Acts on arrays of shape ``(..., 4)``.
    """

    def __init__(self, pair: CoupledPair, dt: float):
        if not dt > 0:
            raise ValueError("dt must be > 0")
        self.pair = pair
        self.dt = dt
        self.phi = transition_matrix(pair, dt)
        self.qd = covariance_trajectory(pair, np.zeros((2, 2)), [dt])[0]
        chol = _psd_sqrt(self.qd)
        self.phi4 = embed_subsystem(self.phi)
        self.chol4 = embed_subsystem(chol)

    def step(self, x, z):
        return x @ self.phi4.T + z @ self.chol4.T


def transition_matrix(pair: CoupledPair, t) -> np.ndarray:
    """``exp(-A t)`` of one subsystem via the eigen-decomposition; ``t`` may be an array."""
    M = pair.eigvecs
    Minv = np.linalg.inv(M)
    lam = np.array([pair.lambda_plus, pair.lambda_minus])
    t = np.asarray(t, dtype=float)
    decay = np.exp(-lam * t[..., None])
    return np.einsum("ik,...k,kj->...ij", M, decay, Minv)


def _as_vector(state):
    if isinstance(state, RotatingState):
        return state.as_array(), state.time
    return np.asarray(state, dtype=float), None


def _wrap_state(v, like_time, dt):
    if like_time is None:
        if not np.all(np.isfinite(v)) or np.abs(v).max() > DIVERGENCE_LIMIT:
            raise DivergenceError("quadrature state diverged")
        return v
    return RotatingState.from_array(v, like_time + dt)


def exact_step(pair: CoupledPair, state, dt: float, noise):
    """Advance the rotating-frame state by ``dt`` exactly.

    ``noise`` holds 4 standard normal draws (or an array ``(..., 4)``
    matching a stack of states).
    """
    v, t = _as_vector(state)
    out = ExactPropagator(pair, dt).step(v, np.asarray(noise, dtype=float))
    return _wrap_state(out, t, dt)


def euler_maruyama_step(pair: CoupledPair, state, dt: float, noise):
    """First-order stochastic update. Only meant as a cross-check of :func:`exact_step`."""
    if dt * pair.lambda_plus > 0.01:
        warnings.warn(
            f"dt * lambda_plus = {dt * pair.lambda_plus:.3g} > 0.01; Euler-Maruyama is inaccurate",
            StepSizeWarning,
            stacklevel=2,
        )
    v, t = _as_vector(state)
    a4 = embed_subsystem(pair.system_matrix("variance"))
    b4 = embed_subsystem(np.sqrt(pair.noise_matrix()))
    out = v - dt * (v @ a4.T) + math.sqrt(dt) * (np.asarray(noise, dtype=float) @ b4.T)
    return _wrap_state(out, t, dt)


@dataclass(frozen=True)
class BurstSchedule:
    """Periodic gating of the drive.

    The on-window holds ``n_samples = round(sample_rate * on_time)``
    samples, where ``on_time`` defaults to ``duty_cycle / burst_rate``.
    ``drive_gbar`` overrides the gain of the pair during the on-window.
    ``lockin_tau`` is the demodulator time constant; the rotating-frame
    emulation records the unfiltered quadratures.
    """

    burst_rate: float = 50.0
    duty_cycle: float = 0.5
    n_bursts: int = 5000
    sample_rate: float = 2e5
    lockin_tau: float = 4e-5
    drive_gbar: float | None = None
    on_duration: float | None = None

    def __post_init__(self):
        if not self.burst_rate > 0:
            raise ValueError("burst_rate must be > 0")
        if not 0 < self.duty_cycle <= 1:
            raise ValueError("duty_cycle must be in (0, 1]")
        if int(self.n_bursts) != self.n_bursts or self.n_bursts < 1:
            raise ValueError("n_bursts must be a positive integer")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if self.lockin_tau < 0:
            raise ValueError("lockin_tau must be >= 0")
        if self.drive_gbar is not None and self.drive_gbar < 0:
            raise ValueError("drive_gbar must be >= 0")
        if self.on_duration is not None and not 0 < self.on_duration <= 1.0 / self.burst_rate:
            raise ValueError("on_duration must be in (0, 1/burst_rate]")
        if self.n_samples < 2:
            raise ValueError(
                "fewer than 2 samples per on-window: raise sample_rate or duty_cycle"
            )

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def period(self) -> float:
        return 1.0 / self.burst_rate

    @property
    def n_samples(self) -> int:
        on = self.duty_cycle / self.burst_rate if self.on_duration is None else self.on_duration
        return int(round(on * self.sample_rate))

    @property
    def on_time(self) -> float:
        return self.n_samples * self.dt

    @property
    def off_time(self) -> float:
        return max(self.period - self.on_time, 0.0)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt


@dataclass(frozen=True)
class BurstEnsemble:
    """Quadrature samples ``[burst, sample, quadrature]`` synchronized to drive onset.

    Sample n of every burst sits at delay ``n * dt`` after onset. Bursts that
    diverged are flagged in ``aborted`` and their samples are NaN.
    """

    samples: np.ndarray
    schedule: BurstSchedule
    seed: int
    gbar: float
    aborted: np.ndarray = field(repr=False, default=None)
    dtheta_rms: float = 0.0

    def __post_init__(self):
        if self.aborted is None:
            object.__setattr__(self, "aborted", np.zeros(self.samples.shape[0], dtype=bool))

    @property
    def times(self) -> np.ndarray:
        return self.schedule.times

    @property
    def n_bursts(self) -> int:
        return self.samples.shape[0]

    @property
    def valid_samples(self) -> np.ndarray:
        return self.samples[~self.aborted]


def _fill_burst_noise(z, seed, workers):
    def fill(indices):
        for b in indices:
            _rng(seed, _BURST, int(b)).standard_normal(out=z[b])

    chunks = np.array_split(np.arange(z.shape[0]), max(1, workers))
    if workers <= 1:
        fill(chunks[0])
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, chunks))


def run_burst_ensemble(pair: CoupledPair, schedule: BurstSchedule, seed: int, workers: int = 1) -> BurstEnsemble:
    """Emulate the burst protocol with continuous evolution.

    The drive is on (gain ``schedule.drive_gbar``, or the gain of ``pair``)
    during each on-window and off otherwise, so the system re-thermalizes
    between bursts on its own. Each off-window is a single exact step.
    The first burst starts from a zero-drive equilibrium draw.
    """
    gbar_on = pair.gbar if schedule.drive_gbar is None else schedule.drive_gbar
    on = ExactPropagator(pair.with_gbar(gbar_on), schedule.dt)
    off_time = schedule.off_time
    off = ExactPropagator(pair.with_gbar(0.0), off_time) if off_time > 0 else None
    n = schedule.n_samples
    n_b = int(schedule.n_bursts)

    # rows 0..n-1: on-steps, row n: off-step, row n+1: re-initialization draw
    z = np.empty((n_b, n + 2, 4))
    _fill_burst_noise(z, seed, workers)

    # zero-start response to the on-window noise, all bursts at once
    zeta = np.empty((n_b, n + 1, 4))
    zeta[:, 0] = 0.0
    for k in range(n):
        zeta[:, k + 1] = on.step(zeta[:, k], z[:, k])

    powers = embed_subsystem(transition_matrix(on.pair, np.arange(n + 1) * schedule.dt))
    x0 = np.empty((n_b, 4))
    x0[0] = _rng(seed, _INIT).standard_normal(4)
    aborted = np.zeros(n_b, dtype=bool)
    for b in range(n_b):
        x_end = powers[n] @ x0[b] + zeta[b, n]
        bad = not np.all(np.isfinite(x_end)) or np.abs(x_end).max() > DIVERGENCE_LIMIT
        aborted[b] = bad
        if b + 1 == n_b:
            break
        if bad:
            x0[b + 1] = z[b + 1, n + 1]
        elif off is None:
            x0[b + 1] = x_end
        else:
            x0[b + 1] = off.step(x_end, z[b, n])
    del z

    samples = zeta[:, :n]
    samples += np.einsum("kij,bj->bki", powers[:n], x0)
    with np.errstate(invalid="ignore"):
        blown = ~np.all(np.abs(samples) <= DIVERGENCE_LIMIT, axis=(1, 2))
    aborted |= blown
    if aborted.any():
        samples[aborted] = np.nan
        warnings.warn(
            f"{int(aborted.sum())} of {n_b} bursts diverged and were discarded "
            f"(first: burst {int(np.argmax(aborted))})",
            RuntimeWarning,
            stacklevel=2,
        )
    return BurstEnsemble(samples, schedule, int(seed), float(gbar_on), aborted)


def rotate_planes(samples, delta):
    """Rotate (X1, Y1) and (X2, Y2) by the same angle ``delta``.

    ``delta`` broadcasts against ``samples[..., 0]``, e.g. shape ``(bursts, 1)``.
    """
    c = np.cos(delta)
    s = np.sin(delta)
    out = np.empty_like(samples)
    for ix, iy in ((0, 1), (2, 3)):
        x, y = samples[..., ix], samples[..., iy]
        out[..., ix] = x * c - y * s
        out[..., iy] = x * s + y * c
    return out


def apply_phase_jitter(ensemble: BurstEnsemble, dtheta_rms: float, seed: int) -> BurstEnsemble:
    """Detection-phase error: each burst rotated by its own Gaussian angle.

    The angle is constant within a burst and applied to both oscillators'
    quadrature planes.
    """
    if dtheta_rms < 0:
        raise ValueError("dtheta_rms must be >= 0")
    if dtheta_rms == 0:
        return ensemble
    delta = np.array([_rng(seed, _JITTER, b).standard_normal() for b in range(ensemble.n_bursts)])
    delta *= dtheta_rms
    rotated = rotate_planes(ensemble.samples, delta[:, None])
    return replace(ensemble, samples=rotated, dtheta_rms=float(dtheta_rms))


def run_stationary_records(pair: CoupledPair, n_records: int, n_samples: int, dt: float, seed: int) -> np.ndarray:
    """Independent stationary records, shape ``(n_records, n_samples, 4)``.

    Each record starts from a draw of the stationary covariance, so it is
    stationary from its first sample (requires gbar < 1).
    """
    prop = ExactPropagator(pair, dt)
    chol = _psd_sqrt(embed_subsystem(stationary_covariance(pair).sigma))
    z = np.empty((n_records, n_samples, 4))
    for r in range(n_records):
        _rng(seed, _RECORD, r).standard_normal(out=z[r])
    out = np.empty_like(z)
    out[:, 0] = z[:, 0] @ chol.T
    for k in range(1, n_samples):
        out[:, k] = prop.step(out[:, k - 1], z[:, k])
    return out


# --- full-band integration -------------------------------------------------


def quadrature_scale(mode: OscillatorMode) -> float:
    """Zero-drive rms of a quadrature (m): ``sqrt(S_F / (2 m^2 w^2 gamma))``."""
    return math.sqrt(force_psd(mode) / (2.0 * mode.mass**2 * mode.omega**2 * mode.gamma_eff))


def quadratures_to_phase_space(X, Y, mode: OscillatorMode, t: float = 0.0):
    """Position and velocity from physical quadratures at time ``t``."""
    c, s = math.cos(mode.omega * t), math.sin(mode.omega * t)
    x = X * c + Y * s
    v = mode.omega * (-X * s + Y * c)
    return x, v


class FullBandIntegrator:
    """Semi-implicit Euler for ``m x'' + m gamma x' + m w^2 x = F_drive + thermal``.

    Update: ``v <- (1 - c dt) v - k dt x + dt F/m + noise``, then
    ``x <- x + dt v``. The coefficients ``c`` and ``k`` are matched so the
    noiseless undriven map has exactly the poles
    ``exp((-gamma/2 +- i w_d) dt)`` of the continuous oscillator; the
    per-step noise is scaled so the discrete stationary position variance
    equals the continuous one. Vectorized over ``n_traj`` trajectories.
    """

    def __init__(self, modes, k_mod, dt, seed, n_traj=1, x0=None, v0=None, noise=True):
        self.modes = tuple(modes)
        if len(self.modes) != 2:
            raise ValueError("exactly two modes are required")
        f_max = max(m.omega for m in self.modes) / (2.0 * math.pi)
        if dt > 1.0 / (20.0 * f_max):
            raise StepSizeError(
                f"dt = {dt:.3g} s exceeds 1/(20 f_max) = {1 / (20 * f_max):.3g} s"
            )
        self.dt = dt
        self.k_mod = float(k_mod)
        self.omega_drive = self.modes[0].omega + self.modes[1].omega
        self.n_traj = n_traj
        damp, stiff, qstd = [], [], []
        for m in self.modes:
            c, k = _matched_coefficients(m.omega, m.gamma_eff, dt)
            F = np.array([[1.0 - k * dt * dt, dt * (1.0 - c * dt)], [-k * dt, 1.0 - c * dt]])
            if np.abs(np.linalg.eigvals(F)).max() >= 1.0:
                raise StepSizeError(f"integrator unstable for mode at {m.omega:.4g} rad/s, dt = {dt}")
            g = np.array([[dt], [1.0]])
            sig = solve_discrete_lyapunov(F, g @ g.T)
            target = force_psd(m) / (2.0 * m.mass**2 * m.omega**2 * m.gamma_eff)
            damp.append(c)
            stiff.append(k)
            qstd.append(math.sqrt(target / sig[0, 0]) if noise else 0.0)
        self._damp = np.array(damp)[:, None]
        self._stiff = np.array(stiff)[:, None]
        self._qstd = np.array(qstd)[:, None]
        self._inv_mass = np.array([1.0 / m.mass for m in self.modes])[:, None]
        self.noise = noise
        self.x = np.zeros((2, n_traj)) if x0 is None else np.array(x0, dtype=float).reshape(2, n_traj)
        self.v = np.zeros((2, n_traj)) if v0 is None else np.array(v0, dtype=float).reshape(2, n_traj)
        self.step_index = 0
        self._rng = _rng(seed, _FULLBAND)

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    def advance(self, n_steps: int):
        """Integrate ``n_steps``; returns ``(times, x1 + x2)`` with x of shape ``(n_steps, n_traj)``."""
        dt = self.dt
        out = np.empty((n_steps, self.n_traj))
        xi = self._rng.standard_normal((n_steps, 2, self.n_traj)) if self.noise else None
        decay = 1.0 - self._damp * dt
        kdt = self._stiff * dt
        fdt = dt * self.k_mod * self._inv_mass
        x, v = self.x, self.v
        t0 = self.step_index
        phase = np.cos(self.omega_drive * dt * (t0 + np.arange(n_steps)))
        for n in range(n_steps):
            total = x[0] + x[1]
            v = decay * v - kdt * x - fdt * (total * phase[n])
            if xi is not None:
                v += self._qstd * xi[n]
            x = x + dt * v
            out[n] = x[0] + x[1]
        if not np.all(np.isfinite(x)):
            raise DivergenceError("full-band state diverged")
        self.x, self.v = x, v
        self.step_index += n_steps
        times = (t0 + 1 + np.arange(n_steps)) * dt
        return times, out


def _matched_coefficients(omega, gamma, dt):
    c = -math.expm1(-gamma * dt) / dt
    wd = math.sqrt(max(omega**2 - 0.25 * gamma**2, 0.0))
    k = (2.0 - c * dt - 2.0 * math.exp(-0.5 * gamma * dt) * math.cos(wd * dt)) / dt**2
    return c, k


@dataclass(frozen=True)
class FullBandRecord:
    times: np.ndarray
    x: np.ndarray  # detected displacement x1 + x2, shape (n_steps, n_traj)


def fullband_run(modes, k_mod, duration, dt, seed, *, n_traj=1, x0=None, v0=None, noise=True) -> FullBandRecord:
    """Integrate the two-mode Langevin equations and return ``x1 + x2``."""
    integ = FullBandIntegrator(modes, k_mod, dt, seed, n_traj=n_traj, x0=x0, v0=v0, noise=noise)
    times, x = integ.advance(int(round(duration / dt)))
    return FullBandRecord(times, x)


class LockIn:
    """Streaming two-phase lock-in with a cascade of ``order`` one-pole low-passes.

    ``X = LPF[2 x cos(w t)]`` and ``Y = LPF[2 x sin(w t)]``, so that
    ``x = X cos(w t) + Y sin(w t)`` for slowly varying X, Y.
    """

    def __init__(self, omega_ref, tau, dt, order=1, n_channels=1):
        if tau < 5 * dt:
            raise ValueError(f"lock-in tau = {tau} must be >= 5 dt = {5 * dt}")
        self.omega_ref = omega_ref
        self.order = int(order)
        a = math.exp(-dt / tau)
        self._b = np.array([1.0 - a])
        self._a = np.array([1.0, -a])
        self._zi = np.zeros((2, self.order, 1, n_channels))

    def process(self, times, x):
        """Demodulate a chunk ``x`` of shape ``(n, n_channels)`` sampled at ``times``."""
        x = np.asarray(x, dtype=float).reshape(len(times), -1)
        ph = self.omega_ref * np.asarray(times)[:, None]
        outs = []
        for i, carrier in enumerate((np.cos(ph), np.sin(ph))):
            u = 2.0 * x * carrier
            for stage in range(self.order):
                u, self._zi[i, stage] = lfilter(self._b, self._a, u, axis=0, zi=self._zi[i, stage])
            outs.append(u)
        return outs[0], outs[1]


def lockin_demodulate(x, omega_ref, tau, dt, t0=0.0, order=1):
    """Demodulate a sampled record; ``x`` is 1-D or ``(n, channels)``."""
    x = np.asarray(x, dtype=float)
    times = t0 + np.arange(x.shape[0]) * dt
    li = LockIn(omega_ref, tau, dt, order, n_channels=1 if x.ndim == 1 else x.shape[1])
    X, Y = li.process(times, x)
    if x.ndim == 1:
        return X[:, 0], Y[:, 0]
    return X, Y


def lockin_variance_factor(rate, tau, order=1):
    """Variance transmitted by the lock-in low-pass for a Lorentzian of half-width ``rate``.

    For one pole this is ``1/(1 + rate tau)``; at zero drive ``rate = gamma/2``.
    Higher orders are integrated numerically.
    """
    if order == 1:
        return 1.0 / (1.0 + rate * tau)
    f = lambda w: 2.0 * rate / (w * w + rate * rate) / (1.0 + (w * tau) ** 2) ** order
    return quad(f, -np.inf, np.inf)[0] / (2.0 * math.pi)


def stationary_phase_space(pair: CoupledPair, n_traj: int, seed: int):
    """Positions and velocities ``(2, n_traj)`` drawn from the rotating-frame
    stationary distribution at ``pair.gbar``; physical units, at t = 0."""
    chol = _psd_sqrt(embed_subsystem(stationary_covariance(pair).sigma))
    q = _rng(seed, _INIT, 1).standard_normal((n_traj, 4)) @ chol.T
    modes = (pair.mode1, pair.mode2)
    x = np.empty((2, n_traj))
    v = np.empty((2, n_traj))
    for i, m in enumerate(modes):
        s = quadrature_scale(m)
        x[i], v[i] = quadratures_to_phase_space(s * q[:, 2 * i], s * q[:, 2 * i + 1], m)
    return x, v


@dataclass(frozen=True)
class DemodulatedRun:
    covariance: np.ndarray  # 4x4 over (X1, Y1, X2, Y2), variance-normalized
    n_samples: int
    snapshot_times: np.ndarray


def fullband_demodulated_covariance(
    pair: CoupledPair,
    *,
    n_traj=2000,
    duration=3.3,
    settle=None,
    snapshot_interval=0.3,
    steps_per_period=64,
    lockin_tau=0.03,
    lockin_order=1,
    seed=0,
    chunk=2048,
):
    """Run the full-band ensemble, demodulate at both resonances, and pool
    normalized quadrature covariances over snapshots after the lock-in settles.

    Trajectories start in the rotating-frame stationary state of ``pair``.
    """
    m1, m2 = pair.mode1, pair.mode2
    dt = 1.0 / (steps_per_period * max(m1.omega, m2.omega) / (2 * math.pi))
    x0, v0 = stationary_phase_space(pair, n_traj, seed)
    integ = FullBandIntegrator((m1, m2), pair.k_mod, dt, seed, n_traj=n_traj, x0=x0, v0=v0)
    li = [LockIn(m.omega, lockin_tau, dt, lockin_order, n_traj) for m in (m1, m2)]
    scale = [quadrature_scale(m) for m in (m1, m2)]
    settle = 10 * lockin_tau * lockin_order if settle is None else settle
    n_total = int(round(duration / dt))
    snap_steps = set(
        int(round(t / dt)) for t in np.arange(settle, duration + 1e-12, snapshot_interval)
    )
    snaps, snap_times = [], []
    done = 0
    while done < n_total:
        n = min(chunk, n_total - done)
        times, x = integ.advance(n)
        quads = []
        for lock, s in zip(li, scale):
            X, Y = lock.process(times, x)
            quads.append((X / s, Y / s))
        for j in range(n):
            if done + j + 1 in snap_steps:
                snaps.append(np.stack([quads[0][0][j], quads[0][1][j], quads[1][0][j], quads[1][1][j]], -1))
                snap_times.append(times[j])
        done += n
    data = np.concatenate(snaps, axis=0)
    cov = np.cov(data, rowvar=False)
    return DemodulatedRun(cov, data.shape[0], np.array(snap_times))


def thermal_position_variance(mode: OscillatorMode) -> float:
    """Zero-drive ``<x^2>`` predicted by the force noise and effective linewidth."""
    return force_psd(mode) / (2.0 * mode.mass**2 * mode.omega**2 * mode.gamma_eff)
