"""Closed-form stationary and time-dependent statistics of the quadratures.

Two normalizations are used and every record carries its tag:

``"spectral"``
    quadratures scaled so that the zero-drive spectral density at
    omega = 0 is 1; the asymmetry parameter is ``alpha``.
``"variance"``
    quadratures scaled to unit variance at zero drive; the asymmetry
    parameter is ``alpha_prime``. All time-domain results use this one.

Spectral densities are two-sided with ``variance = integral S(w) dw / 2 pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CoupledPair

__all__ = [
    "AboveThresholdError",
    "CovarianceState",
    "ZeroFreqSpectra",
    "QuadratureCombination",
    "IdenticalSummary",
    "stationary_zero_freq",
    "min_quadrature_from_cov",
    "max_quadrature_from_cov",
    "stationary_min",
    "stationary_max",
    "stationary_spectrum",
    "stationary_covariance",
    "propagate_covariance",
    "covariance_trajectory",
    "eigen_quadrature_variance",
    "embed_subsystem",
    "phase_noise_corrected",
    "identical_summary",
]

# Index pairs of the two independent subsystems inside (X1, Y1, X2, Y2).
SUBSYSTEMS = ((0, 3), (1, 2))


class AboveThresholdError(ValueError):
    """Raised when a stationary quantity is requested for gbar >= 1."""


def _check_below(gbar):
    if not gbar < 1.0:
        raise AboveThresholdError(f"no stationary state for gbar = {gbar} >= 1")
    if gbar < 0:
        raise ValueError(f"gbar must be >= 0, got {gbar}")


@dataclass(frozen=True)
class CovarianceState:
    """Covariance of the (X, Y) quadratures of one subsystem at ``time``."""

    sigma: np.ndarray
    time: float
    normalization: str = "variance"

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (2, 2):
            raise ValueError(f"sigma must be 2x2, got shape {sigma.shape}")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-12 * np.abs(sigma).max()):
            raise ValueError("sigma must be symmetric")
        if np.linalg.eigvalsh(sigma).min() < -1e-12 * max(1.0, np.abs(sigma).max()):
            raise ValueError("sigma must be positive semidefinite")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def thermal(cls, time: float = 0.0) -> "CovarianceState":
        """Zero-drive equilibrium: the identity."""
        return cls(np.eye(2), time)


@dataclass(frozen=True)
class ZeroFreqSpectra:
    s_xx: float
    s_yy: float
    s_xy: float
    normalization: str = "spectral"

    def matrix(self) -> np.ndarray:
        return np.array([[self.s_xx, self.s_xy], [self.s_xy, self.s_yy]])


@dataclass(frozen=True)
class QuadratureCombination:
    """Angles of a combined quadrature and its variance or peak density.

    For a single subsystem only ``theta`` is meaningful (``phi1 = phi2 = 0``).
    Angles live in [0, pi).
    """

    phi1: float
    phi2: float
    theta: float
    value: float
    degenerate: bool = False
    normalization: str = "variance"


def stationary_zero_freq(gbar: float, alpha: float) -> ZeroFreqSpectra:
    """Zero-frequency spectral densities of one subsystem (spectral normalization)."""
    _check_below(gbar)
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    den = (1.0 - gbar * gbar) ** 2
    return ZeroFreqSpectra(
        (1.0 + gbar**2 * alpha**2) / den,
        (1.0 + gbar**2 / alpha**2) / den,
        -gbar * (alpha + 1.0 / alpha) / den,
    )


def _extrema(c):
    c = np.asarray(c, dtype=float)
    cxx, cyy = c[..., 0, 0], c[..., 1, 1]
    s = c[..., 0, 1] + c[..., 1, 0]
    diff = cxx - cyy
    root = np.hypot(diff, s)
    mean = 0.5 * (cxx + cyy)
    theta_max = 0.5 * np.arctan2(s, diff)
    return mean - 0.5 * root, mean + 0.5 * root, theta_max, root


def _wrap(angle):
    return float(np.mod(angle, np.pi))


def min_quadrature_from_cov(c, normalization: str = "variance") -> QuadratureCombination:
    """Quadrature ``X cos(theta) + Y sin(theta)`` of minimal variance.

    Works on a covariance or a zero-frequency spectral matrix alike. For an
    isotropic matrix theta is undefined; it is returned as 0 with
    ``degenerate=True``.
    """
    vmin, _, theta_max, root = _extrema(c)
    scale = max(abs(float(np.asarray(c)[0, 0])), abs(float(np.asarray(c)[1, 1])), 1e-300)
    degenerate = bool(root <= 1e-13 * scale)
    theta = 0.0 if degenerate else _wrap(theta_max + 0.5 * np.pi)
    return QuadratureCombination(0.0, 0.0, theta, float(vmin), degenerate, normalization)


def max_quadrature_from_cov(c, normalization: str = "variance") -> QuadratureCombination:
    _, vmax, theta_max, root = _extrema(c)
    scale = max(abs(float(np.asarray(c)[0, 0])), abs(float(np.asarray(c)[1, 1])), 1e-300)
    degenerate = bool(root <= 1e-13 * scale)
    theta = 0.0 if degenerate else _wrap(theta_max)
    return QuadratureCombination(0.0, 0.0, theta, float(vmax), degenerate, normalization)


def _closed_form_theta_min(gbar, alpha):
    # The textbook arctan form picks the maximizing branch for alpha < 1.
    if gbar == 0:
        return 0.0
    if alpha == 1:
        return 0.25 * np.pi
    theta = 0.5 * np.pi - 0.5 * math.atan(2.0 * alpha / (gbar * (alpha * alpha - 1.0)))
    if alpha < 1:
        theta -= 0.5 * np.pi
    return _wrap(theta)


def stationary_min(gbar: float, alpha: float) -> QuadratureCombination:
    """Minimal zero-frequency spectral density over theta (spectral normalization).

    For alpha = 1 this is ``1/(1+gbar)^2`` at theta = pi/4.
    """
    _check_below(gbar)
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    g2 = gbar * gbar
    a2 = alpha * alpha
    root = math.sqrt(0.25 * g2 * g2 * (a2 - 1.0 / a2) ** 2 + g2 * (alpha + 1.0 / alpha) ** 2)
    # det of the zero-frequency matrix is 1/(1-g^2)^2, so S_min = det / S_max;
    # this avoids the cancellation of the direct form near threshold
    value = 1.0 / (1.0 + 0.5 * g2 * (a2 + 1.0 / a2) + root)
    return QuadratureCombination(
        0.0, 0.0, _closed_form_theta_min(gbar, alpha), value, gbar == 0, "spectral"
    )


def stationary_max(gbar: float, alpha: float) -> QuadratureCombination:
    """Maximal zero-frequency spectral density, at ``theta_min + pi/2``."""
    _check_below(gbar)
    g2 = gbar * gbar
    a2 = alpha * alpha
    root = math.sqrt(0.25 * g2 * g2 * (a2 - 1.0 / a2) ** 2 + g2 * (alpha + 1.0 / alpha) ** 2)
    value = (1.0 + 0.5 * g2 * (a2 + 1.0 / a2) + root) / (1.0 - g2) ** 2
    theta = _wrap(_closed_form_theta_min(gbar, alpha) + 0.5 * np.pi) if gbar else 0.0
    return QuadratureCombination(0.0, 0.0, theta, value, gbar == 0, "spectral")


def stationary_spectrum(pair: CoupledPair, omega):
    """Two-sided spectra ``(S_xx, S_yy, S_xy)`` of one subsystem at ``omega``.

    Variance normalization. ``S_xy`` is the real, symmetrized cross
    spectrum ``(S_xy + S_yx)/2``, so that its integral is the covariance.
    """
    gbar = pair.gbar
    _check_below(gbar)
    w2 = np.asarray(omega, dtype=float) ** 2
    g1, g2, ap = pair.gamma1, pair.gamma2, pair.alpha_prime
    den = (w2 - 0.25 * g1 * g2 * (1.0 - gbar**2)) ** 2 + w2 * (g1 + g2) ** 2 / 4.0
    s_xx = ((w2 + g2**2 / 4.0) * g1 + g1**2 / 4.0 * gbar**2 * ap**2 * g2) / den
    s_yy = ((w2 + g1**2 / 4.0) * g2 + g2**2 / 4.0 * gbar**2 / ap**2 * g1) / den
    s_xy = -0.25 * g1 * g2 * gbar * (g1 * ap + g2 / ap) / den
    return s_xx, s_yy, s_xy


def _decay_integral(rate, t):
    """``(1 - exp(-rate t)) / rate`` with the ``rate -> 0`` limit ``t``."""
    rate = np.asarray(rate, dtype=float)
    t = np.asarray(t, dtype=float)
    x = rate * t
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, rate)
    return np.where(small, t * (1.0 - 0.5 * x), -np.expm1(-x) / safe)


def _eigen_parts(pair: CoupledPair):
    M = pair.eigvecs
    Minv = np.linalg.inv(M)
    lam = np.array([pair.lambda_plus, pair.lambda_minus])
    C = Minv @ pair.noise_matrix() @ Minv.T
    return M, Minv, lam, C


def covariance_trajectory(pair: CoupledPair, sigma0, times) -> np.ndarray:
    """Subsystem covariance at each of ``times``; shape ``(len(times), 2, 2)``.

    ``Sigma(t) = Phi Sigma0 Phi^T + int_0^t Phi(s) D Phi(s)^T ds`` with
    ``Phi = M diag(exp(-lambda t)) M^-1`` and ``D = diag(gamma1, gamma2)``,
    evaluated term by term as sums of exponentials. Valid above threshold.
    """
    if isinstance(sigma0, CovarianceState):
        sigma0 = sigma0.sigma
    sigma0 = np.asarray(sigma0, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    M, Minv, lam, C = _eigen_parts(pair)
    sy0 = Minv @ sigma0 @ Minv.T
    rates = lam[:, None] + lam[None, :]
    t = times[:, None, None]
    sy = np.exp(-rates * t) * sy0 + C * _decay_integral(rates, t)
    out = M @ sy @ M.T
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def propagate_covariance(pair: CoupledPair, sigma0, t: float) -> CovarianceState:
    """Evolve a subsystem covariance from ``Sigma0`` over time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    t0 = sigma0.time if isinstance(sigma0, CovarianceState) else 0.0
    sigma = covariance_trajectory(pair, sigma0, [t])[0]
    return CovarianceState(sigma, t0 + t)


def stationary_covariance(pair: CoupledPair) -> CovarianceState:
    """Long-time limit of :func:`propagate_covariance` (requires gbar < 1)."""
    _check_below(pair.gbar)
    M, _, lam, C = _eigen_parts(pair)
    sy = C / (lam[:, None] + lam[None, :])
    out = M @ sy @ M.T
    return CovarianceState(0.5 * (out + out.T), math.inf)


def eigen_quadrature_variance(pair: CoupledPair, sigma, which: str = "plus"):
    """Variance of the normalized left-eigen combination decaying at lambda_+/-.

    ``sigma`` may be a stack of covariances ``(..., 2, 2)``.
    """
    Minv = np.linalg.inv(pair.eigvecs)
    w = Minv[0 if which == "plus" else 1]
    w = w / np.linalg.norm(w)
    sigma = np.asarray(sigma.sigma if isinstance(sigma, CovarianceState) else sigma)
    return np.einsum("i,...ij,j->...", w, sigma, w)


def embed_subsystem(sigma2) -> np.ndarray:
    """Full covariance over (X1, Y1, X2, Y2) from the common subsystem covariance.

    Both subsystems (X1, Y2) and (Y1, X2) obey the same equations, so they
    share the same 2x2 covariance and are mutually uncorrelated.
    """
    sigma2 = np.asarray(sigma2.sigma if isinstance(sigma2, CovarianceState) else sigma2)
    out = np.zeros(sigma2.shape[:-2] + (4, 4))
    for i, j in SUBSYSTEMS:
        out[..., i, i] = sigma2[..., 0, 0]
        out[..., j, j] = sigma2[..., 1, 1]
        out[..., i, j] = sigma2[..., 0, 1]
        out[..., j, i] = sigma2[..., 1, 0]
    return out


def phase_noise_corrected(s_min, s_max, var_dtheta):
    """Minimal density (or variance) seen with a detection-phase error of
    variance ``var_dtheta``, to first order."""
    if np.any(np.asarray(var_dtheta) < 0):
        raise ValueError("var_dtheta must be >= 0")
    return s_min + var_dtheta * s_max


@dataclass(frozen=True)
class IdenticalSummary:
    gbar: float
    gamma: float
    lambda_plus: float
    lambda_minus: float
    tau_short: float
    tau_long: float | None  # None below threshold: no divergence
    sigma2_plus: float  # asymptotic variance of the squeezed eigen-quadrature
    sigma2_minus: float  # inf at or above threshold


def identical_summary(gbar: float, gamma: float) -> IdenticalSummary:
    """Rates, time constants and asymptotes for identical oscillators."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if not gbar >= 0:
        raise ValueError("gbar must be >= 0")
    lam_p = 0.5 * gamma * (1.0 + gbar)
    lam_m = 0.5 * gamma * (1.0 - gbar)
    if gbar > 1:
        tau_long = 1.0 / (gamma * (gbar - 1.0))
    elif gbar == 1:
        tau_long = math.inf  # critical slowing down
    else:
        tau_long = None
    sigma2_minus = 1.0 / (1.0 - gbar) if gbar < 1 else math.inf
    return IdenticalSummary(
        gbar, gamma, lam_p, lam_m, 1.0 / (gamma * (1.0 + gbar)), tau_long, 1.0 / (1.0 + gbar), sigma2_minus
    )
