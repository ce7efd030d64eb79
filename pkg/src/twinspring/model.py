"""Physical parameters of the two-mode opto-mechanical system.

Everything here is SI with angular frequencies in rad/s. Hz values are
accepted only by the ``from_hz`` constructors and converted once.

The slow (rotating-frame) dynamics of each quadrature subsystem,
(X1, Y2) or (Y1, X2), is ``dX/dt = -A X + noise`` with::

    A = [[gamma1/2, g1     ],
         [g2,       gamma2/2]],    g_i = K / (4 omega_i m_i)

where ``K`` is the modulated spring amplitude (N/m). The instability
threshold is where ``det A`` vanishes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

# CODATA 2018, 10 significant digits
HBAR = 1.054571818e-34  # J s
K_B = 1.380649000e-23  # J/K
C_LIGHT = 2.997924580e8  # m/s

TWO_PI = 2.0 * math.pi


class ApproximationWarning(UserWarning):
    """Bad-cavity / small-detuning approximation used outside its range."""


@dataclass(frozen=True)
class OscillatorMode:
    """One mechanical mode.

    ``gamma_eff`` is the effective linewidth (optical damping included);
    the natural linewidth is ``omega / q_factor``.
    """

    mass: float
    omega: float
    q_factor: float
    gamma_eff: float
    temperature: float
    nbar: float | None = None

    def __post_init__(self):
        for name in ("mass", "omega", "q_factor", "gamma_eff"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if not (np.isfinite(self.temperature) and self.temperature >= 0):
            raise ValueError(f"temperature must be >= 0, got {self.temperature!r}")
        if self.nbar is not None and not (np.isfinite(self.nbar) and self.nbar >= 0):
            raise ValueError(f"nbar must be >= 0, got {self.nbar!r}")

    @classmethod
    def from_hz(cls, mass, freq_hz, q_factor, gamma_eff_hz=None, temperature=300.0, nbar=None):
        """Build a mode from frequencies in Hz.

        ``gamma_eff_hz`` is the linewidth divided by 2 pi; if omitted the
        natural linewidth ``freq_hz / q_factor`` is used.
        """
        omega = TWO_PI * freq_hz
        gamma = omega / q_factor if gamma_eff_hz is None else TWO_PI * gamma_eff_hz
        return cls(mass, omega, q_factor, gamma, temperature, nbar)

    @property
    def gamma_natural(self) -> float:
        return self.omega / self.q_factor

    def occupation(self) -> float:
        """Thermal occupation number, or the supplied ``nbar``."""
        if self.nbar is not None:
            return self.nbar
        if self.temperature == 0:
            return 0.0
        return 1.0 / math.expm1(HBAR * self.omega / (K_B * self.temperature))


@dataclass(frozen=True)
class OpticalSpringConfig:
    laser_omega: float
    intracavity_power: float
    cavity_length: float
    kappa: float
    detuning: float
    modulation_depth: float = 0.0

    def __post_init__(self):
        if not self.cavity_length > 0:
            raise ValueError(f"cavity_length must be > 0, got {self.cavity_length!r}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa!r}")
        if not self.intracavity_power >= 0:
            raise ValueError(f"intracavity_power must be >= 0, got {self.intracavity_power!r}")
        if not 0 <= self.modulation_depth < 0.5:
            raise ValueError(f"modulation_depth must be in [0, 0.5), got {self.modulation_depth!r}")

    def bad_cavity_ok(self, modes=()) -> bool:
        """True when |detuning| and every mode frequency are below kappa/3."""
        limit = self.kappa / 3.0
        return abs(self.detuning) < limit and all(m.omega < limit for m in modes)


@dataclass(frozen=True)
class OpticalSpring:
    """Result of :func:`optical_spring`."""

    k_opt: float
    kappa: float
    modulation_depth: float
    valid: bool

    def gamma_opt(self, mode: OscillatorMode) -> float:
        """Optical damping rate for ``mode`` (positive means cooling)."""
        return -2.0 * self.k_opt / (mode.mass * self.kappa)

    @property
    def k_mod(self) -> float:
        """Amplitude of the modulated spring, ``k_opt * beta``."""
        return self.k_opt * self.modulation_depth


def optical_spring(cfg: OpticalSpringConfig, modes=()) -> OpticalSpring:
    """Optical spring constant in the bad-cavity, small-detuning limit.

    ``k_opt = 4 omega_L P Delta / (L kappa^2 c)``. Red detuning
    (``Delta < 0``) gives a negative spring and positive damping.
    Outside the validity range an :class:`ApproximationWarning` is issued
    and the result is flagged, but still returned.
    """
    k_opt = (
        4.0 * cfg.laser_omega * cfg.intracavity_power * cfg.detuning
        / (cfg.cavity_length * cfg.kappa**2 * C_LIGHT)
    )
    valid = cfg.bad_cavity_ok(modes)
    if not valid:
        warnings.warn(
            "optical spring evaluated outside the bad-cavity limit "
            "(|detuning| or mode frequency >= kappa/3)",
            ApproximationWarning,
            stacklevel=2,
        )
    return OpticalSpring(k_opt, cfg.kappa, cfg.modulation_depth, valid)


def force_psd(mode: OscillatorMode) -> float:
    """Two-sided force spectral density ``hbar m w^2 (2 nbar + 1) / Q``.

    Reduces to ``2 k_B T m w / Q`` for ``k_B T >> hbar w``.
    """
    nbar = mode.occupation()
    return HBAR * mode.mass * mode.omega**2 / mode.q_factor * (2.0 * nbar + 1.0)


def effective_temperature(mode: OscillatorMode) -> float:
    return mode.temperature * mode.gamma_natural / mode.gamma_eff


def threshold(mode1: OscillatorMode, mode2: OscillatorMode) -> float:
    """Drive amplitude (N/m) at which ``det A = 0``."""
    return 2.0 * math.sqrt(
        mode1.gamma_eff * mode2.gamma_eff * mode1.mass * mode2.mass * mode1.omega * mode2.omega
    )


def eigensystem_2x2(a, b, c, d):
    """Eigenvalues and unit eigenvectors of ``[[a, b], [c, d]]`` with ``b*c >= 0``.

    Returns ``(lam_plus, lam_minus, M)`` with the eigenvector of
    ``lam_plus`` in column 0. For a diagonal input M is a permutation of
    the identity; for a multiple of the identity M is the identity.
    """
    half_tr = 0.5 * (a + d)
    root = math.sqrt((0.5 * (a - d)) ** 2 + b * c)
    lam_p = half_tr + root
    det = a * d - b * c
    lam_m = det / lam_p if lam_p != 0 else half_tr - root

    # lam - a and lam - d formed without rounding through lam, which keeps
    # the eigenvectors distinct when the coupling is below machine precision
    half_diff = 0.5 * (d - a)
    cols = []
    for sign, fallback in ((1.0, 0), (-1.0, 1)):
        v1 = np.array([b, half_diff + sign * root])
        v2 = np.array([-half_diff + sign * root, c])
        v = v1 if np.hypot(*v1) >= np.hypot(*v2) else v2
        norm = np.hypot(*v)
        if norm == 0.0:
            v = np.eye(2)[fallback]
        else:
            v = v / norm
        cols.append(v)
    M = np.column_stack(cols)
    if root == 0.0:
        M = np.eye(2)
    return lam_p, lam_m, M


@dataclass(frozen=True)
class CoupledPair:
    """Two modes coupled by a spring modulated at the sum frequency.

    Use :func:`build_pair` to construct from either ``k_mod`` or ``gbar``.
    """

    mode1: OscillatorMode
    mode2: OscillatorMode
    k_mod: float
    g1: float = field(init=False)
    g2: float = field(init=False)
    k_threshold: float = field(init=False)
    gbar: float = field(init=False)
    alpha: float = field(init=False)
    alpha_prime: float = field(init=False)
    lambda_plus: float = field(init=False)
    lambda_minus: float = field(init=False)
    eigvecs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.k_mod) and self.k_mod >= 0):
            raise ValueError(f"k_mod must be >= 0, got {self.k_mod!r}")
        m1, m2 = self.mode1, self.mode2
        k_th = threshold(m1, m2)
        gbar = self.k_mod / k_th
        alpha, alpha_p = _asymmetry(m1, m2)
        g1_, g2_ = m1.gamma_eff, m2.gamma_eff
        # eigenvalues from the closed form in (gamma1, gamma2, gbar)
        ab = 0.5 * g1_ * gbar * alpha_p
        ba = 0.5 * g2_ * gbar / alpha_p
        lam_p, _, M = eigensystem_2x2(0.5 * g1_, ab, ba, 0.5 * g2_)
        det = 0.25 * g1_ * g2_ * (1.0 - gbar) * (1.0 + gbar)
        lam_m = min(det / lam_p, lam_p)  # rounding can invert them when degenerate
        s = object.__setattr__
        s(self, "g1", self.k_mod / (4.0 * m1.omega * m1.mass))
        s(self, "g2", self.k_mod / (4.0 * m2.omega * m2.mass))
        s(self, "k_threshold", k_th)
        s(self, "gbar", gbar)
        s(self, "alpha", alpha)
        s(self, "alpha_prime", alpha_p)
        s(self, "lambda_plus", lam_p)
        s(self, "lambda_minus", lam_m)
        s(self, "eigvecs", M)

    @property
    def gamma1(self) -> float:
        return self.mode1.gamma_eff

    @property
    def gamma2(self) -> float:
        return self.mode2.gamma_eff

    def system_matrix(self, normalization: str = "variance") -> np.ndarray:
        """Drift matrix A of one quadrature subsystem.

        ``"physical"`` uses the raw quadratures (metres); ``"variance"``
        uses quadratures scaled to unit variance at zero drive, where the
        off-diagonals become ``gamma1 gbar alpha'/2`` and
        ``gamma2 gbar / (2 alpha')``.
        """
        g1_, g2_ = self.gamma1, self.gamma2
        if normalization == "physical":
            return np.array([[0.5 * g1_, self.g1], [self.g2, 0.5 * g2_]])
        if normalization == "variance":
            ap = self.alpha_prime
            return np.array(
                [[0.5 * g1_, 0.5 * g1_ * self.gbar * ap], [0.5 * g2_ * self.gbar / ap, 0.5 * g2_]]
            )
        raise ValueError(f"unknown normalization {normalization!r}")

    def noise_matrix(self) -> np.ndarray:
        """Noise intensity ``B B^T`` in the variance normalization."""
        return np.diag([self.gamma1, self.gamma2])

    @property
    def det_a(self) -> float:
        return 0.25 * self.gamma1 * self.gamma2 * (1.0 - self.gbar) * (1.0 + self.gbar)

    @property
    def below_threshold(self) -> bool:
        return self.gbar < 1.0

    def with_gbar(self, gbar: float) -> "CoupledPair":
        return replace(self, k_mod=gbar * self.k_threshold)

    def with_k_mod(self, k_mod: float) -> "CoupledPair":
        return replace(self, k_mod=k_mod)


def build_pair(mode1: OscillatorMode, mode2: OscillatorMode, k_mod=None, *, gbar=None) -> CoupledPair:
    """Couple two modes; give exactly one of ``k_mod`` (N/m) or ``gbar``."""
    if (k_mod is None) == (gbar is None):
        raise ValueError("exactly one of k_mod or gbar must be given")
    if gbar is not None:
        if not gbar >= 0:
            raise ValueError(f"gbar must be >= 0, got {gbar!r}")
        k_mod = gbar * threshold(mode1, mode2)
    return CoupledPair(mode1, mode2, float(k_mod))


def _asymmetry(m1: OscillatorMode, m2: OscillatorMode):
    sf1, sf2 = force_psd(m1), force_psd(m2)
    ratio = (sf2 * m1.mass * m1.omega) / (sf1 * m2.mass * m2.omega)
    alpha_p = math.sqrt(ratio)
    alpha = math.sqrt(ratio * m1.gamma_eff / m2.gamma_eff)
    return alpha, alpha_p


def asymmetry(pair: CoupledPair):
    """``(alpha, alpha_prime)``: noise asymmetry under the spectral and the
    variance normalization respectively."""
    return pair.alpha, pair.alpha_prime


def reference_modes(gamma_eff_hz: float = 500.0, temperature: float = 300.0):
    """The two modes of the reference device (172 kHz / 250 ug, 225 kHz / 100 ug, Q = 5e4)."""
    m1 = OscillatorMode.from_hz(250e-9, 172e3, 5e4, gamma_eff_hz, temperature)
    m2 = OscillatorMode.from_hz(100e-9, 225e3, 5e4, gamma_eff_hz, temperature)
    return m1, m2


def identical_pair(gamma: float = 1.0, gbar: float = 0.0, *, mass=1e-9, omega=1e5, temperature=300.0):
    """A pair of identical modes with linewidth ``gamma`` (rad/s), for tests and demos."""
    mode = OscillatorMode(mass, omega, omega / gamma, gamma, temperature)
    return build_pair(mode, mode, gbar=gbar)
