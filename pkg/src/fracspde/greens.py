"""Green functions of the 1-D wave and heat equations and their spectral integrals.

Fourier convention: ``F f(xi) = int exp(-i xi x) f(x) dx``.  The noise spectral
measure is ``mu_H(d xi) = c_H |xi|^(1 - 2H) d xi``.

Everything here is deterministic and is used as an oracle by the Monte Carlo
layers.  Closed forms are paired with direct quadratures of the defining
integrals so that each can be checked against the other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import DomainError, HurstRangeError

HURST_LOWER = 0.25
HURST_UPPER = 1.0


class EquationKind(str, enum.Enum):
    WAVE = "wave"
    HEAT = "heat"

    @classmethod
    def parse(cls, value) -> "EquationKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DomainError(f"unknown equation kind {value!r}") from None


def check_hurst(h, lower=HURST_LOWER, upper=HURST_UPPER) -> float:
    """Validate a Hurst index, strict on both ends, and return it as a float."""
    h = float(h)
    if not (lower < h < upper):
        raise HurstRangeError(f"Hurst index {h} outside ({lower}, {upper})")
    return h


# ---------------------------------------------------------------------------
# constants


def noise_constant(h) -> float:
    """``c_H = Gamma(2H+1) sin(pi H) / (2 pi)``, the spectral density constant."""
    h = check_hurst(h, 0.0, 1.0)
    return math.gamma(2 * h + 1) * math.sin(math.pi * h) / (2 * math.pi)


def gagliardo_constant(h) -> float:
    """``H (1 - 2H) / 2``, defined for ``H < 1/2``."""
    h = check_hurst(h, 0.0, 0.5)
    return h * (1 - 2 * h) / 2


def wave_constant(alpha) -> float:
    """Constant of the wave-case spectral energy, ``Gamma(a) sin(pi a/2) / (1-a)``."""
    alpha = _check_alpha(alpha)
    # Gamma(a) sin(pi a/2) = Gamma(1+a) (pi/2) sinc(a/2): no pole at a = 0
    return math.gamma(1 + alpha) * (math.pi / 2) * float(np.sinc(alpha / 2)) / (1 - alpha)


@dataclass(frozen=True)
class SpectralConstants:
    h: float
    alpha: float
    c_h: float
    c_tilde_h: float | None
    C_alpha: float


def spectral_constants(h, alpha=0.0) -> SpectralConstants:
    h = check_hurst(h, 0.0, 1.0)
    c_tilde = gagliardo_constant(h) if h < 0.5 else None
    return SpectralConstants(h, float(alpha), noise_constant(h), c_tilde, wave_constant(alpha))


def _check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not (-1.0 < alpha < 1.0):
        raise DomainError(f"alpha={alpha} outside (-1, 1): the spectral integral diverges")
    return alpha


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("Green functions require t > 0")
    return t


# ---------------------------------------------------------------------------
# Green functions


def green_value(kind, t, x):
    """Fundamental solution ``G_t(x)``.

    Wave: ``1/2`` on the open light cone ``|x| < t``.  Heat: the centred
    Gaussian density of variance ``t``.
    """
    kind = EquationKind.parse(kind)
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    if kind is EquationKind.WAVE:
        out = np.where(np.abs(x) < t, 0.5, 0.0)
    else:
        out = np.exp(-(x**2) / (2 * t)) / np.sqrt(2 * np.pi * t)
    return out[()] if out.ndim == 0 else out


def green_fourier(kind, t, xi):
    """``F G_t(xi)``: ``sin(t|xi|)/|xi|`` (value ``t`` at 0) or ``exp(-t xi^2/2)``."""
    kind = EquationKind.parse(kind)
    t = _check_time(t)
    xi = np.asarray(xi, dtype=float)
    if kind is EquationKind.WAVE:
        out = t * np.sinc(t * xi / np.pi)
    else:
        out = np.exp(-t * xi**2 / 2)
    return out[()] if np.ndim(out) == 0 else out


def _fourier_unchecked(kind, t, xi):
    # t may contain zeros here (lag-0 evaluations inside quadratures)
    if kind is EquationKind.WAVE:
        return t * np.sinc(t * xi / np.pi)
    # far proposal tails may square to inf; exp(-inf) = 0 is the right limit
    with np.errstate(over="ignore"):
        return np.exp(-t * xi**2 / 2)


def spectral_energy(kind, alpha, T) -> float:
    """Closed form of ``A_T(alpha) = int_0^T int_R |F G_t(xi)|^2 |xi|^alpha dxi dt``."""
    kind = EquationKind.parse(kind)
    alpha = _check_alpha(alpha)
    T = float(_check_time(T))
    if kind is EquationKind.WAVE:
        return 2 ** (1 - alpha) * wave_constant(alpha) * T ** (2 - alpha) / (2 - alpha)
    return 2 / (1 - alpha) * math.gamma((alpha + 1) / 2) * T ** ((1 - alpha) / 2)


def first_chaos_variance(kind, h, t) -> float:
    """``c_H A_t(1 - 2H)``: second moment of the first chaos of ``u`` at ``eta = 1``."""
    return noise_constant(h) * spectral_energy(kind, 1 - 2 * float(h), t)


def first_chaos_gap(kind, h_a, h_b, t) -> float:
    """Closed form of ``E|I_1^{H_a}(g_1) - I_1^{H_b}(g_1)|^2`` at ``eta = 1``.

    Expanding the squared difference of spectral weights gives three Lemma-type
    integrals with exponents ``1-2H_a``, ``1-2H_b`` and ``1-H_a-H_b``.
    """
    ca, cb = noise_constant(h_a), noise_constant(h_b)
    cross = math.sqrt(ca * cb) * spectral_energy(kind, 1 - h_a - h_b, t)
    return max(first_chaos_variance(kind, h_a, t) + first_chaos_variance(kind, h_b, t) - 2 * cross, 0.0)


# ---------------------------------------------------------------------------
# quadrature engine

_ORDER = 16


@lru_cache(maxsize=None)
def _legendre(n=_ORDER):
    return special.roots_legendre(n)


@lru_cache(maxsize=64)
def _jacobi(alpha, n=_ORDER):
    return special.roots_jacobi(n, 0.0, alpha)


def _gl_panels(edges):
    """Composite Gauss-Legendre nodes/weights for consecutive ``edges``."""
    x, w = _legendre()
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1, None], edges[1:, None]
    half = (b - a) / 2
    return (a + half * (x + 1)).ravel(), (half * w).ravel()


def _jacobi_panel(a, alpha):
    """Nodes/weights for ``int_0^a f(x) x^alpha dx`` exact for polynomial ``f``."""
    x, w = _jacobi(round(alpha, 15))
    return a * (x + 1) / 2, w * (a / 2) ** (1 + alpha)


def power_weighted_integral(f: Callable, alpha, cut, panel=0.5, tail=0.0) -> float:
    """``int_0^inf f(x) x^alpha dx`` for ``f`` smooth on ``[0, cut]``.

    The ``x^alpha`` factor is integrated exactly on the first panel (product
    Gauss-Jacobi rule); the remaining panels use Gauss-Legendre; ``tail`` is
    the caller's value of the integral beyond ``cut``.  ``f`` must accept a 1-D
    array of nodes belonging to one panel.
    """
    first = min(panel, cut)
    nodes, weights = _jacobi_panel(first, alpha)
    total = float(np.dot(weights, f(nodes)))
    n_panels = max(int(math.ceil((cut - first) / panel)), 0)
    edges = np.linspace(first, cut, n_panels + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _gl_panels([a, b])
        total += float(np.dot(w * x**alpha, f(x)))
    return total + tail


def _oscillatory_power_tail(beta, cut, omega) -> float:
    """``int_cut^inf x^beta cos(omega x) dx`` for ``beta < 0``."""
    if omega == 0:
        return cut ** (beta + 1) / -(beta + 1)
    val, _ = integrate.quad(lambda x: x**beta, cut, np.inf, weight="cos", wvar=omega)
    return val


def _power_tail(beta, cut) -> float:
    """``int_cut^inf x^beta dx`` for ``beta < -1``."""
    return cut ** (beta + 1) / -(beta + 1)


def _time_integral(kind, xi, T, shift=0.0):
    """``int_0^T |F G_{t+shift}(xi) - [shift>0] F G_t(xi)|^2 dt`` for each ``xi``.

    Composite Gauss-Legendre in ``t`` on a mesh adapted to the panel's largest
    frequency: oscillation-resolving for the wave, geometrically graded toward
    ``t = 0`` for the heat kernel.
    """
    xi = np.asarray(xi, dtype=float)
    xmax = float(np.max(np.abs(xi)))
    xmin = float(np.min(np.abs(xi)))
    if kind is EquationKind.WAVE:
        n = max(2, int(math.ceil(T * (xmax + 1.0) / (0.5 * math.pi))))
        edges = np.linspace(0.0, T, n + 1)
    else:
        scale = 1.0 / max(xmin, 1e-12) ** 2
        edges = [0.0]
        s = scale / 4
        while s < T:
            edges.append(s)
            s *= 2
        edges.append(T)
        edges = np.asarray(edges)
    t, w = _gl_panels(edges)
    tt = t[None, :]
    xx = xi[:, None]
    if shift > 0:
        g = _fourier_unchecked(kind, tt + shift, xx) - _fourier_unchecked(kind, tt, xx)
    else:
        g = _fourier_unchecked(kind, tt, xx)
    return (g**2) @ w


def _default_cut(kind, alpha):
    return 400.0 if kind is EquationKind.WAVE else 200.0


def spectral_energy_quadrature(kind, alpha, T, cut=None) -> float:
    """Direct 2-D quadrature of ``A_T(alpha)``; independent of the closed form.

    Beyond ``cut`` the time average of ``|F G_t|^2`` is replaced by its
    asymptotic value (``T/2 xi^-2`` wave, ``xi^-2`` heat) and the power tail is
    integrated exactly.
    """
    kind = EquationKind.parse(kind)
    alpha = _check_alpha(alpha)
    T = float(_check_time(T))
    cut = cut or _default_cut(kind, alpha)
    kappa = T / 2 if kind is EquationKind.WAVE else 1.0
    tail = kappa * _power_tail(alpha - 2, cut)
    if kind is EquationKind.WAVE:
        # next asymptotic term of the time average: -sin(2 T xi) / (4 xi^3)
        tail -= 0.25 * _oscillatory_sine_tail(alpha - 3, cut, 2 * T)
    half = power_weighted_integral(lambda x: _time_integral(kind, x, T), alpha, cut, tail=tail)
    return 2 * half


def _oscillatory_sine_tail(beta, cut, omega) -> float:
    val, _ = integrate.quad(lambda x: x**beta, cut, np.inf, weight="sin", wvar=omega)
    return val


def cos_increment_energy(kind, alpha, T, h, cut=None) -> float:
    """``int_0^T int_R (1 - cos(xi h)) |F G_t(xi)|^2 |xi|^alpha dxi dt`` by quadrature."""
    kind = EquationKind.parse(kind)
    alpha = _check_alpha(alpha)
    T = float(_check_time(T))
    h = abs(float(h))
    if h == 0.0:
        return 0.0
    cut = cut or _default_cut(kind, alpha)
    panel = min(0.5, math.pi / (4 * h))
    kappa = T / 2 if kind is EquationKind.WAVE else 1.0
    tail = kappa * (_power_tail(alpha - 2, cut) - _oscillatory_power_tail(alpha - 2, cut, h))
    f = lambda x: (1 - np.cos(x * h)) * _time_integral(kind, x, T)
    return 2 * power_weighted_integral(f, alpha, cut, panel=panel, tail=tail)


def time_increment_energy(kind, alpha, T, h, cut=None) -> float:
    """``int_0^T int_R |F G_{t+h}(xi) - F G_t(xi)|^2 |xi|^alpha dxi dt`` by quadrature."""
    kind = EquationKind.parse(kind)
    alpha = _check_alpha(alpha)
    T = float(_check_time(T))
    h = abs(float(h))
    if h == 0.0:
        return 0.0
    cut = cut or _default_cut(kind, alpha)
    if kind is EquationKind.HEAT:
        # the asymptotic tail needs h xi^2 >> 1 at the cut
        cut = max(cut, 12.0 / math.sqrt(h))
        tail = _power_tail(alpha - 2, cut)
        panel = 0.5
    else:
        tail = T * (_power_tail(alpha - 2, cut) - _oscillatory_power_tail(alpha - 2, cut, h))
        panel = min(0.5, math.pi / (4 * h))
    f = lambda x: _time_integral(kind, x, T, shift=h)
    return 2 * power_weighted_integral(f, alpha, cut, panel=panel, tail=tail)


def cos_kernel_constant(alpha, cut=200.0) -> float:
    """``int_R (1 - cos eta) |eta|^(alpha - 2) d eta`` by quadrature."""
    alpha = _check_alpha(alpha)
    tail = _power_tail(alpha - 2, cut) - _oscillatory_power_tail(alpha - 2, cut, 1.0)
    f = lambda x: np.where(x == 0, 0.5, (1 - np.cos(x)) / np.where(x == 0, 1, x) ** 2)
    return 2 * power_weighted_integral(f, alpha, cut, tail=tail)


def time_increment_constant(kind, alpha, cut=200.0) -> float:
    """Constant of the time-increment bound for ``kind``.

    Heat: ``int (1 - exp(-eta^2/2))^2 |eta|^(alpha-2)``;
    wave: ``4 int min(1, eta^2) |eta|^(alpha-2)``, which is ``16 / (1 - alpha^2)``.
    """
    kind = EquationKind.parse(kind)
    alpha = _check_alpha(alpha)
    if kind is EquationKind.WAVE:
        return 16.0 / (1 - alpha**2)

    def f(x):
        safe = np.where(x == 0, 1.0, x)
        return np.where(x == 0, 0.0, (1 - np.exp(-(safe**2) / 2)) ** 2 / safe**2)

    return 2 * power_weighted_integral(f, alpha, cut, tail=_power_tail(alpha - 2, cut))


def riesz_identity(h, xi) -> float:
    """Closed form of ``int_R |1 - exp(-i xi x)|^2 |x|^(2H-2) dx`` for ``H < 1/2``."""
    h = float(h)
    if not (0.0 < h < 0.5):
        raise HurstRangeError(f"Riesz identity needs 0 < H < 1/2, got {h}")
    xi = abs(float(xi))
    return xi ** (1 - 2 * h) * 2 * math.gamma(2 * h + 1) * math.sin(math.pi * h) / (h * (1 - 2 * h))


def riesz_quadrature(h, xi, cut=None) -> float:
    """Direct quadrature of the left-hand side of :func:`riesz_identity`."""
    h = float(h)
    if not (0.0 < h < 0.5):
        raise HurstRangeError(f"Riesz integral diverges unless 0 < H < 1/2, got {h}")
    xi = abs(float(xi))
    if xi == 0.0:
        return 0.0
    cut = cut or 400.0 / xi
    beta = 2 * h - 2
    tail = 2 * (_power_tail(beta, cut) - _oscillatory_power_tail(beta, cut, xi))

    def f(x):
        safe = np.where(x == 0, 1.0, x)
        return np.where(x == 0, xi**2, 2 * (1 - np.cos(xi * safe)) / safe**2)

    panel = min(0.5, math.pi / (4 * xi))
    # weight x^(2H) on the first panel, f(x) = 2(1 - cos xi x)/x^2 is smooth
    return 2 * power_weighted_integral(f, 2 * h, cut, panel=panel, tail=tail)
