"""Second moments of the Wiener chaos components of Picard iterates.

The ``n``-th chaos of ``u_m(t, x)`` (``n <= m``) is ``I_n(g_n)`` with

    F g_n = eta e^{-i(xi_1 + ... + xi_n) x} prod_l FG_{t_{l+1} - t_l}(eta_l),

written in the partial sums ``eta_l = xi_1 + ... + xi_l`` on the ordered
simplex ``0 < t_1 < ... < t_n < t_{n+1} = t``.  Its second moment is

    eta^2 c_H^n int_{T_n(t)} int_{R^n} prod_l |FG_{tau_l}(eta_l)|^2
        |eta_1|^{1-2H} prod_{l>=2} |eta_l - eta_{l-1}|^{1-2H} d eta d t

with ``tau_l = t_{l+1} - t_l``.  It is estimated with randomized quasi Monte
Carlo (scrambled Sobol points, standard error across scrambles) under an
importance density fitted to the singularities of the integrand.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from .errors import DomainError, QuadratureFlag
from .greens import (
    EquationKind,
    _fourier_unchecked,
    check_hurst,
    first_chaos_variance,
    noise_constant,
)
from .noise import SpectralWhiteNoise, bin_weights

MAX_ORDER = 4
FLAG_REL_SE = 0.10


@dataclass(frozen=True)
class Quadrature:
    """Randomized QMC budget: ``scrambles`` independent Sobol sets of ``2**log2_points``."""

    log2_points: int = 14
    scrambles: int = 16
    seed: int = 20240611

    @property
    def samples(self) -> int:
        return self.scrambles << self.log2_points


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    se: float
    samples: int
    flagged: bool = False


@dataclass(frozen=True)
class ChaosMomentResult:
    kind: EquationKind
    H: float
    t: float
    eta: float
    per_order: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return any(flag for *_, flag in self.per_order)


def _check_order(n, lo=1, hi=MAX_ORDER):
    if int(n) != n or not lo <= n <= hi:
        raise DomainError(f"order n must be an integer in [{lo}, {hi}]")
    return int(n)


def kernel_fourier(kind, times: Sequence[float], etas: Sequence[float], t, eta) -> complex:
    """``eta prod_l FG_{t_{l+1} - t_l}(eta_l)`` with ``t_{n+1} = t``.

    The phase ``e^{-i sum xi x}`` has unit modulus and is omitted, so the result
    does not depend on ``x``.
    """
    kind = EquationKind.parse(kind)
    times = list(times)
    if len(times) != len(etas):
        raise DomainError("times and etas must have the same length")
    grid = [0.0] + times + [t]
    if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise DomainError("times must satisfy 0 < t_1 < ... < t_n < t")
    val = complex(eta)
    for l, e in enumerate(etas):
        val *= float(_fourier_unchecked(kind, grid[l + 2] - grid[l + 1], e))
    return val


# ---------------------------------------------------------------------------
# importance sampling


def _increment_shape(h):
    # Beta-prime parameters: density ~ |z|^(1-2H) near 0 and |z|^(-4H) in the tails,
    # heavy enough for the slowest integrand tails when H is close to 1/4
    p = 1.0 - h
    q = min((4 * h - 1) / 2, 1.0)
    return p, q


def _increment_ppf(u, h):
    """Symmetric variate with density ``|z|^(2p-1) (1+z^2)^(-p-q) / B(p, q)``."""
    p, q = _increment_shape(h)
    sign = np.where(u < 0.5, -1.0, 1.0)
    w = np.abs(2 * u - 1)
    # B / (1 - B) with 1 - B ~ Beta(q, p) taken from its own inverse, no cancellation
    b = special.betaincinv(p, q, w)
    c = special.betaincinv(q, p, 1 - w)
    with np.errstate(divide="ignore"):
        return sign * np.sqrt(b / c)


def _increment_logpdf(z, h):
    p, q = _increment_shape(h)
    az = np.abs(z)
    with np.errstate(divide="ignore"):
        return (2 * p - 1) * np.log(az) - (p + q) * np.log1p(az**2) - special.betaln(p, q)


def _green_scale(kind, tau):
    return 1.0 / tau if kind is EquationKind.WAVE else 1.0 / np.sqrt(2 * tau)


def _green_ppf(kind, u, tau):
    s = _green_scale(kind, tau)
    if kind is EquationKind.WAVE:
        return s * np.tan(np.pi * (u - 0.5))
    return s * special.ndtri(u)


def _green_logpdf(kind, e, tau):
    s = _green_scale(kind, tau)
    if kind is EquationKind.WAVE:
        return -np.log(np.pi * s) - np.log1p((e / s) ** 2)
    return -0.5 * (e / s) ** 2 - np.log(s * math.sqrt(2 * math.pi))


def _dirichlet_params(kind, n, hs):
    # heat: the lag integral behaves like tau^(a-1) with a = min(H, 2H - 1/2)
    h = min(hs)
    a = 1.0 if kind is EquationKind.WAVE else min(h, 2 * h - 0.5)
    return np.array([1.0] + [a] * n)


def _sample_gaps(u, params, t):
    """Stick-breaking inverse transform for Dirichlet gaps scaled to sum ``t``."""
    n1 = len(params)
    rest = np.ones(u.shape[0])
    gaps = np.empty((u.shape[0], n1))
    tail = params[::-1].cumsum()[::-1]
    for k in range(n1 - 1):
        b = special.betaincinv(params[k], tail[k + 1], u[:, k])
        gaps[:, k] = rest * b
        rest = rest * (1 - b)
    gaps[:, -1] = rest
    gaps = np.maximum(gaps, 1e-300)
    log_density = (special.gammaln(params.sum()) - special.gammaln(params).sum()
                   + ((params - 1) * np.log(gaps)).sum(axis=1) - (n1 - 1) * math.log(t))
    return gaps * t, log_density


def _draw(kind, n, t, hs, u):
    """Map uniforms ``u`` (``3n`` columns) to time gaps and partial sums.

    Returns ``tau`` (the ``n`` kernel lags), ``etas`` and the log proposal density.
    """
    params = _dirichlet_params(kind, n, hs)
    gaps, logq = _sample_gaps(u[:, :n], params, t)
    tau = gaps[:, 1:]
    etas = np.empty((u.shape[0], n))
    prev = np.zeros(u.shape[0])
    for l in range(n):
        pick, v = u[:, n + 2 * l], u[:, n + 2 * l + 1]
        green = _green_ppf(kind, v, tau[:, l])
        # mixture over the two H values (for gaps) and the Green-matched part
        h_idx = (pick * 2 * len(hs)).astype(int) % len(hs)
        inc = np.empty_like(v)
        for k, h in enumerate(hs):
            sel = h_idx == k
            inc[sel] = _increment_ppf(v[sel], h)
        e = np.where(pick < 0.5, green, prev + _green_scale(kind, tau[:, l]) * inc)
        s = _green_scale(kind, tau[:, l])
        comp = [_green_logpdf(kind, e, tau[:, l])]
        comp += [_increment_logpdf((e - prev) / s, h) - np.log(s) for h in hs]
        w = [0.5] + [0.5 / len(hs)] * len(hs)
        logq = logq + special.logsumexp(np.stack(comp), axis=0, b=np.array(w)[:, None])
        etas[:, l] = e
        prev = e
    return tau, etas, logq


def _green_part(kind, tau, etas):
    out = np.ones(tau.shape[0])
    for l in range(tau.shape[1]):
        out *= _fourier_unchecked(kind, tau[:, l], etas[:, l]) ** 2
    return out


def _log_weight(h, etas):
    """``log(|eta_1|^(1/2-H) prod |eta_l - eta_{l-1}|^(1/2-H))`` including ``c_H^(n/2)``."""
    inc = np.diff(etas, axis=1, prepend=0.0)
    with np.errstate(divide="ignore"):
        return (0.5 - h) * np.log(np.abs(inc)).sum(axis=1) + 0.5 * etas.shape[1] * math.log(noise_constant(h))


def _qmc_batches(dim, quad: Quadrature):
    root = np.random.SeedSequence(quad.seed)
    for child in root.spawn(quad.scrambles):
        sob = stats.qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(child))
        u = sob.random_base2(quad.log2_points)
        yield np.clip(u, 1e-15, 1 - 1e-15)


def _estimate(kind, n, t, hs, quad, integrand):
    means = []
    for u in _qmc_batches(3 * n, quad):
        tau, etas, logq = _draw(kind, n, t, hs, u)
        f = integrand(tau, etas)
        vals = f * np.exp(-logq).reshape((-1,) + (1,) * (f.ndim - 1))
        vals[~np.isfinite(vals)] = 0.0
        means.append(vals.mean(axis=0))
    means = np.asarray(means)
    value = means.mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(len(means))
    return value, se


def _finish(value, se, samples, what) -> MomentEstimate:
    flagged = bool(value > 0 and se > FLAG_REL_SE * abs(value))
    if flagged:
        warnings.warn(f"{what}: quadrature standard error {se:.3g} exceeds 10% of {value:.3g}",
                      RuntimeWarning, stacklevel=3)
    return MomentEstimate(float(value), float(se), samples, flagged)


def chaos_second_moment(kind, H, n, t, eta=1.0, quad: Quadrature = Quadrature()) -> MomentEstimate:
    """``E[I_n(g_n(., t, x))^2]`` by randomized QMC, with its standard error.

    Results whose standard error exceeds 10% of the value carry ``flagged=True``
    and raise a ``RuntimeWarning``.
    """
    kind = EquationKind.parse(kind)
    H = check_hurst(H)
    n = _check_order(n)
    if not t > 0:
        raise DomainError("t must be positive")
    if eta == 0:
        return MomentEstimate(0.0, 0.0, quad.samples)

    def integrand(tau, etas):
        return _green_part(kind, tau, etas) * np.exp(2 * _log_weight(H, etas))

    value, se = _estimate(kind, n, t, [H], quad, integrand)
    return _finish(eta**2 * value, eta**2 * se, quad.samples, f"chaos moment n={n}")


def truncated_second_moment(kind, H, m, t, eta=1.0, quad: Quadrature = Quadrature()) -> ChaosMomentResult:
    """``E[u_m(t, x)^2] = eta^2 + sum_{n<=m} E[I_n^2]`` by orthogonality of chaoses."""
    kind = EquationKind.parse(kind)
    H = check_hurst(H)
    m = _check_order(m, lo=0)
    per_order = [(0, float(eta) ** 2, 0.0, False)]
    cumulative = [float(eta) ** 2]
    for n in range(1, m + 1):
        est = chaos_second_moment(kind, H, n, t, eta, quad)
        per_order.append((n, est.value, est.se, est.flagged))
        cumulative.append(cumulative[-1] + est.value)
    return ChaosMomentResult(kind, H, float(t), float(eta), per_order, cumulative)


@dataclass(frozen=True)
class GapEstimate:
    gap: MomentEstimate
    var_a: MomentEstimate
    var_b: MomentEstimate
    cov: MomentEstimate


def chaos_moment_components(kind, t, eta, n, H_a, H_b, quad: Quadrature = Quadrature()) -> GapEstimate:
    """Gap, both variances and the covariance of ``I_n^{H_a}`` and ``I_n^{H_b}``
    from one coupled set of samples."""
    kind = EquationKind.parse(kind)
    H_a, H_b = check_hurst(H_a), check_hurst(H_b)
    n = _check_order(n)

    def integrand(tau, etas):
        g = _green_part(kind, tau, etas)
        wa = np.exp(_log_weight(H_a, etas))
        wb = np.exp(_log_weight(H_b, etas))
        return np.stack([g * (wa - wb) ** 2, g * wa**2, g * wb**2, g * wa * wb], axis=1)

    hs = [H_a] if H_a == H_b else [H_a, H_b]
    value, se = _estimate(kind, n, t, hs, quad, integrand)
    e2 = float(eta) ** 2
    est = [MomentEstimate(float(e2 * v), float(e2 * s), quad.samples) for v, s in zip(value, se)]
    return GapEstimate(*est)


def chaos_moment_gap(kind, t, eta, n, H_a, H_b, quad: Quadrature = Quadrature()) -> MomentEstimate:
    """``E|I_n^{H_a}(g_n) - I_n^{H_b}(g_n)|^2`` from the squared difference of
    the spectral weights under one coupled quadrature."""
    if H_a == H_b:
        check_hurst(H_a)
        return MomentEstimate(0.0, 0.0, quad.samples)
    g = chaos_moment_components(kind, t, eta, n, H_a, H_b, quad).gap
    return _finish(g.value, g.se, g.samples, f"chaos gap n={n}")


def first_order_reference(kind, H, t, eta=1.0) -> float:
    """Closed-form ``E[I_1^2]``."""
    return float(eta) ** 2 * first_chaos_variance(kind, H, t)


# ---------------------------------------------------------------------------
# simulated multiple integrals on the spectral grid


def lag_kernel(kind, dt, lag, xi):
    """Slice kernel used by the Picard scheme for lag ``lag`` (in slices).

    Heat uses the RMS of ``FG`` over the lag range, wave the midpoint lag.
    """
    kind = EquationKind.parse(kind)
    xi = np.asarray(xi, dtype=float)
    if kind is EquationKind.HEAT:
        q = dt * xi**2
        ratio = -np.expm1(-q) / np.where(q == 0, 1.0, q)
        return np.exp(-(lag - 1) * q / 2) * np.sqrt(np.where(q == 0, 1.0, ratio))
    s = (lag - 0.5) * dt
    return s * np.sinc(s * xi / math.pi)


def _centered(a):
    return np.fft.fftshift(a, axes=-1)


def simulate_multiple_integral(wn: SpectralWhiteNoise | np.ndarray, H, n, kind, t, x, eta=1.0, grid=None):
    """Discrete ``I_n(g_n(., t, x))`` on the white-noise cells, ``n`` in {1, 2}.

    Cells are (time slice, frequency bin); the sum runs over time-ordered
    slices ``i_1 < i_2`` so no cell is reused.  ``wn`` may be a raw ``z`` array
    with leading batch axes, in which case ``grid`` is required.
    """
    H = check_hurst(H)
    kind = EquationKind.parse(kind)
    n = _check_order(n, hi=2)
    if isinstance(wn, SpectralWhiteNoise):
        z, grid = wn.z, wn.grid
    else:
        z = wn
    i_end = grid.time_index(t)
    dt = grid.dt
    xi = _centered(grid.xi)
    w = math.sqrt(noise_constant(H)) * _centered(bin_weights(grid, H))
    zc = _centered(z[..., :i_end, :]).copy()
    zc[..., 0] = 0.0  # unpaired Nyquist bin left out so every bin has its mirror
    phase = np.exp(-1j * xi * x)
    if n == 1:
        lags = i_end - np.arange(i_end)
        coef = np.stack([lag_kernel(kind, dt, k, xi) for k in lags]) * w * phase
        return float(eta) * np.real(np.einsum("...ij,ij->...", zc, coef))
    # inner first-order integral accumulated per bin, then the outer sum over
    # xi_1 + xi_2 by linear convolution
    nb = xi.size
    dxi = grid.dxi
    xs = (np.arange(2 * nb - 1) - nb) * dxi  # centred index sums k_1 + k_2 - nb
    out = np.zeros(z.shape[:-2])
    L = 1 << int(math.ceil(math.log2(2 * nb - 1)))
    for i2 in range(1, i_end):
        inner = np.zeros(z.shape[:-2] + (nb,), dtype=complex)
        for i1 in range(i2):
            inner += lag_kernel(kind, dt, i2 - i1, xi) * w * zc[..., i1, :]
        a = np.fft.fft(inner, L)
        b = np.fft.fft(w * zc[..., i2, :], L)
        conv = np.fft.ifft(a * b)[..., : 2 * nb - 1]
        k = lag_kernel(kind, dt, i_end - i2, xs)
        out += np.real(np.sum(conv * k * np.exp(-1j * xs * x), axis=-1))
    return float(eta) * out if out.ndim == 0 else float(eta) * out


def off_diagonal_square(coef: np.ndarray, z: np.ndarray, n_xi: int) -> np.ndarray:
    """Discrete ``I_2(f tensor f)`` for ``I_1(f) = Re sum_c coef_c z_c``.

    Removes from ``I_1(f)^2`` every product that reuses a cell, counting a
    bin and its mirror as the same cell.  ``coef`` has shape ``(n_t, n_xi)``.
    """
    coef = np.array(coef, dtype=complex, copy=True)
    half = n_xi // 2
    coef[..., half] = 0.0
    z = np.array(z, copy=True)
    z[..., half] = 0.0
    # with Hermitian z, X = Re sum coef z = sum_{j>0} 2 Re(a_j z_j) + a_0 z_0, a_j = (coef_j + conj coef_-j)/2
    mirror = np.conj(np.roll(coef[..., ::-1], 1, axis=-1))
    a = 0.5 * (coef + mirror)
    X = np.real(np.sum(a * z, axis=(-2, -1)))
    pos = slice(1, half)
    # real Gaussian coordinates of each cell: (Re z_j, Im z_j) for j > 0 and z_0
    re_c, im_c = 2 * a[..., pos].real, -2 * a[..., pos].imag
    re_z, im_z = z[..., pos].real, z[..., pos].imag
    # real and imaginary parts are independent cells; only squares are diagonal
    diag = (np.sum((re_c * re_z) ** 2 + (im_c * im_z) ** 2, axis=(-2, -1))
            + np.sum((a[..., 0].real * z[..., 0].real) ** 2, axis=-1))
    return X**2 - diag


def first_order_from_coefficients(coef: np.ndarray, z: np.ndarray, n_xi: int) -> np.ndarray:
    coef = np.array(coef, dtype=complex, copy=True)
    coef[..., n_xi // 2] = 0.0
    return np.real(np.sum(coef * z, axis=(-2, -1)))
