"""Monte Carlo estimators on simulated solutions.

All estimators draw replicate ``r`` from ``replicate_seed(seed, r)`` and use
the spatial stationarity of the solution (constant initial condition,
homogeneous noise): moments at a probe are averaged over every window cell at
the same time, which multiplies the effective sample size without changing
the estimand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .errors import DomainError
from .greens import EquationKind, check_hurst, gagliardo_constant
from .noise import SpaceTimeGrid
from .solver import simulate_replicates, solver_grid


def _mean_se(x: np.ndarray, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / math.sqrt(n)


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class MomentReport:
    kind: EquationKind
    H: float
    p: int
    m: int
    probes: list
    mean: np.ndarray
    mean_se: np.ndarray
    moment: np.ndarray
    moment_se: np.ndarray
    replicates: int
    refinement_flag: bool = False

    @property
    def sup(self) -> float:
        return float(np.max(self.moment))


def _probe_moments(grid, kind, H, eta, m, probes, p, replicates, seed, spatial_average):
    idx = [(grid.time_index(t), grid.space_index(x)) for t, x in probes]

    def reduce(u, h):
        if spatial_average:
            vals = np.stack([u[:, i, :] for i, _ in idx], axis=1)
            return np.stack([vals.mean(axis=-1), (np.abs(vals) ** p).mean(axis=-1)], axis=-1)
        vals = np.stack([u[:, i, k] for i, k in idx], axis=1)
        return np.stack([vals, np.abs(vals) ** p], axis=-1)

    [data] = simulate_replicates(grid, [H], kind, eta, m, replicates, seed, reduce)
    return data


def moment_report(kind, H, eta, p, probes, replicates, seed, grid: SpaceTimeGrid | None = None,
                  m: int = 2, check_refinement: bool = False, spatial_average: bool = True) -> MomentReport:
    """``E u`` and ``E|u|^p`` of the Picard iterate ``u_m`` at the probes.

    With ``check_refinement`` the sup over probes is recomputed on the grid
    with ``dt, dx`` halved; growth beyond three standard errors sets
    ``refinement_flag`` (a uniform bound should not grow with resolution).
    """
    kind = EquationKind.parse(kind)
    H = check_hurst(H)
    if p not in (2, 4, 8):
        raise DomainError("p must be 2, 4 or 8")
    if replicates < 2:
        raise DomainError("need at least 2 replicates")
    grid = grid or solver_grid(kind, n_t=64, L=1.0, n_x=64)
    data = _probe_moments(grid, kind, H, eta, m, probes, p, replicates, seed, spatial_average)
    mean, mean_se = _mean_se(data[..., 0])
    mom, mom_se = _mean_se(data[..., 1])
    flag = False
    if check_refinement:
        fine = _probe_moments(grid.refined(), kind, H, eta, m, probes, p, replicates, seed, spatial_average)
        f_mom, f_se = _mean_se(fine[..., 1])
        k = int(np.argmax(mom))
        flag = bool(f_mom.max() - mom[k] > 3 * math.hypot(f_se[int(np.argmax(f_mom))], mom_se[k]))
    return MomentReport(kind, H, p, m, list(probes), mean, mean_se, mom, mom_se, replicates, flag)


# ---------------------------------------------------------------------------
# Holder exponents


@dataclass(frozen=True)
class HolderFit:
    direction: str
    lags: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    moments: np.ndarray
    moments_se: np.ndarray
    residuals: np.ndarray = field(repr=False)


def _regress(lags, values):
    x, y = np.log(lags), np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    return slope, intercept, y - (slope * x + intercept)


def increment_moments(kind, H, eta, direction, base_point, lags, replicates, seed, grid, p=2, m=2,
                      batches=20):
    """Per-batch means of ``E|u(t, x + h) - u(t, x)|^p`` (space) or
    ``E|u(t, x) - u(t - h, x)|^p`` (time) for each lag, averaged over ``x``.

    Returns an array ``(batches, len(lags))``.
    """
    t, _ = base_point
    i = grid.time_index(t)
    if direction == "space":
        steps = [int(round(h / grid.dx)) for h in lags]
    elif direction == "time":
        steps = [int(round(h / grid.dt)) for h in lags]
    else:
        raise DomainError("direction must be 'space' or 'time'")

    def reduce(u, h):
        out = []
        for s in steps:
            if direction == "space":
                d = u[:, i, s:] - u[:, i, :-s]
            else:
                d = u[:, i, :] - u[:, i - s, :]
            out.append((np.abs(d) ** p).mean(axis=-1))
        return np.stack(out, axis=-1)

    [data] = simulate_replicates(grid, [H], kind, eta, m, replicates, seed, reduce)
    batches = min(batches, replicates)
    usable = replicates - replicates % batches
    return data[:usable].reshape(batches, -1, len(steps)).mean(axis=1)


def _check_lags(direction, lags, grid, base_point):
    cell = grid.dx if direction == "space" else grid.dt
    lags = np.asarray(sorted(lags), dtype=float)
    if len(lags) < 4:
        raise DomainError("need at least 4 lags")
    if lags[0] < 4 * cell * (1 - 1e-9):
        raise DomainError(f"lag {lags[0]:g} below 4 cells ({4 * cell:g}): discretization dominated")
    if lags[-1] > grid.T / 8 * (1 + 1e-9):
        raise DomainError(f"lag {lags[-1]:g} above T/8")
    for h in lags:
        if abs(h / cell - round(h / cell)) > 1e-9 * h / cell:
            raise DomainError(f"lag {h:g} is not a multiple of the cell size {cell:g}")
    if direction == "time" and base_point[0] - lags[-1] < -1e-12:
        raise DomainError("time lags reach before t = 0")
    return lags


def holder_fit(kind, H, eta, direction, base_point, lags, replicates, seed, p=2,
               grid: SpaceTimeGrid | None = None, m: int = 2) -> HolderFit:
    """Log-log regression of increment moments on the lag.

    The expected slope is ``p`` times the Hölder exponent: for ``p = 2``
    ``2H`` in space, ``2H`` in time for the wave equation and ``H`` in time for
    the heat equation.  The slope standard error comes from batch means.
    """
    kind = EquationKind.parse(kind)
    H = check_hurst(H)
    grid = grid or solver_grid(kind)
    lags = _check_lags(direction, lags, grid, base_point)
    per_batch = increment_moments(kind, H, eta, direction, base_point, lags, replicates, seed, grid, p, m)
    mom, mom_se = _mean_se(per_batch)
    slope, intercept, resid = _regress(lags, mom)
    batch_slopes = [_regress(lags, b)[0] for b in per_batch]
    slope_se = float(np.std(batch_slopes, ddof=1) / math.sqrt(len(batch_slopes)))
    return HolderFit(direction, lags, float(slope), slope_se, float(intercept), mom, mom_se, resid)


def expected_slope(kind, H, direction, p=2) -> float:
    kind = EquationKind.parse(kind)
    gamma = H if (direction == "space" or kind is EquationKind.WAVE) else H / 2
    return p * gamma


def holder_grid(kind, direction, T=1.0) -> SpaceTimeGrid:
    """Grids resolving the fitted lag range: fine ``dx`` for space, fine ``dt`` for time."""
    # the spatial band must reach well past the frequencies a lag resolves
    if direction == "space":
        return solver_grid(kind, T=T, n_t=32, L=1.0, n_x=1024)
    return solver_grid(kind, T=T, n_t=128, L=1.0, n_x=256)


def default_lags(grid: SpaceTimeGrid, direction, count=5) -> list[float]:
    """Geometric lags from 4 cells to 64 cells, capped at ``T/8``."""
    cell = grid.dx if direction == "space" else grid.dt
    top = min(64, int(grid.T / 8 / cell))
    ks = np.unique(np.round(np.geomspace(4, top, count)).astype(int))
    return [float(k * cell) for k in ks]


# ---------------------------------------------------------------------------
# Gagliardo seminorm


def _green_square_integral(kind, a, b):
    """``int_a^b int G_tau(y)^2 dy d tau`` for lags ``0 <= a < b``."""
    if kind is EquationKind.WAVE:
        return (b**2 - a**2) / 4
    return (math.sqrt(b) - math.sqrt(a)) / math.sqrt(math.pi)


def _power_integral(lags, D, beta, gamma, floor=4, fit_to=16):
    """``2 int_0^inf D(r) r^(2 beta - 2) dr`` from samples ``D(lags)``.

    Below ``floor`` cells ``D`` is replaced by ``A r^gamma`` with the
    amplitude fitted over ``floor .. fit_to`` cells (the smallest lags are
    discretization dominated) and integrated exactly; between lags ``D`` is linear with the
    power weight integrated exactly; beyond the last lag ``D`` is frozen.
    """
    e = 2 * beta - 2
    if D[floor - 1] <= 0:
        return 0.0
    sel = slice(floor - 1, min(fit_to, len(lags)))
    amp = float(np.mean(D[sel] / lags[sel] ** gamma))
    r0 = lags[floor - 1]
    total = amp * r0 ** (gamma + e + 1) / (gamma + e + 1)
    lags, D = lags[floor - 1:], D[floor - 1:]
    for (ra, da), (rb, db) in zip(zip(lags[:-1], D[:-1]), zip(lags[1:], D[1:])):
        slope = (db - da) / (rb - ra)
        # int (da + slope (r - ra)) r^e dr
        base = da - slope * ra
        total += base * (rb ** (e + 1) - ra ** (e + 1)) / (e + 1)
        total += slope * (rb ** (e + 2) - ra ** (e + 2)) / (e + 2)
    total += D[-1] * lags[-1] ** (e + 1) / (1 - 2 * beta)
    return 2 * total


def gagliardo_seminorm(kind, H, eta, t, x, replicates, p=2, seed=0, grid: SpaceTimeGrid | None = None,
                       m: int = 2, beta: float | None = None, max_lag_cells: int | None = None) -> float:
    """Monte Carlo estimate of

        c~_beta int_0^t int int G_{t-s}(x-y)^2 (E|u(s,y) - u(s,z)|^p)^(2/p) |y-z|^(2 beta - 2) dy dz ds

    for ``H < 1/2`` (``beta`` defaults to ``H``).

    By spatial stationarity the inner double integral factorizes into
    ``int G^2`` times ``int D(s, r) |r|^(2 beta - 2) dr`` where ``D`` is the
    lag structure function, which removes the singular diagonal from the
    sampling problem.
    """
    kind = EquationKind.parse(kind)
    H = check_hurst(H)
    beta = H if beta is None else float(beta)
    if not H < 0.5 or not 0 < beta < 0.5:
        raise DomainError("the seminorm is defined for H < 1/2")
    if eta == 0:
        return 0.0
    grid = grid or solver_grid(kind, T=t, n_t=64, L=1.0, n_x=128)
    i_t = grid.time_index(t)
    max_k = max_lag_cells or grid.n_x // 4
    ks = np.arange(1, max_k + 1)

    def reduce(u, h):
        # D(s_i, k dx) for every time node i <= i_t and lag k
        out = np.empty((u.shape[0], i_t + 1, len(ks)))
        for j, k in enumerate(ks):
            out[:, :, j] = (np.abs(u[:, : i_t + 1, k:] - u[:, : i_t + 1, :-k]) ** p).mean(axis=-1)
        return out

    [data] = simulate_replicates(grid, [H], kind, eta, m, replicates, seed, reduce)
    D = data.mean(axis=0) ** (2.0 / p)
    lags = ks * grid.dx
    # D(s, r) ~ r^(2H) at small lags for both equations
    J = np.array([_power_integral(lags, D[i], beta, 2 * H) for i in range(i_t + 1)])
    total = 0.0
    for i in range(i_t):
        w = _green_square_integral(kind, t - (i + 1) * grid.dt, t - i * grid.dt)
        total += w * 0.5 * (J[i] + J[i + 1])
    return gagliardo_constant(beta) * total


# ---------------------------------------------------------------------------
# coupling in H


@dataclass(frozen=True)
class CouplingCurve:
    kind: EquationKind
    H0: float
    probe: tuple
    m: int
    entries: list  # (H_n, value, se), |H_n - H_0| descending


def coupling_curve(kind, H0, H_list: Sequence[float], eta, probe, replicates, seed, m: int = 2,
                   grid: SpaceTimeGrid | None = None, spatial_average: bool = False) -> CouplingCurve:
    """``E|u^{H_n}(t, x) - u^{H_0}(t, x)|^2`` on shared noise, with standard errors."""
    kind = EquationKind.parse(kind)
    H0 = check_hurst(H0)
    H_list = [check_hurst(h) for h in H_list]
    grid = grid or solver_grid(kind, n_t=64, L=1.0, n_x=64)
    i, k = grid.time_index(probe[0]), grid.space_index(probe[1])
    Hs = [H0] + [h for h in H_list if h != H0]

    def reduce(u, h):
        return u[:, i, :] if spatial_average else u[:, i, k]

    values = dict(zip(Hs, simulate_replicates(grid, Hs, kind, eta, m, replicates, seed, reduce)))
    entries = []
    for h in sorted(H_list, key=lambda v: -abs(v - H0)):
        d2 = (values[h] - values[H0]) ** 2
        if d2.ndim > 1:
            d2 = d2.mean(axis=-1)
        mean, se = _mean_se(d2)
        entries.append((h, float(mean), float(se)))
    return CouplingCurve(kind, H0, tuple(probe), m, entries)


# ---------------------------------------------------------------------------
# distributional distance


def ks_distance(samples_a, samples_b, min_samples: int = 500):
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a, b = np.asarray(samples_a, float), np.asarray(samples_b, float)
    if min(a.size, b.size) < min_samples:
        raise DomainError(f"need at least {min_samples} samples per group")
    res = sps.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def marginal_samples(kind, H, eta, replicates, seed, first_replicate=0, observable="increment",
                     lag_cells=4, m: int = 2, grid: SpaceTimeGrid | None = None) -> np.ndarray:
    """One sample per replicate at ``(T, 0)``: ``u`` itself or its spatial increment.

    Replicates ``first_replicate .. first_replicate + replicates - 1`` are
    used, so disjoint ranges give independent groups.
    """
    grid = grid or solver_grid(kind, n_t=16, L=0.5, n_x=16)
    i, k = grid.n_t, grid.space_index(0.0)

    def reduce(u, h):
        if observable == "value":
            return u[:, i, k]
        return u[:, i, k + lag_cells] - u[:, i, k]

    from .noise import replicate_seed
    base = replicate_seed(seed, first_replicate)
    [out] = simulate_replicates(grid, [H], kind, eta, m, replicates, base, reduce)
    return out


def ks_calibration(kind, H_a, H_b, trials, samples, seed, eta=1.0, observable="increment", level=0.01,
                   grid: SpaceTimeGrid | None = None):
    """Run ``trials`` KS comparisons of ``H_a`` vs ``H_b`` on disjoint seeds.

    Returns the rejection count at ``level`` and the list of p-values.
    """
    pvals = []
    for k in range(trials):
        a = marginal_samples(kind, H_a, eta, samples, seed, first_replicate=2 * k,
                             observable=observable, grid=grid)
        b = marginal_samples(kind, H_b, eta, samples, seed, first_replicate=2 * k + 1,
                             observable=observable, grid=grid)
        pvals.append(ks_distance(a, b)[1])
    return int(sum(pv < level for pv in pvals)), pvals


# ---------------------------------------------------------------------------
# tightness


@dataclass(frozen=True)
class TightnessRow:
    H: float
    delta: float
    ratio: float
    ratio_se: float
    status: str


def tightness_probe(kind, H_grid: Sequence[float], eta, p, replicates, seed=0, grid: SpaceTimeGrid | None = None,
                    m: int = 2, pairs: Sequence[tuple] | None = None) -> list[TightnessRow]:
    """Sup over probe pairs of ``E|u(t',x') - u(t,x)|^p / (|t'-t| + |x'-x|)^delta``.

    ``delta = p gamma`` with ``gamma`` the smallest Hölder exponent over the
    grid of ``H`` (``H`` for the wave equation, ``H/2`` for the heat equation in
    time).  When ``delta <= 2`` the Kolmogorov criterion needs a larger ``p``
    and the row reports ``"insufficient p"``.
    """
    kind = EquationKind.parse(kind)
    H_grid = [check_hurst(h) for h in H_grid]
    grid = grid or solver_grid(kind, n_t=64, L=1.0, n_x=64)
    h_min = min(H_grid)
    gamma = h_min if kind is EquationKind.WAVE else h_min / 2
    delta = p * gamma
    if pairs is None:
        pairs = default_pairs(grid)
    idx = [((grid.time_index(a[0]), round((a[1] + grid.L) / grid.dx)),
            (grid.time_index(b[0]), round((b[1] + grid.L) / grid.dx))) for a, b in pairs]
    if any(abs(kb - ka) >= grid.n_x for (_, ka), (_, kb) in idx):
        raise DomainError("probe pair offset does not fit in the observation window")
    dist = np.array([abs(b[0] - a[0]) + abs(b[1] - a[1]) for a, b in pairs])

    def reduce(u, h):
        out = []
        for (ia, ka), (ib, kb) in idx:
            s, n = kb - ka, u.shape[-1]
            # every window cell pair at the same relative offset
            ua = u[:, ia, max(0, -s): n - max(0, s)]
            ub = u[:, ib, max(0, s): n - max(0, -s)]
            out.append((np.abs(ub - ua) ** p).mean(axis=-1))
        return np.stack(out, axis=-1)

    rows = []
    data = simulate_replicates(grid, H_grid, kind, eta, m, replicates, seed, reduce)
    for h, d in zip(H_grid, data):
        mom, se = _mean_se(d)
        ratios = mom / dist**delta
        j = int(np.argmax(ratios))
        status = "ok" if delta > 2 else "insufficient p"
        rows.append(TightnessRow(h, float(delta), float(ratios[j]), float(se[j] / dist[j] ** delta), status))
    return rows


def default_pairs(grid: SpaceTimeGrid, t=None):
    """Probe pairs at geometric space, time and diagonal lags around ``(t, 0)``.

    Lags of 4, 8 and 16 cells are used where they fit in the window and in ``[0, t]``.
    """
    t = grid.T if t is None else t
    pairs = []
    for k in (4, 8, 16):
        if k > grid.n_x // 2 or k > grid.time_index(t):
            continue
        hx, ht = k * grid.dx, k * grid.dt
        pairs.append(((t, 0.0), (t, hx)))
        pairs.append(((t - ht, 0.0), (t, 0.0)))
        pairs.append(((t - ht, 0.0), (t, hx)))
    return pairs
