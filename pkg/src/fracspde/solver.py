"""Picard iteration for the mild wave and heat equations with multiplicative noise.

The scheme evolves

    u_{m+1}(t_i, .) = eta + sum_{i' < i} K_{i - i'} * (u_m(t_{i'}, .) dW(i', .))

on the periodic row of the noise grid.  The random factor is evaluated at the
left end of each slice (Ito rule).  The deterministic kernel ``K_k`` is the
Green function over the lag range ``[(k-1) dt, k dt]`` applied as an exact
Fourier multiplier:

* heat: the root-mean-square of ``exp(-s xi^2 / 2)`` over the lag range, which
  reproduces the first-chaos variance exactly;
* wave: ``sin(s |xi|) / |xi|`` at the midpoint lag (the RMS would lose the sign).

Both lag sums are carried by two-term recursions in Fourier space, so an
iterate costs one batched FFT pair plus ``O(n_t n_fft)`` work.
"""

from __future__ import annotations

import enum
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BlowUpError, ConfigError, GridError
from .greens import EquationKind, check_hurst, noise_constant
from .noise import (
    HEADER_SIZE,
    NoiseIncrementField,
    SpaceTimeGrid,
    SpectralWhiteNoise,
    _normals_to_bins,
    _slice_normals,
    _pack_header,
    bin_weights,
    replicate_seed,
    synthesize_cells,
)

BLOW_UP = 1e12


class StopMode(str, enum.Enum):
    FIXED = "fixed_iterates"
    TOLERANCE = "iterate_to_tolerance"


@dataclass(frozen=True)
class SolverConfig:
    m_max: int = 4
    fixed_point_tol: float = 1e-8
    mode: StopMode = StopMode.FIXED

    def __post_init__(self):
        if int(self.m_max) != self.m_max or self.m_max < 1:
            raise ConfigError("m_max must be an integer >= 1")
        if not self.fixed_point_tol > 0:
            raise ConfigError("fixed_point_tol must be positive")
        object.__setattr__(self, "mode", StopMode(self.mode))


@dataclass(frozen=True, eq=False)
class SolutionField:
    """Picard iterate on the time nodes ``t_0 .. t_{n_t}``.

    ``row`` holds the whole periodic row (leading batch axes allowed) and
    ``u`` is its view on the observation window.
    """

    row: np.ndarray
    m: int
    H: float
    kind: EquationKind
    eta: float
    grid: SpaceTimeGrid = field(repr=False)
    seed: int = 0
    stop_rule: str = "initial"

    @property
    def u(self) -> np.ndarray:
        return self.row[..., : self.grid.n_x]

    def value(self, t, x):
        return self.row[..., self.grid.time_index(t), self.grid.space_index(x)]


def initial_field(grid: SpaceTimeGrid, H, kind, eta, seed=0, batch=()) -> SolutionField:
    row = np.full(tuple(batch) + (grid.n_t + 1, grid.n_fft), float(eta))
    return SolutionField(row, 0, check_hurst(H), EquationKind.parse(kind), float(eta), grid, seed)


# ---------------------------------------------------------------------------
# kernels


def _fft_xi(grid: SpaceTimeGrid) -> np.ndarray:
    return np.arange(grid.n_fft // 2 + 1) * grid.dxi


def _cell_sinc(grid: SpaceTimeGrid, xi) -> np.ndarray:
    # undo the cell average carried by dW so that the band is reproduced exactly
    return np.sinc(xi * grid.dx / (2 * math.pi))


class _LagRecursion:
    """Accumulates ``conv_i = sum_{i' < i} K_{i-i'} M_{i'}`` one slice at a time."""

    def __init__(self, kind: EquationKind, grid: SpaceTimeGrid, shape):
        xi = _fft_xi(grid)
        dt = grid.dt
        scale = 1.0 / (grid.dx * _cell_sinc(grid, xi))
        self.kind = kind
        if kind is EquationKind.HEAT:
            q = dt * xi**2
            self.decay = np.exp(-q / 2)
            # sqrt((1 - e^{-q}) / q), continuous at q = 0
            self.out = np.sqrt(-np.expm1(-q) / np.where(q == 0, 1.0, q))
            self.out[q == 0] = 1.0
            self.out = self.out * scale
            self.S = np.zeros(shape, dtype=complex)
        else:
            th = dt * xi
            self.cos, self.sin = np.cos(th), np.sin(th)
            self.sin_over = dt * np.sinc(th / math.pi)           # sin(th)/xi
            self.xi_sin = xi * self.sin                            # xi sin(th)
            self.half_cos = np.cos(th / 2)
            self.half_sin_over = dt / 2 * np.sinc(th / (2 * math.pi))  # sin(th/2)/xi
            self.scale = scale
            self.S = np.zeros(shape, dtype=complex)
            self.C = np.zeros(shape, dtype=complex)

    def current(self) -> np.ndarray:
        if self.kind is EquationKind.HEAT:
            return self.out * self.S
        return self.scale * self.S

    def push(self, M: np.ndarray) -> None:
        if self.kind is EquationKind.HEAT:
            self.S = self.decay * self.S + M
        else:
            S, C = self.S, self.C
            self.S = self.cos * S + self.sin_over * C + self.half_sin_over * M
            self.C = self.cos * C - self.xi_sin * S + self.half_cos * M


def effective_kernel(kind, grid: SpaceTimeGrid, lag: int) -> np.ndarray:
    """Fourier multiplier of ``K_lag`` (without the cell correction), for tests."""
    kind = EquationKind.parse(kind)
    xi = _fft_xi(grid)
    dt = grid.dt
    if kind is EquationKind.HEAT:
        q = dt * xi**2
        phi = np.sqrt(np.where(q == 0, 1.0, -np.expm1(-q) / np.where(q == 0, 1.0, q)))
        return np.exp(-(lag - 1) * q / 2) * phi
    s = (lag - 0.5) * dt
    return s * np.sinc(s * xi / math.pi)


def _iterate(row: np.ndarray, dW: np.ndarray, kind: EquationKind, grid: SpaceTimeGrid,
             eta: float) -> np.ndarray:
    """One Picard step on whole rows; leading axes of ``row``/``dW`` are batch axes."""
    N = grid.n_fft
    M_hat = np.fft.rfft(row[..., :-1, :] * dW, axis=-1)
    batch = row.shape[:-2]
    rec = _LagRecursion(kind, grid, batch + (N // 2 + 1,))
    conv = np.empty(batch + (grid.n_t + 1, N // 2 + 1), dtype=complex)
    conv[..., 0, :] = 0.0
    for i in range(grid.n_t):
        rec.push(M_hat[..., i, :])
        conv[..., i + 1, :] = rec.current()
    out = np.fft.irfft(conv, n=N, axis=-1)
    out += eta
    _guard(out)
    return out


def _guard(u: np.ndarray) -> None:
    bad = ~np.isfinite(u) | (np.abs(u) > BLOW_UP)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise BlowUpError(
            f"|u| exceeded {BLOW_UP:g} or became non-finite at time slice {idx[-2]}; "
            "refine dt or reduce T",
            slice_index=int(idx[-2]),
        )


def _check_lineage(u: SolutionField, dW: NoiseIncrementField) -> None:
    if dW.grid != u.grid:
        raise GridError("solution and noise live on different grids")
    if dW.dW.shape[-1] != u.grid.n_fft:
        raise GridError("picard_step needs the full-row noise (noise_increments(..., full_row=True))")
    if dW.H != u.H:
        raise GridError(f"noise built for H={dW.H}, solution for H={u.H}")


def picard_step(u_m: SolutionField, dW: NoiseIncrementField) -> SolutionField:
    """Apply one Picard step with the left-point rule."""
    _check_lineage(u_m, dW)
    u_m.grid.check_margin(u_m.kind)
    row = _iterate(u_m.row, dW.dW, u_m.kind, u_m.grid, u_m.eta)
    return SolutionField(row, u_m.m + 1, u_m.H, u_m.kind, u_m.eta, u_m.grid, dW.source_seed, "step")


def _rel_change(a: np.ndarray, b: np.ndarray) -> float:
    den = np.sqrt(np.mean(b**2))
    return float(np.sqrt(np.mean((a - b) ** 2)) / den) if den > 0 else 0.0


def solve(wn: SpectralWhiteNoise, H, kind, eta, cfg: SolverConfig = SolverConfig()) -> SolutionField:
    """Iterate from ``u_0 = eta`` until ``m_max`` or until the relative grid
    L2 change drops below the tolerance (``iterate_to_tolerance`` mode).

    The stopping rule that fired is recorded in ``stop_rule``.
    """
    H = check_hurst(H)
    kind = EquationKind.parse(kind)
    grid = wn.grid
    grid.check_margin(kind)
    dW = synthesize_cells(wn.z, grid, H)
    row = np.full(wn.z.shape[:-2] + (grid.n_t + 1, grid.n_fft), float(eta))
    rule = "m_max"
    m = 0
    for m in range(1, cfg.m_max + 1):
        new = _iterate(row, dW, kind, grid, float(eta))
        change = _rel_change(new, row)
        row = new
        if cfg.mode is StopMode.TOLERANCE and change < cfg.fixed_point_tol:
            rule = "tolerance"
            break
    return SolutionField(row, m, H, kind, float(eta), grid, wn.seed, rule)


def picard_distances(wn: SpectralWhiteNoise, H, kind, eta, m_max: int) -> list[float]:
    """Grid-L2 distances ``||u_{m+1} - u_m||`` for ``m = 0 .. m_max - 1``."""
    H, kind = check_hurst(H), EquationKind.parse(kind)
    grid = wn.grid
    dW = synthesize_cells(wn.z, grid, H)
    row = np.full(wn.z.shape[:-2] + (grid.n_t + 1, grid.n_fft), float(eta))
    out = []
    for _ in range(m_max):
        new = _iterate(row, dW, kind, grid, float(eta))
        out.append(float(np.sqrt(np.mean((new - row)[..., : grid.n_x] ** 2))))
        row = new
    return out


# ---------------------------------------------------------------------------
# replicate batches


def batch_white_noise(grid: SpaceTimeGrid, seeds: Sequence[int]) -> np.ndarray:
    """Stack the white-noise arrays of several seeds: shape ``(len(seeds), n_t, n_xi)``."""
    v = np.stack([np.stack([_slice_normals(s, i, grid.n_xi) for i in range(grid.n_t)])
                  for s in seeds])
    return _normals_to_bins(v, grid.n_xi, grid.dt * grid.dxi)


_THREADS = 1


def set_threads(n: int) -> None:
    """Worker threads for replicate chunks.  Results do not depend on ``n``:
    every replicate has its own seed and FFTs act row by row."""
    global _THREADS
    if int(n) < 1:
        raise ConfigError("threads must be >= 1")
    _THREADS = int(n)


def simulate_replicates(grid: SpaceTimeGrid, Hs: Sequence[float], kind, eta, m: int,
                        replicates: int, seed: int, reduce: Callable[[np.ndarray, float], np.ndarray],
                        chunk: int = 32) -> list[np.ndarray]:
    """Run ``m`` Picard steps for many replicates and several ``H`` on shared noise.

    ``reduce(u_window, H)`` receives the window iterate of a chunk (shape
    ``(chunk, n_t + 1, n_x)``) and returns per-replicate data; the results are
    concatenated per ``H``.  Replicate ``r`` always uses
    ``replicate_seed(seed, r)``, so chunking and threading never change results.
    """
    kind = EquationKind.parse(kind)
    Hs = [check_hurst(h) for h in Hs]
    grid.check_margin(kind)

    def run_chunk(start):
        seeds = [replicate_seed(seed, r) for r in range(start, min(start + chunk, replicates))]
        z = batch_white_noise(grid, seeds)
        out = []
        for h in Hs:
            dW = synthesize_cells(z, grid, h)
            row = np.full((len(seeds), grid.n_t + 1, grid.n_fft), float(eta))
            for _ in range(m):
                row = _iterate(row, dW, kind, grid, float(eta))
            out.append(np.array(reduce(row[..., : grid.n_x], h), copy=True))
        return out

    starts = range(0, replicates, chunk)
    if _THREADS > 1:
        with ThreadPoolExecutor(_THREADS) as pool:
            results = list(pool.map(run_chunk, starts))
    else:
        results = [run_chunk(s) for s in starts]
    return [np.concatenate([r[k] for r in results], axis=0) for k in range(len(Hs))]


# ---------------------------------------------------------------------------
# first-order integrals of deterministic integrands


def ito_integral(S, wn: SpectralWhiteNoise | np.ndarray, H, grid: SpaceTimeGrid | None = None):
    """Wiener integral of a deterministic integrand against ``W^H``.

    Parameters
    ----------
    S : callable or ndarray
        Either ``S(t, xi)`` returning the spatial Fourier transform of the
        integrand at time ``t`` (its RMS over each slice is used), or an array
        ``(n_t, n_x)`` of cell values on the observation window.
    wn : SpectralWhiteNoise or ndarray
        The noise, or a raw ``z`` array with leading batch axes (then ``grid``
        is required).
    H : float

    Returns
    -------
    float or ndarray
        ``Re sqrt(c_H) sum_i sum_j FS_i(xi_j) |xi_j|^(1/2-H) z(i, j)`` per realization.
    """
    H = check_hurst(H)
    if isinstance(wn, SpectralWhiteNoise):
        z, grid = wn.z, wn.grid
    else:
        z = wn
    coef = integrand_coefficients(S, grid, H)
    coef[..., grid.n_xi // 2] = coef[..., grid.n_xi // 2].real
    out = np.real(np.tensordot(z, coef, axes=([-2, -1], [0, 1])))
    return float(out) if out.ndim == 0 else out


def _slice_rule(levels=14, order=4):
    """Gauss-Legendre on [0, 1] with panels graded geometrically toward both ends.

    Resolves boundary layers such as ``exp(-(t - s) xi^2)`` near ``s = t``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    half = [0.0] + [0.5 * 4.0 ** -k for k in range(levels - 1, -1, -1)]
    edges = np.unique(np.concatenate([half, 1 - np.asarray(half)]))
    a, b = edges[:-1, None], edges[1:, None]
    return (a + (b - a) * (x + 1) / 2).ravel(), ((b - a) / 2 * w).ravel()


def integrand_coefficients(S, grid: SpaceTimeGrid, H) -> np.ndarray:
    """``sqrt(c_H) FS_i(xi_j) w_j`` on the (slice, bin) grid."""
    xi = grid.xi
    if callable(S):
        # RMS over the slice with the midpoint phase: the variance of each
        # slice integral is then exact
        nodes, weights = _slice_rule()
        FS = np.empty((grid.n_t, xi.size), dtype=complex)
        for i in range(grid.n_t):
            t0 = i * grid.dt
            ms = np.zeros(xi.size)
            for v, w in zip(nodes, weights):
                f = np.asarray(S(t0 + v * grid.dt, xi), dtype=complex) * np.ones_like(xi)
                ms += w * np.abs(f) ** 2
            mid = np.asarray(S(t0 + grid.dt / 2, xi), dtype=complex) * np.ones_like(xi)
            FS[i] = np.sqrt(ms) * np.exp(1j * np.angle(mid))
    else:
        S = np.asarray(S, dtype=float)
        if S.shape != (grid.n_t, grid.n_x):
            raise GridError(f"integrand must have shape {(grid.n_t, grid.n_x)}")
        # cell indicators: phase of each cell centre times the cell sinc
        phase = np.exp(-1j * np.outer(grid.x, xi))
        FS = (S @ phase) * grid.dx * np.sinc(xi * grid.dx / (2 * math.pi))
    return math.sqrt(noise_constant(H)) * bin_weights(grid, H) * FS


def ito_variance(S, grid: SpaceTimeGrid, H) -> float:
    """Exact variance of :func:`ito_integral` on the grid (discrete isometry)."""
    coef = integrand_coefficients(S, grid, H)
    cell = grid.dt * grid.dxi
    return float(np.sum(np.abs(coef) ** 2) * cell)


# ---------------------------------------------------------------------------
# export

KIND_CODE = {EquationKind.WAVE: 0, EquationKind.HEAT: 1}
_EXTRA = struct.Struct("<IdI")


def dump_solution(sol: SolutionField, path) -> None:
    """Binary dump: 64-byte header (magic ``SOL1``, grid, H, seed, kind, eta, m)
    followed by row-major little-endian float64 values on the window."""
    if sol.row.ndim != 2:
        raise ValueError("dump_solution expects a single realization")
    extra = _EXTRA.pack(KIND_CODE[sol.kind], sol.eta, sol.m)
    head = _pack_header(b"SOL1", sol.grid, sol.H, sol.seed, extra)
    data = np.ascontiguousarray(sol.u, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(data.tobytes())


def load_solution(path) -> tuple[dict, np.ndarray]:
    from .noise import read_header
    with open(path, "rb") as fh:
        buf = fh.read()
    head = read_header(buf)
    if head["magic"] != "SOL1":
        raise ValueError(f"not a solution dump: magic {head['magic']!r}")
    kind, eta, m = _EXTRA.unpack_from(buf, 44)
    head.update(kind=[k for k, v in KIND_CODE.items() if v == kind][0].value, eta=eta, m=m)
    data = np.frombuffer(buf, dtype="<f8", offset=HEADER_SIZE).reshape(head["n_t"] + 1, head["n_x"])
    return head, data


def slice_rows(sol: SolutionField, times: Sequence[float] | None = None):
    """Long-format rows ``(t, x, u)`` for CSV export."""
    grid = sol.grid
    idx = range(grid.n_t + 1) if times is None else [grid.time_index(t) for t in times]
    for i in idx:
        t = i * grid.dt
        for x, val in zip(grid.x, sol.u[i]):
            yield (t, float(x), float(val))


def solver_grid(kind, T=1.0, n_t=256, L=4.0, n_x=1024) -> SpaceTimeGrid:
    """Grid with ``xi_max = pi / dx`` and the smallest period ``2L 2^k`` that
    holds the window plus the kernel reach on both sides."""
    kind = EquationKind.parse(kind)
    reach = T if kind is EquationKind.WAVE else 6 * math.sqrt(T)
    factor = 1
    while 2 * L * factor < 2 * L + 2 * reach - 1e-12:
        factor *= 2
    return SpaceTimeGrid(T=T, n_t=n_t, L=L, n_x=n_x, n_xi=n_x * factor)


def grid_first_chaos(grid: SpaceTimeGrid, kind, H_a, H_b=None, t=None, eta=1.0) -> float:
    """Exact first-chaos second moment of the scheme on ``grid``.

    With ``H_b`` the coupled gap ``E|I_1^{H_a} - I_1^{H_b}|^2`` is returned.
    Exact when ``n_xi == n_fft`` (default ``xi_max``); this isolates the
    band cutoff and the lag rule from Monte Carlo error.
    """
    kind = EquationKind.parse(kind)
    t = grid.T if t is None else t
    n = grid.time_index(t)
    xi = np.abs(grid.xi)
    wa = math.sqrt(noise_constant(H_a)) * bin_weights(grid, check_hurst(H_a))
    w = wa if H_b is None else wa - math.sqrt(noise_constant(H_b)) * bin_weights(grid, check_hurst(H_b))
    from .chaos import lag_kernel
    k2 = sum(lag_kernel(kind, grid.dt, k, xi) ** 2 for k in range(1, n + 1))
    return float(eta) ** 2 * float(np.sum(k2 * w**2) * grid.dt * grid.dxi)
