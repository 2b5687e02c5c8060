"""Spectral white noise and the fractional noise family built on it.

A single complex Gaussian measure on (time slice x frequency bin) cells drives
``W^H`` for every Hurst index at once:

    dW^H(i, cell) = sqrt(c_H) sum_j F[1_cell](xi_j) |xi_j|^(1/2 - H) z(i, j)

Changing ``H`` only changes deterministic weights, so fields for different
``H`` computed from one :class:`SpectralWhiteNoise` are pathwise coupled.

Layout conventions
------------------
* Frequencies are stored in FFT order, ``xi_j = j * dxi`` with
  ``j = 0, 1, ..., n_xi/2 - 1, -n_xi/2, ..., -1``.
* The discrete field is periodic with period ``P = 2 pi / dxi``.  The periodic
  row has ``n_fft = P / dx`` cells; cell ``k`` is centred at node
  ``x_k = -L + k dx``.  The observation window is cells ``0 .. n_x - 1``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DomainError, GridError
from .greens import EquationKind, check_hurst, noise_constant


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpaceTimeGrid:
    T: float = 1.0
    n_t: int = 256
    L: float = 4.0
    n_x: int = 1024
    n_xi: int = 4096
    xi_max: float | None = None

    def __post_init__(self):
        for name in ("T", "L"):
            if not getattr(self, name) > 0:
                raise GridError(f"{name} must be positive")
        for name in ("n_t", "n_x", "n_xi"):
            value = getattr(self, name)
            if int(value) != value or value < 2:
                raise GridError(f"{name} must be an integer >= 2")
            object.__setattr__(self, name, int(value))
        if not (_is_pow2(self.n_x) and _is_pow2(self.n_xi)):
            raise GridError("n_x and n_xi must be powers of two")
        if self.xi_max is None:
            object.__setattr__(self, "xi_max", math.pi / self.dx)
        if not self.xi_max > 0:
            raise GridError("xi_max must be positive")
        ratio = self.period / self.dx
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < self.n_x:
            raise GridError(
                f"period/dx = {ratio:g} must be an integer >= n_x so that the "
                "frequency grid aligns with the spatial FFT"
            )

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dx(self) -> float:
        return 2 * self.L / self.n_x

    @property
    def dxi(self) -> float:
        return 2 * self.xi_max / self.n_xi

    @property
    def period(self) -> float:
        return 2 * math.pi / self.dxi

    @property
    def n_fft(self) -> int:
        return int(round(self.period / self.dx))

    @property
    def times(self) -> np.ndarray:
        """Slice start times plus the final time, ``n_t + 1`` values."""
        return np.arange(self.n_t + 1) * self.dt

    @property
    def x(self) -> np.ndarray:
        """Observation-window nodes (cell centres)."""
        return -self.L + np.arange(self.n_x) * self.dx

    @property
    def xi(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_xi, d=1.0 / self.n_xi) * self.dxi

    def time_index(self, t) -> int:
        i = t / self.dt
        if abs(i - round(i)) > 1e-9 * max(1.0, i):
            raise DomainError(f"t={t} is not on the time grid (dt={self.dt})")
        return int(round(i))

    def space_index(self, x) -> int:
        k = (x + self.L) / self.dx
        if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
            raise DomainError(f"x={x} is not a grid node (dx={self.dx})")
        k = int(round(k))
        if not 0 <= k < self.n_x:
            raise DomainError(f"x={x} outside the observation window")
        return k

    def refined(self) -> "SpaceTimeGrid":
        """Grid with ``dt`` and ``dx`` halved; the period ``P`` is kept."""
        return replace(self, n_t=2 * self.n_t, n_x=2 * self.n_x, n_xi=2 * self.n_xi,
                       xi_max=2 * self.xi_max)

    def reach(self, kind) -> float:
        """Spatial reach of the Green kernel over ``[0, T]``."""
        kind = EquationKind.parse(kind)
        return self.T if kind is EquationKind.WAVE else 6 * math.sqrt(self.T)

    def check_margin(self, kind) -> None:
        """The periodic domain must hold the window plus the kernel reach on both sides."""
        need = 2 * self.L + 2 * self.reach(kind)
        if self.period < need - 1e-12:
            raise GridError(
                f"period {self.period:g} < 2L + 2*reach = {need:g}; increase n_xi "
                "or decrease xi_max to avoid wrap-around"
            )

    def as_dict(self) -> dict:
        return {"T": self.T, "n_t": self.n_t, "L": self.L, "n_x": self.n_x,
                "n_xi": self.n_xi, "xi_max": self.xi_max}


# ---------------------------------------------------------------------------
# randomness


def replicate_seed(seed: int, replicate: int) -> int:
    """Independent 64-bit seed for replicate ``replicate`` of a run keyed by ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, np.uint64)[0])


def _slice_normals(seed: int, i: int, n: int) -> np.ndarray:
    # counter-based stream per (seed, slice); draws are prefix stable in n
    bitgen = np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF, counter=[0, 0, 0, int(i)])
    return np.random.Generator(bitgen).standard_normal(n)


def _normals_to_bins(v: np.ndarray, n_xi: int, cell: float) -> np.ndarray:
    """Map ``n_xi`` standard normals (bin 0, then pairs for 1..n/2-1, then the
    unpaired bin -n/2) to a Hermitian complex row in FFT order."""
    half = n_xi // 2
    z = np.empty(v.shape[:-1] + (n_xi,), dtype=complex)
    z[..., 0] = v[..., 0] * math.sqrt(cell)
    pairs = v[..., 1:-1].reshape(v.shape[:-1] + (half - 1, 2))
    pos = (pairs[..., 0] + 1j * pairs[..., 1]) * math.sqrt(cell / 2)
    z[..., 1:half] = pos
    z[..., half + 1:] = np.conj(pos[..., ::-1])
    z[..., half] = v[..., -1] * math.sqrt(cell)
    return z


@dataclass(frozen=True, eq=False)
class SpectralWhiteNoise:
    """One realization of the complex white noise on the cell grid.

    ``z[i, j]`` is the noise mass of the cell ``[t_i, t_i + dt) x bin_j``.
    """

    z: np.ndarray
    seed: int
    grid: SpaceTimeGrid

    def __post_init__(self):
        self.z.setflags(write=False)


def sample_white_noise(grid: SpaceTimeGrid, seed: int) -> SpectralWhiteNoise:
    """Draw the Hermitian complex Gaussian array for ``(grid, seed)``.

    Each slice is an independent counter-based stream, so the draws of slice
    ``i`` do not depend on ``n_t``, and enlarging ``n_xi`` at fixed ``dxi``
    keeps the low-frequency bins.
    """
    seed = int(seed)
    v = np.stack([_slice_normals(seed, i, grid.n_xi) for i in range(grid.n_t)])
    return SpectralWhiteNoise(_normals_to_bins(v, grid.n_xi, grid.dt * grid.dxi), seed, grid)


def bin_weights(grid: SpaceTimeGrid, h) -> np.ndarray:
    """Square root of the bin average of ``|xi|^(1 - 2H)``, FFT order.

    Averaging over the bin keeps the low-frequency energy right when the
    density is singular at 0 (``H > 1/2``).
    """
    a = 1 - 2 * h
    d = grid.dxi
    xi = np.abs(grid.xi)
    lo = np.maximum(xi - d / 2, 0.0)
    hi = xi + d / 2
    # the zero bin spans [-d/2, d/2], so both halves contribute
    avg = (hi ** (a + 1) - lo ** (a + 1)) / ((a + 1) * d)
    avg[xi == 0] *= 2
    return np.sqrt(avg)


def indicator_fourier(xi, a, b):
    """``F[1_[a,b]](xi)`` with the value ``b - a`` at 0."""
    xi = np.asarray(xi, dtype=float)
    safe = np.where(xi == 0, 1.0, xi)
    val = (np.exp(-1j * safe * a) - np.exp(-1j * safe * b)) / (1j * safe)
    return np.where(xi == 0, b - a, val)


def _nyquist_real(coef: np.ndarray, n_xi: int) -> np.ndarray:
    # the unpaired bin is its own mirror: keep the Hermitian part of its weight
    coef = np.array(coef, dtype=complex, copy=True)
    coef[..., n_xi // 2] = coef[..., n_xi // 2].real
    return coef


def spectral_sum(wn_z: np.ndarray, coef: np.ndarray, n_xi: int) -> np.ndarray:
    """``Re sum_j coef_j z_j`` along the last axis with the Nyquist convention."""
    return np.real(np.tensordot(wn_z, _nyquist_real(coef, n_xi), axes=([-1], [-1])))


def cell_transfer(grid: SpaceTimeGrid, h) -> np.ndarray:
    """Per-bin factor mapping ``z`` to cell increments before the FFT pass.

    Includes ``sqrt(c_H)``, the bin weight, the transform of one cell
    indicator and the phase of the first cell's left edge.
    """
    xi = grid.xi
    left = -grid.L - grid.dx / 2
    s = indicator_fourier(xi, left, left + grid.dx)
    return math.sqrt(noise_constant(h)) * bin_weights(grid, h) * s


def synthesize_cells(z: np.ndarray, grid: SpaceTimeGrid, h) -> np.ndarray:
    """Noise increments on the whole periodic row (``n_fft`` cells).

    ``z`` may carry leading batch axes; the last axis is frequency.
    """
    N = grid.n_fft
    spec = _fold(z * cell_transfer(grid, h), grid)
    # sum_j spec_j exp(-2 pi i j k / N) is real for Hermitian spec
    return np.fft.irfft(np.conj(spec[..., : N // 2 + 1]), n=N, axis=-1) * N


def _fold(b, grid):
    """Alias bins onto the ``n_fft``-point frequency circle."""
    n, N = grid.n_xi, grid.n_fft
    j = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    half = n // 2
    spec = np.zeros(b.shape[:-1] + (N,), dtype=complex)
    paired = np.ones(n, dtype=bool)
    paired[half] = False
    np.add.at(spec, (..., j[paired] % N), b[..., paired])
    # split the unpaired bin symmetrically between -Xi and +Xi
    nyq = b[..., half] / 2
    np.add.at(spec, (..., (-half) % N), nyq)
    np.add.at(spec, (..., half % N), np.conj(nyq))
    return spec


@dataclass(frozen=True, eq=False)
class NoiseIncrementField:
    dW: np.ndarray
    H: float
    source_seed: int
    grid: SpaceTimeGrid = field(repr=False)


def noise_increments(wn: SpectralWhiteNoise, H, full_row=False) -> NoiseIncrementField:
    """Cell increments of ``W^H`` for every time slice.

    With ``full_row`` the whole periodic row (``n_fft`` cells) is returned, as
    the solver needs; otherwise only the observation window.
    """
    H = check_hurst(H)
    dW = synthesize_cells(wn.z, wn.grid, H)
    if not full_row:
        dW = dW[..., : wn.grid.n_x]
    return NoiseIncrementField(dW, H, wn.seed, wn.grid)


def synthesis_residue(wn: SpectralWhiteNoise, H) -> float:
    """Largest imaginary part of the complex synthesis relative to the field RMS."""
    grid = wn.grid
    b = wn.z * cell_transfer(grid, H)
    b = _fold(b, grid)
    full = np.fft.fft(b, axis=-1)
    rms = np.sqrt(np.mean(full.real**2))
    return float(np.max(np.abs(full.imag)) / rms)


def field_value(wn: SpectralWhiteNoise, H, t, x) -> float:
    """Discretized ``W^H(t, x)``: the slices starting before ``t`` and the bins
    weighted by ``F[1_[0,x]]``."""
    grid = wn.grid
    H = check_hurst(H)
    if not (0 <= t <= grid.T + 1e-12) or abs(x) > grid.L:
        raise DomainError(f"(t, x) = ({t}, {x}) outside [0, T] x [-L, L]")
    n_slices = int(math.ceil(t / grid.dt - 1e-9))
    if n_slices == 0 or x == 0:
        return 0.0
    Z = wn.z[:n_slices].sum(axis=0)
    coef = math.sqrt(noise_constant(H)) * bin_weights(grid, H) * indicator_fourier(grid.xi, 0.0, x)
    return float(spectral_sum(Z, coef, grid.n_xi))


def fbm_sheet_covariance(H, p, q) -> float:
    """``1/2 (s ^ t)(|x|^2H + |y|^2H - |x - y|^2H)`` for points ``p=(s,x), q=(t,y)``."""
    (s, x), (t, y) = p, q
    return 0.5 * min(s, t) * (abs(x) ** (2 * H) + abs(y) ** (2 * H) - abs(x - y) ** (2 * H))


def field_samples(grid: SpaceTimeGrid, Hs: Sequence[float], points, replicates: int, seed: int,
                  batch: int = 256) -> np.ndarray:
    """Coupled samples of ``W^H`` at ``points`` for several ``H``.

    Returns an array ``(replicates, len(Hs), len(points))``.  Replicate ``r``
    uses the white noise keyed by ``replicate_seed(seed, r)``.
    """
    Hs = [check_hurst(h) for h in Hs]
    for t, x in points:
        if not (0 <= t <= grid.T + 1e-12) or abs(x) > grid.L:
            raise DomainError(f"point ({t}, {x}) outside the grid")
    counts = [int(math.ceil(t / grid.dt - 1e-9)) for t, _ in points]
    xi = grid.xi
    coefs = np.stack([
        np.stack([math.sqrt(noise_constant(h)) * bin_weights(grid, h) * indicator_fourier(xi, 0.0, x)
                  for (_, x) in points])
        for h in Hs
    ])  # (nH, nP, n_xi)
    coefs = _nyquist_real(coefs, grid.n_xi)
    out = np.empty((replicates, len(Hs), len(points)))
    cell = grid.dt * grid.dxi
    n_max = max(counts) if counts else 0
    for r in range(replicates):
        s = replicate_seed(seed, r)
        if n_max == 0:
            out[r] = 0.0
            continue
        v = np.stack([_slice_normals(s, i, grid.n_xi) for i in range(n_max)])
        z = _normals_to_bins(v, grid.n_xi, cell)
        csum = np.cumsum(z, axis=0)
        Z = np.stack([csum[c - 1] if c > 0 else np.zeros(grid.n_xi, complex) for c in counts])
        out[r] = np.real(np.einsum("hpj,pj->hp", coefs, Z))
    return out


@dataclass(frozen=True)
class CovarianceEstimate:
    points: list
    H: float
    value: np.ndarray
    se: np.ndarray
    replicates: int


def empirical_covariance(H, points, replicates: int, seed: int, grid: SpaceTimeGrid | None = None):
    """Monte Carlo covariance of ``W^H`` at ``points`` with standard errors.

    The field is centred, so ``E[X_a X_b]`` is estimated directly.
    """
    if replicates < 100:
        raise DomainError("empirical_covariance needs at least 100 replicates")
    grid = grid or covariance_grid()
    X = field_samples(grid, [H], points, replicates, seed)[:, 0, :]
    prod = X[:, :, None] * X[:, None, :]
    value = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(replicates)
    return CovarianceEstimate(list(points), float(H), value, se, replicates)


def covariance_grid(T=1.0, n_t=4, L=2.0, period=16.0, xi_max=3000.0) -> SpaceTimeGrid:
    """Coarse-in-time, wide-band grid suited to point evaluations of ``W^H``."""
    dxi = 2 * math.pi / period
    n_xi = 1 << int(math.ceil(math.log2(2 * xi_max / dxi)))
    # n_x only fixes the window resolution; point values use the bins directly
    n_x = 2
    while 2 * n_x <= min(n_xi, 1024) and (period * n_x / (4 * L)) % 1 == 0:
        n_x *= 2
    return SpaceTimeGrid(T=T, n_t=n_t, L=L, n_x=n_x, n_xi=n_xi, xi_max=n_xi * dxi / 2)


# ---------------------------------------------------------------------------
# binary dump

HEADER_SIZE = 64
_BASE = struct.Struct("<4sIIdddQ")


def _pack_header(magic: bytes, grid: SpaceTimeGrid, H: float, seed: int, extra: bytes = b"") -> bytes:
    head = _BASE.pack(magic, grid.n_t, grid.n_x, grid.T, grid.L, H, seed & 0xFFFFFFFFFFFFFFFF) + extra
    if len(head) > HEADER_SIZE:
        raise ValueError("header overflow")
    return head.ljust(HEADER_SIZE, b"\0")


def dump_noise(field_: NoiseIncrementField, path) -> None:
    """Write ``magic FNZ1 | n_t n_x T L H seed | pad`` then row-major LE float64."""
    data = np.ascontiguousarray(field_.dW[..., : field_.grid.n_x], dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_pack_header(b"FNZ1", field_.grid, field_.H, field_.source_seed))
        fh.write(data.tobytes())


def read_header(buf: bytes) -> dict:
    magic, n_t, n_x, T, L, H, seed = _BASE.unpack_from(buf, 0)
    return {"magic": magic.decode("ascii"), "n_t": n_t, "n_x": n_x, "T": T, "L": L, "H": H, "seed": seed}


def load_noise(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    head = read_header(buf)
    if head["magic"] != "FNZ1":
        raise ValueError(f"not a noise dump: magic {head['magic']!r}")
    data = np.frombuffer(buf, dtype="<f8", offset=HEADER_SIZE).reshape(head["n_t"], head["n_x"])
    return head, data
