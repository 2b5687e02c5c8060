"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line (see ``conftest.py``); the lines are
collected in the terminal summary.  Seeds are fixed once for the whole suite.
"""

import math
import warnings

import numpy as np
import pytest

from fracspde.chaos import chaos_moment_gap
from fracspde.cli import main
from fracspde.greens import (
    first_chaos_variance,
    noise_constant,
    riesz_identity,
    riesz_quadrature,
    spectral_energy,
    spectral_energy_quadrature,
)
from fracspde.noise import (
    SpaceTimeGrid,
    covariance_grid,
    empirical_covariance,
    fbm_sheet_covariance,
    replicate_seed,
)
from fracspde.solver import (
    batch_white_noise,
    ito_integral,
    ito_variance,
    simulate_replicates,
    solver_grid,
)
from fracspde.stats import (
    coupling_curve,
    default_lags,
    expected_slope,
    holder_fit,
    holder_grid,
    ks_calibration,
    tightness_probe,
)

SEED = 20240611


# ---------------------------------------------------------------------------
# 1, 2: deterministic oracles


def test_closed_form_oracles(report):
    worst = 0.0
    for kind in ("wave", "heat"):
        for alpha in (-0.5, -0.2, 0.0, 0.2, 0.5):
            for T in (0.5, 1.0):
                closed = spectral_energy(kind, alpha, T)
                quad = spectral_energy_quadrature(kind, alpha, T)
                worst = max(worst, abs(quad - closed) / closed)
    ok = report(1, "spectral energy quadrature vs closed forms", worst < 1e-4, f"max rel err {worst:.2e} < 1e-4")
    assert ok


def test_riesz_identity(report):
    worst = 0.0
    for h in (0.26, 0.3, 0.4, 0.49):
        for xi in (0.5, 1.0, 3.0):
            closed = riesz_identity(h, xi)
            worst = max(worst, abs(riesz_quadrature(h, xi) - closed) / abs(closed))
    ok = report(2, "Riesz identity", worst < 1e-4, f"max rel err {worst:.2e} < 1e-4")
    assert ok


# ---------------------------------------------------------------------------
# 3: noise covariance


def test_noise_covariance(report):
    points = [(1.0, 1.0), (1.0, -1.0), (0.5, 0.5), (1.0, 0.25)]
    grid = covariance_grid(n_t=2)
    worst = 0.0
    for h in (0.3, 0.5, 0.75):
        est = empirical_covariance(h, points, 10_000, SEED, grid)
        exact = np.array([[fbm_sheet_covariance(h, p, q) for q in points] for p in points])
        worst = max(worst, float(np.max(np.abs(est.value - exact) / est.se)))
    ok = report(3, "noise covariance, 10^4 replicates", worst <= 3.0, f"max |err|/SE {worst:.2f} <= 3")
    assert ok


# ---------------------------------------------------------------------------
# 4: Ito isometry


def _green(kind, tau, xi):
    tau, xi = np.asarray(tau, float), np.asarray(xi, float)
    if kind == "wave":
        return tau * np.sinc(tau * xi / np.pi)
    return np.exp(-tau * xi**2 / 2)


def _gauss(sigma):
    return lambda xi: np.exp(-((sigma * np.asarray(xi, float)) ** 2) / 2)


def _box(xi):
    # transform of the indicator of [0, 1]
    xi = np.asarray(xi, float)
    safe = np.where(xi == 0, 1.0, xi)
    return np.where(xi == 0, 1.0 + 0j, (1 - np.exp(-1j * safe)) / (1j * safe))


def _flat(xi):
    return np.ones_like(np.asarray(xi, float))


def _one(s):
    return np.ones_like(np.asarray(s, float))


# (kind, H, amplitude a(s), time shift, spatial multiplier, xi cut of the reference or None for closed form)
ISOMETRY_CASES = [
    ("wave", 0.5, _one, 0.0, _flat, None),
    ("wave", 0.75, _one, 0.0, _flat, None),
    ("wave", 0.3, _one, 0.0, _gauss(0.05), 300.0),
    ("wave", 0.6, lambda s: np.exp(-s), 0.0, _gauss(0.05), 300.0),
    ("wave", 0.4, _one, 0.0, _box, 400.0),
    ("heat", 0.5, _one, 0.0, _flat, None),
    ("heat", 0.75, _one, 0.0, _flat, None),
    ("heat", 0.3, _one, 0.1, _flat, 150.0),
    ("heat", 0.4, lambda s: 1 + s, 0.05, _flat, 200.0),
    ("heat", 0.6, _one, 0.0, _box, 400.0),
]


def _integrand(kind, amp, shift, mult):
    return lambda t, xi: amp(t) * _green(kind, 1 - t + shift, xi) * mult(xi)


def _spectral_reference(kind, H, amp, shift, mult, cut):
    """``c_H int_0^1 int_R |a(s) FG_{1-s+shift}(xi) m(xi)|^2 |xi|^(1-2H) dxi ds``
    by tensor Gauss-Legendre; the chosen multipliers make the tail past ``cut``
    negligible."""
    a = 1 - 2 * H
    x, w = np.polynomial.legendre.leggauss(24)
    u, wu = (x + 1) / 2, w / 2
    # xi = u^2 on [0, 1] smooths the |xi|^a singularity
    xi0, w0 = u**2, wu * 2 * u * u ** (2 * a)
    edges = np.arange(1.0, cut + 1e-9, 0.25)
    lo, hi = edges[:-1, None], edges[1:, None]
    xi1 = (lo + (hi - lo) * (x + 1) / 2).ravel()
    w1 = ((hi - lo) / 2 * w).ravel() * xi1**a
    xi, wx = np.concatenate([xi0, xi1]), np.concatenate([w0, w1])
    if kind == "wave":
        se = np.linspace(0.0, 1.0, max(100, int(cut / 2)) + 1)
    else:
        se = np.unique(np.concatenate([[0.0], 1 - np.geomspace(1e-9, 1.0, 400)]))
    xs, ws = np.polynomial.legendre.leggauss(8)
    s0, s1 = se[:-1, None], se[1:, None]
    s = (s0 + (s1 - s0) * (xs + 1) / 2).ravel()
    wsv = ((s1 - s0) / 2 * ws).ravel()
    total = 0.0
    for k in range(0, xi.size, 2000):
        blk = xi[k:k + 2000]
        g = (amp(s)[:, None] * _green(kind, 1 - s[:, None] + shift, blk[None, :])) ** 2
        total += float(wsv @ g @ (np.abs(mult(blk)) ** 2 * wx[k:k + 2000]))
    return 2 * noise_constant(H) * total


def test_ito_isometry(report):
    grid = SpaceTimeGrid(T=1.0, n_t=16, L=1.0, n_x=256, n_xi=2048)
    seeds, chunk = 10_000, 500
    S = [_integrand(kind, amp, shift, mult) for kind, _, amp, shift, mult, _ in ISOMETRY_CASES]
    samples = [[] for _ in S]
    for start in range(0, seeds, chunk):
        z = batch_white_noise(grid, [replicate_seed(SEED, r) for r in range(start, start + chunk)])
        for k, (case, f) in enumerate(zip(ISOMETRY_CASES, S)):
            samples[k].append(ito_integral(f, z, case[1], grid=grid))
    zs, rows = [], []
    for (kind, H, amp, shift, mult, cut), f, xs in zip(ISOMETRY_CASES, S, samples):
        X2 = np.concatenate(xs) ** 2
        if cut is None:
            ref = noise_constant(H) * spectral_energy_quadrature(kind, 1 - 2 * H, 1.0)
            assert ref == pytest.approx(first_chaos_variance(kind, H, 1.0), rel=1e-4)
        else:
            ref = _spectral_reference(kind, H, amp, shift, mult, cut)
        se = X2.std(ddof=1) / math.sqrt(X2.size)
        zs.append(abs(X2.mean() - ref) / se)
        rows.append(f"{kind} H={H}: {X2.mean():.4f} vs {ref:.4f} (discrete {ito_variance(f, grid, H):.4f})")
    worst = max(zs)
    ok = report(4, "Ito isometry, 5 integrands per kind, 10^4 seeds", worst <= 3.0,
                f"max |err|/SE {worst:.2f} <= 3")
    print("\n".join(rows))
    assert ok


# ---------------------------------------------------------------------------
# 5: chaos oracle vs the solver


@pytest.mark.parametrize("kind", ["heat", "wave"])
def test_first_iterate_second_moment(report, kind):
    target = 1 + first_chaos_variance(kind, 0.5, 1.0)  # 1 + 1/sqrt(pi), 1.25

    def reduce(u, h):
        # stationary in x: average u(1, x)^2 over the window
        return (u[:, -1, :] ** 2).mean(axis=-1)

    est = []
    for grid in (solver_grid(kind, n_t=64, L=1.0, n_x=64), solver_grid(kind, n_t=128, L=1.0, n_x=128)):
        [d] = simulate_replicates(grid, [0.5], kind, 1.0, 1, 4000, SEED, reduce)
        est.append((float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))))
    (coarse, _), (fine, fine_se) = est
    slack = abs(fine - coarse)
    err = abs(fine - target)
    ok = report(5, f"m=1 second moment, {kind}", err <= 3 * fine_se + slack,
                f"{fine:.4f} vs {target:.4f}: |err| {err:.4f} <= 3 SE {3 * fine_se:.4f} + slack {slack:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 6: continuity in H


def test_h_continuity(report):
    Hs = [0.35, 0.4, 0.45, 0.48, 0.5]
    cc = coupling_curve("wave", 0.5, Hs, 1.0, (1.0, 0.0), 2000, SEED, m=2,
                        grid=solver_grid("wave", n_t=64, L=1.0, n_x=64))
    vals = [v for _, v, _ in cc.entries]
    ses = [s for _, _, s in cc.entries]
    z = [(a - b) / math.hypot(sa, sb) for a, b, sa, sb in zip(vals[:-1], vals[1:], ses[:-1], ses[1:])]
    mc_ok = all(a > b for a, b in zip(vals[:-1], vals[1:])) and vals[-1] == 0.0
    gaps = [chaos_moment_gap("wave", 1.0, 1.0, 1, h, 0.5).value for h in Hs]
    gap_ok = all(a > b for a, b in zip(gaps[:-1], gaps[1:])) and gaps[-1] == 0.0
    ok = report(6, "coupled L2 curve and chaos gap decrease to 0", mc_ok and gap_ok,
                "curve " + ", ".join(f"{v:.2e}" for v in vals)
                + " (steps/SE " + ", ".join(f"{x:.1f}" for x in z) + "); gap "
                + ", ".join(f"{g:.2e}" for g in gaps))
    assert ok


# ---------------------------------------------------------------------------
# 7: Holder exponents


@pytest.mark.parametrize("kind", ["wave", "heat"])
def test_holder_exponents(report, kind):
    worst, parts = 0.0, []
    for direction in ("space", "time"):
        grid = holder_grid(kind, direction)
        lags = default_lags(grid, direction)
        for H in (0.35, 0.5, 0.75):
            fit = holder_fit(kind, H, 1.0, direction, (grid.T, 0.0), lags, 2000, SEED, grid=grid)
            target = expected_slope(kind, H, direction)
            worst = max(worst, abs(fit.slope - target))
            parts.append(f"{direction[0]}{H}:{fit.slope:.3f}/{target:.2f}")
    ok = report(7, f"Holder slopes, {kind}", worst <= 0.1, f"max |slope - target| {worst:.3f} <= 0.1; "
                + " ".join(parts))
    assert ok


# ---------------------------------------------------------------------------
# 8: uniformity in H


@pytest.mark.parametrize("kind,Hs,replicates", [("wave", [0.35, 0.45], 4000), ("heat", [0.55, 0.75], 16000)])
def test_uniformity_in_h(report, kind, Hs, replicates):
    grid = solver_grid(kind, n_t=32, L=1.0, n_x=32)
    coarse = tightness_probe(kind, Hs, 1.0, 8, replicates, SEED, grid)
    fine = tightness_probe(kind, Hs, 1.0, 8, replicates, SEED, grid.refined())
    spread = [max(r.ratio for r in rows) / min(r.ratio for r in rows) for rows in (coarse, fine)]
    # growth under refinement beyond a factor 3 plus noise counts as divergence
    diverges = [f.ratio > 3 * c.ratio + 3 * math.hypot(f.ratio_se, 3 * c.ratio_se) for c, f in zip(coarse, fine)]
    factor_ok = all(s <= 3 for s in spread)
    status_ok = all(r.status == "ok" for r in coarse + fine)
    detail = (f"spread {spread[0]:.2f} (grid) {spread[1]:.2f} (refined) <= 3; ratios "
              + ", ".join(f"H={c.H}: {c.ratio:.3g}->{f.ratio:.3g}" for c, f in zip(coarse, fine)))
    ok = report(8, f"uniform p=8 increment ratios, {kind}", factor_ok and not any(diverges) and status_ok, detail)
    if not factor_ok:
        # report-only: a factor-3 spread calls for investigation, not a hard failure
        warnings.warn(f"uniformity spread above 3 for {kind}: {detail}")
    assert status_ok and not any(diverges)


# ---------------------------------------------------------------------------
# 9: distributional calibration


def test_ks_calibration(report):
    null, _ = ks_calibration("wave", 0.3, 0.3, 100, 1000, SEED)
    cross, _ = ks_calibration("wave", 0.3, 0.7, 100, 1000, SEED + 1)
    ok = report(9, "KS calibration at p < 0.01", null <= 2 and cross >= 95,
                f"same-H {null}/100 <= 2, cross-H {cross}/100 >= 95")
    assert ok


# ---------------------------------------------------------------------------
# 10: determinism


CONFIG = """\
[constants]
alphas = -0.2, 0.2
Ts = 1

[chaos-table]
kind = heat
H = 0.4, 0.6
n_max = 2
log2_points = 10
scrambles = 4

[solve]
kind = wave
H = 0.4
n_t = 16
n_x = 16
L = 0.5
m_max = 2
times = 0.5, 1
dump = {dump}

[coupling]
kind = heat
replicates = 64
n_t = 16
n_x = 16
L = 0.5

[tightness]
kind = wave
replicates = 64
n_t = 16
n_x = 16
L = 0.5
"""


def test_cli_determinism(report, tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(CONFIG.format(dump=tmp_path / "u.bin"))
    outputs = []
    for _ in range(2):
        assert main(["run", str(cfg), "--seed", "7", "--threads", "1", "--out", str(tmp_path / "out")]) == 0
        files = sorted((tmp_path / "out").iterdir()) + [tmp_path / "u.bin"]
        outputs.append({f.name: f.read_bytes() for f in files})
        for f in files:
            f.unlink()
    same = outputs[0] == outputs[1] and len(outputs[0]) == 6
    ok = report(10, "byte-identical reruns", same, f"{len(outputs[0])} files compared")
    assert ok
