import math

import numpy as np
import pytest

from fracspde import DomainError
from fracspde.solver import solver_grid
from fracspde.stats import (
    coupling_curve,
    default_lags,
    default_pairs,
    expected_slope,
    gagliardo_seminorm,
    holder_fit,
    holder_grid,
    ks_distance,
    marginal_samples,
    moment_report,
    tightness_probe,
)


@pytest.fixture(scope="module")
def small():
    return solver_grid("wave", n_t=16, L=0.5, n_x=16)


def test_moment_report_first_order(small):
    # m = 1 at H = 1/2: E u = eta, E u^2 = 1 + grid first chaos
    rep = moment_report("wave", 0.5, 1.0, 2, [(1.0, 0.0)], 200, seed=1, grid=small, m=1)
    assert abs(rep.mean[0] - 1.0) < 4 * rep.mean_se[0]
    assert rep.moment[0] > 1.0
    with pytest.raises(DomainError):
        moment_report("wave", 0.5, 1.0, 3, [(1.0, 0.0)], 10, seed=1, grid=small)


def test_moment_report_refinement_flag(small):
    rep = moment_report("heat", 0.6, 1.0, 2, [(1.0, 0.0)], 100, seed=2,
                        grid=solver_grid("heat", n_t=8, L=0.5, n_x=8), check_refinement=True)
    assert rep.refinement_flag in (True, False)
    assert rep.sup == rep.moment.max()


def test_expected_slopes():
    assert expected_slope("wave", 0.4, "time") == pytest.approx(0.8)
    assert expected_slope("heat", 0.4, "time") == pytest.approx(0.4)
    assert expected_slope("heat", 0.4, "space", p=4) == pytest.approx(1.6)


def test_lag_validation():
    g = holder_grid("wave", "space")
    with pytest.raises(DomainError, match="4 cells"):
        holder_fit("wave", 0.5, 1.0, "space", (1.0, 0.0), [g.dx, 2 * g.dx, 4 * g.dx, 8 * g.dx], 10, 0, grid=g)
    with pytest.raises(DomainError, match="T/8"):
        holder_fit("wave", 0.5, 1.0, "space", (1.0, 0.0), [0.05, 0.1, 0.2, 0.3], 10, 0, grid=g)
    with pytest.raises(DomainError, match="at least 4"):
        holder_fit("wave", 0.5, 1.0, "space", (1.0, 0.0), default_lags(g, "space")[:3], 10, 0, grid=g)


def test_default_lags_shape():
    g = holder_grid("heat", "time")
    lags = default_lags(g, "time")
    assert lags[0] == pytest.approx(4 * g.dt)
    assert lags[-1] <= g.T / 8 + 1e-12
    assert len(lags) >= 4


def test_holder_fit_small_run():
    g = holder_grid("wave", "space")
    fit = holder_fit("wave", 0.5, 1.0, "space", (1.0, 0.0), default_lags(g, "space"), 40, seed=3, grid=g)
    assert abs(fit.slope - 1.0) < 0.15
    assert fit.slope_se > 0 and len(fit.moments) == len(fit.lags)


def test_gagliardo_zero_and_domain():
    assert gagliardo_seminorm("wave", 0.3, 0.0, 1.0, 0.0, 10) == 0.0
    with pytest.raises(DomainError):
        gagliardo_seminorm("wave", 0.6, 1.0, 1.0, 0.0, 10)




def test_coupling_curve_terminal_zero(small):
    cc = coupling_curve("wave", 0.5, [0.35, 0.45, 0.5], 1.0, (1.0, 0.0), 50, seed=4, grid=small)
    hs = [h for h, *_ in cc.entries]
    assert hs == [0.35, 0.45, 0.5]
    assert cc.entries[-1][1] == 0.0
    assert cc.entries[0][1] > cc.entries[1][1] > 0


def test_ks_distance_guards():
    rng = np.random.default_rng(0)
    with pytest.raises(DomainError):
        ks_distance(rng.normal(size=100), rng.normal(size=100))
    d, p = ks_distance(rng.normal(size=600), rng.normal(size=600))
    assert 0 <= d <= 1 and 0 <= p <= 1


def test_marginal_samples_disjoint_groups():
    a = marginal_samples("heat", 0.5, 1.0, 20, seed=1, first_replicate=0)
    b = marginal_samples("heat", 0.5, 1.0, 20, seed=1, first_replicate=1)
    c = marginal_samples("heat", 0.5, 1.0, 20, seed=1, first_replicate=0)
    assert np.array_equal(a, c) and not np.array_equal(a, b)


def test_tightness_probe_rows(small):
    rows = tightness_probe("wave", [0.35, 0.45], 1.0, 8, 40, seed=0, grid=small)
    assert [r.H for r in rows] == [0.35, 0.45]
    assert all(r.status == "ok" and r.ratio > 0 for r in rows)
    low = tightness_probe("heat", [0.55], 1.0, 2, 10, seed=0, grid=solver_grid("heat", n_t=16, L=0.5, n_x=16))
    assert low[0].status == "insufficient p"


def test_default_pairs_cover_directions(small):
    pairs = default_pairs(small)
    assert len(pairs) == 6  # the 16-cell lag does not fit a 16-cell window
    assert any(a[0] == b[0] for a, b in pairs) and any(a[1] == b[1] for a, b in pairs)


def test_moment_report_zero_and_jensen(small):
    rep0 = moment_report("wave", 0.5, 0.0, 2, [(1.0, 0.0)], 20, seed=1, grid=small)
    assert np.all(rep0.moment == 0.0)
    probes = [(0.5, 0.0), (1.0, 0.0)]
    r2 = moment_report("wave", 0.5, 1.0, 2, probes, 200, seed=5, grid=small, spatial_average=False)
    r4 = moment_report("wave", 0.5, 1.0, 4, probes, 200, seed=5, grid=small, spatial_average=False)
    assert np.all(r4.moment >= r2.moment**2)


def test_ks_identical_samples():
    x = np.random.default_rng(1).normal(size=500)
    assert ks_distance(x, x)[0] == 0.0


def test_coupling_first_iterate_matches_grid_gap():
    from fracspde.solver import grid_first_chaos
    g = solver_grid("wave", n_t=32, L=1.0, n_x=32)
    cc = coupling_curve("wave", 0.5, [0.4], 1.0, (1.0, 0.0), 400, seed=6, m=1, grid=g, spatial_average=True)
    _, value, se = cc.entries[0]
    assert abs(value - grid_first_chaos(g, "wave", 0.4, 0.5)) < 3.5 * se


def test_gagliardo_stable_under_doubling():
    coarse = solver_grid("wave", n_t=64, L=1.0, n_x=128)
    a = gagliardo_seminorm("wave", 0.3, 1.0, 1.0, 0.0, 200, seed=2, grid=coarse)
    b = gagliardo_seminorm("wave", 0.3, 1.0, 1.0, 0.0, 200, seed=2, grid=coarse.refined())
    assert abs(b - a) < 0.1 * a


def test_tightness_rejects_oversized_pairs(small):
    with pytest.raises(DomainError):
        tightness_probe("wave", [0.4], 1.0, 8, 4, grid=small, pairs=[((1.0, -0.5), (1.0, 0.5))])
