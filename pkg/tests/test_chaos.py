import math
import warnings

import numpy as np
import pytest

from fracspde import DomainError
from fracspde.chaos import (
    Quadrature,
    chaos_moment_components,
    chaos_moment_gap,
    chaos_second_moment,
    first_order_reference,
    kernel_fourier,
    off_diagonal_square,
    first_order_from_coefficients,
    simulate_multiple_integral,
    truncated_second_moment,
)
from fracspde.noise import sample_white_noise
from fracspde.solver import batch_white_noise, integrand_coefficients, solver_grid

QUICK = Quadrature(log2_points=12, scrambles=8)


@pytest.mark.parametrize("kind", ["wave", "heat"])
@pytest.mark.parametrize("H", [0.3, 0.5, 0.75])
def test_first_order_closed_form(kind, H):
    est = chaos_second_moment(kind, H, 1, 1.0, quad=QUICK)
    ref = first_order_reference(kind, H, 1.0)
    assert abs(est.value - ref) < max(4 * est.se, 1e-6 * ref)
    assert not est.flagged


@pytest.mark.parametrize("kind,n,ref", [
    ("wave", 2, 1 / 96),
    ("heat", 2, 1 / 4),
    ("heat", 3, 1 / (6 * math.sqrt(math.pi))),
    ("heat", 4, 1 / 32),
])
def test_white_noise_higher_orders(kind, n, ref):
    # frozen values from the iterated time integrals at H = 1/2, t = 1
    est = chaos_second_moment(kind, 0.5, n, 1.0)
    assert abs(est.value - ref) < 4 * est.se + 1e-3 * ref


def test_eta_scaling_and_zero():
    a = chaos_second_moment("heat", 0.6, 2, 1.0, eta=1.0, quad=QUICK)
    b = chaos_second_moment("heat", 0.6, 2, 1.0, eta=3.0, quad=QUICK)
    assert b.value == pytest.approx(9 * a.value, rel=1e-12)
    assert chaos_second_moment("wave", 0.6, 3, 1.0, eta=0.0).value == 0.0


def test_truncated_moment_cumulative():
    res = truncated_second_moment("heat", 0.5, 2, 1.0, quad=QUICK)
    assert res.cumulative[0] == 1.0
    assert res.cumulative[1] == pytest.approx(1 + 1 / math.sqrt(math.pi), rel=1e-3)
    assert np.all(np.diff(res.cumulative) > 0)
    assert [n for n, *_ in res.per_order] == [0, 1, 2]


def test_order_validation():
    with pytest.raises(DomainError):
        chaos_second_moment("wave", 0.5, 5, 1.0)
    with pytest.raises(DomainError):
        chaos_second_moment("wave", 0.5, 1, 0.0)


def test_kernel_fourier_ordering():
    assert kernel_fourier("heat", [0.5], [0.0], 1.0, 2.0) == 2.0
    with pytest.raises(DomainError):
        kernel_fourier("wave", [0.6, 0.5], [1.0, 1.0], 1.0, 1.0)


def test_gap_components_consistent():
    g = chaos_moment_components("wave", 1.0, 1.0, 1, 0.4, 0.5, quad=QUICK)
    assert g.gap.value == pytest.approx(g.var_a.value + g.var_b.value - 2 * g.cov.value, rel=1e-9)
    assert chaos_moment_gap("wave", 1.0, 1.0, 2, 0.5, 0.5).value == 0.0


def test_gap_decreases_towards_h0():
    vals = [chaos_moment_gap("heat", 1.0, 1.0, 1, h, 0.5, quad=QUICK).value for h in (0.35, 0.45, 0.48)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_flagging_warns(recwarn):
    est = chaos_second_moment("wave", 0.26, 4, 1.0, quad=Quadrature(log2_points=4, scrambles=2))
    if est.flagged:
        assert any("standard error" in str(w.message) for w in recwarn.list)


def test_simulated_first_order_variance():
    g = solver_grid("heat", n_t=16, L=0.5, n_x=32)
    z = batch_white_noise(g, range(600))
    I1 = simulate_multiple_integral(z, 0.5, 1, "heat", 1.0, 0.0, grid=g)
    var = np.mean(I1**2)
    ref = first_order_reference("heat", 0.5, 1.0)
    se = np.std(I1**2, ddof=1) / math.sqrt(I1.size)
    # the cutoff at pi/dx removes a small tail of the first chaos
    assert abs(var - ref) < 3 * se + 0.05 * ref


def test_second_order_centred_and_orthogonal():
    g = solver_grid("wave", n_t=8, L=0.5, n_x=16)
    z = batch_white_noise(g, range(800))
    I1 = simulate_multiple_integral(z, 0.5, 1, "wave", 1.0, 0.0, grid=g)
    I2 = simulate_multiple_integral(z, 0.5, 2, "wave", 1.0, 0.0, grid=g)
    for sample in (I2, I1 * I2):
        assert abs(sample.mean()) < 3.5 * sample.std(ddof=1) / math.sqrt(sample.size)


def test_off_diagonal_square_hermite_identity():
    # I_2(f x f) = I_1(f)^2 - ||f||^2 has mean zero and variance 2 ||f||^4
    g = solver_grid("heat", n_t=4, L=0.5, n_x=8)
    S = lambda t, xi: np.exp(-(1.0 - t) * xi**2 / 2)
    coef = integrand_coefficients(S, g, 0.5)
    z = batch_white_noise(g, range(4000))
    I1 = first_order_from_coefficients(coef, z, g.n_xi)
    I2 = off_diagonal_square(coef, z, g.n_xi)
    norm2 = np.mean(I1**2)
    assert abs(I2.mean()) < 3.5 * I2.std(ddof=1) / math.sqrt(I2.size)
    assert np.mean(I2**2) == pytest.approx(2 * norm2**2, rel=0.15)
