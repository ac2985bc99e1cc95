import numpy as np
import pytest

from adiaflow import flows, linops, newton
from adiaflow.errors import InsufficientData, NotSurjective
from adiaflow.linops import random_smooth_field


@pytest.fixture(scope="module")
def newton_01(circle, circle_path):
    return newton.newton_iterate(circle, circle_path, 0.1)


def test_section_at_zero_on_hand_point(circle_plain):
    g = flows.TimeGrid(1.0, 16)
    # constant path at (1,0) with F = y: chi = 0, so each row is (grad F, H) = (0, 1, 0)
    p = flows.BasePath(g, np.tile([1.0, 0.0], (17, 1)), None, None)
    r = newton.trivialized_section(circle_plain, p, 0.3)
    np.testing.assert_array_equal(r, np.tile([0.0, 1.0, 0.0], (16, 1)))


def test_section_at_zero_is_chi_drift(circle, circle_path):
    # X-rows reduce to O(ds^2) midpoint defects; the tau-row is d/ds chi(q)
    r = newton.trivialized_section(circle, circle_path, 0.1)
    geo = circle_path.geometry(circle)
    dq = np.gradient(circle_path.points, circle_path.grid.ds, axis=0, edge_order=2)
    dchi = np.einsum("ij,ij->i", geo.grad_chi, dq)
    assert np.max(np.abs(r[:, :2])) < 1e-4
    np.testing.assert_allclose(r[:, 2], 0.5 * (dchi[1:] + dchi[:-1]), atol=1e-3)


def test_section_vanishes_on_stationary_path(circle):
    xm, _ = flows.default_endpoints(circle)
    p = flows.stationary_path(circle, xm, flows.TimeGrid(4.0, 100))
    assert np.max(np.abs(newton.trivialized_section(circle, p, 0.05))) < 1e-12


def test_derivative_at_zero_is_assembled_operator(circle, circle_path, rng):
    eps = 0.2
    D = linops.assemble_Deps(circle, circle_path, eps)
    s = circle_path.grid.s
    zeta = D.layout.expand(D.layout.reduce(
        np.column_stack([random_smooth_field(rng, s, 2), random_smooth_field(rng, s, 1)])))
    dF = newton.section_derivative(circle, circle_path, eps, None, zeta)
    np.testing.assert_allclose(dF, D.apply(zeta), atol=1e-10)


@pytest.mark.parametrize("h", [1e-4, 1e-5])
def test_finite_difference_derivative(circle, circle_path, rng, h):
    eps = 0.1
    s = circle_path.grid.s
    Z = 0.05 * np.column_stack([random_smooth_field(rng, s, 2), random_smooth_field(rng, s, 1)])
    zeta = np.column_stack([random_smooth_field(rng, s, 2), random_smooth_field(rng, s, 1)])
    fd = (newton.trivialized_section(circle, circle_path, eps, Z + h * zeta)
          - newton.trivialized_section(circle, circle_path, eps, Z - h * zeta)) / (2 * h)
    an = newton.section_derivative(circle, circle_path, eps, Z, zeta)
    assert np.max(np.abs(fd - an)) / np.max(np.abs(an)) < 1e-6


def test_right_inverse_solves(circle, circle_path, rng):
    D = linops.assemble_Deps(circle, circle_path, 0.1)
    r = rng.standard_normal((circle_path.grid.N, 3))
    z = newton.right_inverse_apply(D, r)
    assert D.cod_norm(D.apply(z) - r) <= 1e-10 * D.cod_norm(r)


def test_newton_converges_quickly(newton_01):
    rep = newton_01
    assert rep.converged and len(rep.iterations) <= 6
    assert all(it["contraction_factor"] <= 0.5 for it in rep.iterations[1:])
    assert rep.residual_final <= 1e-10
    assert not rep.suspect


def test_correction_is_small(newton_01):
    # X = O(eps^{3/2}), l = O(eps^{1/2}) with modest constants
    assert newton_01.norm_X_inf <= 0.1**1.5
    assert newton_01.norm_ell_inf <= 0.1**0.5


def test_T_eps_energy_and_ends(circle, circle_path, newton_01):
    A = newton.T_eps(circle, circle_path, 0.1, report=newton_01)
    xm, xp = circle_path.x_minus, circle_path.x_plus
    assert flows.eps_energy(circle, 0.1, A) == pytest.approx(xm.f_value - xp.f_value, abs=1e-3)
    assert abs(A.tau[0] - xm.tau) < 1e-6 and abs(A.tau[-1] - xp.tau) < 1e-6
    assert np.linalg.norm(A.u[-1] - xp.x) < 1e-4


@pytest.mark.parametrize("k", [5, 20])
def test_shift_equivariance(circle, circle_path, newton_01, k):
    A = newton.T_eps(circle, circle_path, 0.1, report=newton_01)
    B = newton.T_eps(circle, circle_path.shifted(k), 0.1)
    sl = slice(100, -100)
    assert np.max(np.abs(B.u[:-k - 1] - A.u[k:-1])[sl]) < 1e-9
    assert np.max(np.abs(B.tau[:-k - 1] - A.tau[k:-1])[sl]) < 1e-9


def test_reversed_labels_fail_surjectivity(circle, circle_path):
    rev = flows.BasePath(circle_path.grid, circle_path.points[::-1], circle_path.x_plus,
                         circle_path.x_minus)
    with pytest.raises(NotSurjective):
        newton.newton_iterate(circle, rev, 0.1)


def test_stationary_path_zero_correction(circle):
    xm, _ = flows.default_endpoints(circle)
    p = flows.stationary_path(circle, xm, flows.TimeGrid(6.0, 200))
    rep = newton.newton_iterate(circle, p, 0.1)
    assert rep.converged and rep.iterations == [] and rep.norm_Z_12eps == 0
    res = newton.scaling_study(circle, p, [0.1, 0.01])
    assert res.flagged and res.slope_Z_12eps is None


def test_scaling_needs_a_decade(circle, circle_path):
    with pytest.raises(InsufficientData):
        newton.scaling_study(circle, circle_path, [0.2, 0.05])
    with pytest.raises(InsufficientData):
        newton.scaling_study(circle, circle_path, [0.1])


def test_scaling_csv(circle, circle_path, tmp_path):
    res = newton.scaling_study(circle, circle_path, [0.2, 0.1, 0.05, 0.02])
    assert res.slope_Z_12eps >= 1.8
    f = tmp_path / "scaling.csv"
    res.to_csv(f)
    data = np.loadtxt(f, delimiter=",", skiprows=1)
    assert data.shape == (4, 6)
    np.testing.assert_allclose(data[:, 0], [0.2, 0.1, 0.05, 0.02])


def test_loglog_slope():
    x = np.array([1.0, 0.1, 0.01])
    assert newton.loglog_slope(x, 3 * x**2) == pytest.approx(2.0)


def test_uniqueness_probe(circle, circle_path):
    out = newton.uniqueness_probe(circle, circle_path, 0.1, n_perturbations=5, rng=1)
    assert out["max_distance"] <= 1e-8
    assert all(r["start_X_inf"] <= out["radius"] + 1e-15 for r in out["runs"])


def test_quadratic_remainder(circle, circle_path):
    q = newton.quadratic_remainder_check(circle, circle_path, 0.1, n_fields=3, rng=2)
    assert q["remainder_slope_min"] >= 1.9
    assert min(q["H_row_remainder_slopes"]) >= 1.9
    assert q["derivative_slope_min"] >= 0.9


def test_remainder_vanishes_for_zero_direction(circle, circle_path, rng):
    s = circle_path.grid.s
    Z = 0.1 * np.column_stack([random_smooth_field(rng, s, 2), random_smooth_field(rng, s, 1)])
    zero = np.zeros_like(Z)
    F0 = newton.trivialized_section(circle, circle_path, 0.1, Z)
    rem = (newton.trivialized_section(circle, circle_path, 0.1, Z + zero) - F0
           - newton.section_derivative(circle, circle_path, 0.1, Z, zero))
    assert np.all(rem == 0)
