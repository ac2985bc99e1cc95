import numpy as np
import pytest

from adiaflow import flows, newton, problems
from adiaflow.errors import ConfigError, NoConnection
from adiaflow.fields import ProblemSetup, ScalarField


def test_time_grid():
    g = flows.TimeGrid(12.0, 1200)
    assert g.ds == pytest.approx(0.02)
    assert g.s[0] == -12 and g.s[-1] == 12 and len(g.midpoints) == 1200
    with pytest.raises(ConfigError):
        flows.TimeGrid(12.0, 8)


def test_base_path_invariants(circle, circle_path):
    q = circle_path.points
    assert np.max(np.abs(circle.H.value(q))) <= 1e-10
    # ends sit at distance ~ e^{-lambda T}; lambda = 0.8 at x^- here
    T = circle_path.grid.T
    for x, k in ((circle_path.x_minus, 0), (circle_path.x_plus, -1)):
        lam = np.min(np.abs(x.hess_eigs_f))
        assert np.linalg.norm(q[k] - x.x) <= 3 * np.exp(-lam * T)
    f = circle.F.value(q)
    assert np.all(np.diff(f) <= 1e-14)


def test_plain_circle_closed_form(plain_path, grid):
    # derived: phi' = sin phi has the heteroclinic phi = 2 arctan(e^s) from the top
    phi = 2 * np.arctan(np.exp(grid.s))
    ref = np.column_stack([np.sin(phi), np.cos(phi)])
    q = plain_path.points
    if q[grid.N // 2, 0] < 0:
        ref[:, 0] *= -1
    assert np.max(np.abs(q - ref)) <= 1e-3


def test_same_endpoints_no_connection(circle, grid):
    xm, _ = flows.default_endpoints(circle)
    with pytest.raises(NoConnection):
        flows.integrate_base_flow(circle, xm, xm, grid)


@pytest.mark.parametrize("fixture", ["circle_path", "ellipse_path"])
def test_base_energy_identity(request, fixture):
    obj = request.getfixturevalue(fixture)
    setup, path = obj if isinstance(obj, tuple) else (problems.get_problem("circle"), obj)
    rep = flows.energy_identity_residual(setup, path)
    assert rep.c_star == pytest.approx(2.0)
    assert rep.residual <= 1e-3
    assert rep.osc_bound_ok


def test_stationary_energies(circle, grid):
    xm, _ = flows.default_endpoints(circle)
    p = flows.stationary_path(circle, xm, grid)
    assert flows.base_energy(circle, p) == 0.0
    z = flows.AmbientPath(grid, p.points, np.full(grid.N + 1, xm.tau), xm, xm, 0.5)
    assert flows.eps_energy(circle, 0.5, z) == pytest.approx(0.0, abs=1e-28)
    r = flows.residual_section(circle, p)
    assert np.max(np.abs(r.X)) <= 1e-15
    assert flows.energy_identity_residual(circle, p).residual == 0.0


def test_reparametrized_path_not_energy_invariant(circle, circle_path):
    # doubling the speed doubles the kinetic part and halves the potential part
    g2 = flows.TimeGrid(6.0, 600)
    fast = flows.BasePath(g2, circle_path.points[::2], circle_path.x_minus, circle_path.x_plus)
    assert flows.base_energy(circle, fast, tails=False) > flows.base_energy(circle, circle_path) + 0.1


def test_energy_second_order(circle):
    res = []
    for N in (600, 1200):
        g = flows.TimeGrid(12.0, N)
        xm, xp = flows.default_endpoints(circle)
        p = flows.integrate_base_flow(circle, xm, xp, g)
        res.append(flows.energy_identity_residual(circle, p).residual)
    assert res[0] / res[1] >= 3.5


def test_residual_section_embedded(circle_plain, plain_path, grid):
    # derived: second component of the embedded residual is <grad chi, q'> = 1/2 at q = (1, 0)
    geo = plain_path.geometry(circle_plain)
    z = flows.AmbientPath(grid, plain_path.points, geo.chi, plain_path.x_minus, plain_path.x_plus, 1.0)
    r = flows.residual_section(circle_plain, z)
    k = int(np.argmin(np.linalg.norm(plain_path.points - [1, 0], axis=1)))
    if plain_path.points[k, 0] < 0:
        k = int(np.argmin(np.linalg.norm(plain_path.points + [1, 0], axis=1)))
    assert np.max(np.abs(r.X[1:-1])) <= 1e-3
    assert r.ell[k] == pytest.approx(0.5, abs=1e-3)


def test_base_residual_tiny(circle, circle_path):
    assert np.max(np.abs(flows.base_residual(circle, circle_path))) <= 1e-11


def test_eps_flow_constant_F(grid):
    s = ProblemSetup(ScalarField.polynomial(2, {(0, 0): 1.0}), problems.get_problem("circle").H)
    x = np.array([0.0, 1.0])
    z = flows.integrate_eps_flow(s, 1.0, grid, x_minus=x, x_plus=np.array([0.0, -1.0]))
    assert z.meta["frozen"]
    assert np.all(z.u == x) and np.all(z.tau == 0)


@pytest.mark.slow
def test_eps_flow_circle_eps1(circle, grid):
    z = flows.integrate_eps_flow(circle, 1.0, grid)
    assert flows.eps_energy(circle, 1.0, z) == pytest.approx(2.0, abs=1e-3)
    assert z.meta["gap"] <= 5e-4
    assert np.linalg.norm(z.u[0] - z.x_minus.x) <= 1e-4
    assert abs(z.tau[-1] - z.x_plus.tau) <= 1e-4


@pytest.mark.slow
def test_eps_flow_eps03_constraint_small(circle, grid):
    z = flows.integrate_eps_flow(circle, 0.3, grid)
    assert np.max(np.abs(circle.H.value(z.u))) <= 1.0 * 0.3**2
    assert flows.eps_energy(circle, 0.3, z) == pytest.approx(2.0, abs=1e-2)


def test_eps_energy_of_embedded_base(circle, circle_path, grid):
    # diagnostic: the embedded path picks up eps^2 int (dchi q')^2 / 2 plus the residual terms
    geo = circle_path.geometry(circle)
    z = flows.AmbientPath(grid, circle_path.points, geo.chi, circle_path.x_minus,
                          circle_path.x_plus, 0.1)
    dq = np.gradient(circle_path.points, grid.ds, axis=0)
    extra = 0.5 * 0.01 * np.sum(grid.ds * np.einsum("ij,ij->i", geo.grad_chi, dq) ** 2)
    E0 = flows.base_energy(circle, circle_path, tails=False)
    assert flows.eps_energy(circle, 0.1, z, tails=False) == pytest.approx(E0 + extra, rel=1e-3)


def test_csv_roundtrip(tmp_path, circle, circle_path):
    f = tmp_path / "base.csv"
    circle_path.to_csv(circle, f)
    data = np.loadtxt(f, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1:3], circle_path.points)
