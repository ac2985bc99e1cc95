import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adiaflow import flows, linops, problems
from adiaflow.hypersurface import point_geometry, project_to_sigma
from adiaflow.linops import TangentField, eps_norm, random_smooth_field


def _rand_node_field(rng, s, m):
    return np.column_stack([random_smooth_field(rng, s, m), random_smooth_field(rng, s, 1)])


def test_tangent_field_tangency(circle, circle_path):
    geo = circle_path.geometry(circle)
    xi = TangentField(geo.tan(np.ones_like(circle_path.points)), None, 0.02)
    assert xi.check_tangent(geo.grad_H)
    assert not TangentField(np.ones_like(circle_path.points)).check_tangent(geo.grad_H)


def test_eps_norm_scalings(grid, rng):
    X = random_smooth_field(rng, grid.s, 2)
    ell = random_smooth_field(rng, grid.s, 1)[:, 0]
    zX = TangentField(X, None, grid.ds)
    n = [eps_norm(zX, e, "n02") for e in (1.0, 0.1, 0.01)]
    assert n[0] == n[1] == n[2]
    zl = TangentField(0 * X, ell, grid.ds)
    assert eps_norm(zl, 0.1, "n02") == pytest.approx(0.1 * eps_norm(zl, 1.0, "n02"), rel=1e-14)
    # n12 dominates n02, n0inf is the sup plus eps sup
    z = TangentField(X, ell, grid.ds)
    assert eps_norm(z, 0.3, "n12") >= eps_norm(z, 0.3, "n02")
    assert eps_norm(z, 0.3, "n0inf") == pytest.approx(
        np.max(np.linalg.norm(X, axis=1)) + 0.3 * np.max(np.abs(ell)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1.0, 0.1, 0.01]))
def test_sobolev_embedding(seed, eps):
    rng = np.random.default_rng(seed)
    g = flows.TimeGrid(12.0, 1200)
    z = TangentField(random_smooth_field(rng, g.s, 2, width=(0.05, 2.0)),
                     random_smooth_field(rng, g.s, 1, width=(0.05, 2.0))[:, 0], g.ds)
    assert np.sqrt(eps) * eps_norm(z, eps, "n0inf") <= 3 * eps_norm(z, eps, "n12")


def test_pi_eps_hand_value(circle_plain):
    q = np.array([[1.0, 0.0]])
    out = linops.pi_eps(circle_plain, q, TangentField([[0.0, 1.0]], [0.0]), 1.0)
    np.testing.assert_allclose(out.X, [[0, 0.8]], atol=1e-15)


@pytest.mark.parametrize("eps", [1.0, 0.3, 0.01])
def test_pi_after_embedding_is_identity(circle_plain, eps):
    q = np.array([[1.0, 0.0]])
    Ixi = linops.embed_field(circle_plain, q, np.array([[0.0, 1.0]]))
    assert Ixi.ell[0] == pytest.approx(-0.5)
    np.testing.assert_allclose(linops.pi_eps(circle_plain, q, Ixi, eps).X, [[0, 1]], atol=1e-15)


def test_pi_eps_at_pole_is_tangential_projection(circle_plain):
    q = np.array([[0.0, 1.0]])
    Z = TangentField([[0.7, -0.3]], [5.0])
    np.testing.assert_allclose(linops.pi_eps(circle_plain, q, Z, 0.2).X, [[0.7, 0.0]], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.005, 1.0), st.sampled_from(["circle", "quartic", "sphere"]))
def test_projection_properties(seed, eps, name):
    rng = np.random.default_rng(seed)
    s = problems.get_problem(name)
    q = project_to_sigma(s, rng.standard_normal((30, s.dim)))
    geo = point_geometry(s, q)
    xi = geo.tan(rng.standard_normal((30, s.dim)))
    Ixi = linops.embed_field(s, q, xi, geometry=geo)
    back = linops.pi_eps(s, q, Ixi, eps, geometry=geo).X
    assert np.max(np.abs(back - xi)) <= 1e-12 * (1 + np.max(np.abs(xi)))
    Z = TangentField(rng.standard_normal((30, s.dim)), rng.standard_normal(30), 1.0)
    pZ = linops.pi_eps(s, q, Z, eps, geometry=geo)
    IpZ = linops.embed_field(s, q, pZ, geometry=geo)
    n = lambda F: eps_norm(F, eps, "n02")
    assert n(TangentField(pZ.X, None, 1.0)) <= n(IpZ) + 1e-12
    assert n(IpZ) <= 2 * n(Z)


def test_b_inverse_norms(circle, circle_path):
    for eps in (1.0, 0.1):
        rep = linops.b_inverse_norms(circle, circle_path.points, eps, rng=0)
        assert rep["max"]["B_inv"] <= 1 + 1e-12
        assert rep["max"]["mu_B_inv_P"] <= 0.5 + 1e-12


def test_b_inverse_hand_value(circle_plain):
    rep = linops.b_inverse_norms(circle_plain, np.array([[1.0, 0.0]]), 1.0)
    assert rep["per_node"]["B_inv_P"][0] == pytest.approx(0.8)
    assert rep["per_node"]["B_inv"][0] == pytest.approx(0.8)


@pytest.mark.parametrize("eps", [None, 1.0, 0.1, 0.0125])
def test_discrete_adjointness(circle, circle_path, rng, eps):
    D = linops.assemble_D0(circle, circle_path) if eps is None else \
        linops.assemble_Deps(circle, circle_path, eps)
    for _ in range(5):
        v = rng.standard_normal(D.domain_dim)
        w = rng.standard_normal(D.codomain_dim)
        lhs = D.cod_inner(w, D.apply_reduced(v))
        rhs = D.dom_inner(D.adjoint_reduced(w), v)
        scale = D.cod_norm(w) * D.cod_norm(D.apply_reduced(v))
        assert abs(lhs - rhs) <= 1e-12 * max(scale, abs(lhs))


def test_adjoint_variant_matches_transpose(circle, circle_path):
    D = linops.assemble_Deps(circle, circle_path, 0.2)
    A = linops.assemble_Deps(circle, circle_path, 0.2, variant="adjoint")
    w = np.random.default_rng(0).standard_normal(D.codomain_dim)
    np.testing.assert_allclose(A.matrix @ w, D.adjoint_reduced(w), rtol=1e-13, atol=1e-13)


def test_mixed_block_symmetry(circle, circle_path, rng):
    eps = 0.07
    g = circle_path.geometry(circle).grad_H
    X, Xt = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    l, lt = rng.standard_normal(len(g)), rng.standard_normal(len(g))
    dH = lambda V: np.einsum("ij,ij->i", g, V)
    lhs = np.sum(Xt * (l[:, None] * g)) + eps**2 * np.sum(lt * dH(X) / eps**2)
    rhs = np.sum((lt[:, None] * g) * X) + eps**2 * np.sum(dH(Xt) / eps**2 * l)
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + 1)


def test_bandwidth(circle, circle_path):
    for D in (linops.assemble_D0(circle, circle_path), linops.assemble_Deps(circle, circle_path, 0.1)):
        assert D.bandwidth() <= 3 * (circle.dim + 1)


def test_ell_spike_first_row(circle, circle_path):
    D = linops.assemble_Deps(circle, circle_path, 0.5)
    j = 600
    Z = np.zeros((circle_path.grid.N + 1, 3))
    Z[j, 2] = 1.0
    out = D.apply(Z)
    gH = circle.H.grad(circle_path.points[j])
    np.testing.assert_allclose(out[j - 1, :2], 0.5 * gH, atol=1e-14)
    np.testing.assert_allclose(out[j, :2], 0.5 * gH, atol=1e-14)
    assert np.all(out[:j - 1, :2] == 0) and np.all(out[j + 1:, :2] == 0)


def test_eps_changes_only_constraint_block(circle, circle_path):
    A1 = linops.assemble_Deps(circle, circle_path, 1.0)
    A2 = linops.assemble_Deps(circle, circle_path, 0.5)
    k0 = A1.layout.k0
    inner = slice(k0, k0 + (A1.layout.N - 1) * 3)
    diff = (A1.matrix - A2.matrix)[:, inner].tocoo()
    assert np.all(diff.row % 3 == 2)
    assert np.all(diff.col % 3 != 2)


def test_D0_annihilates_shift_generator(circle, circle_path):
    D0 = linops.assemble_D0(circle, circle_path)
    dq = np.gradient(circle_path.points, circle_path.grid.ds, axis=0, edge_order=2)
    xi = np.einsum("nij,ni->nj", D0.meta["frames"], dq)
    r = D0.cod_norm(D0.apply(xi))
    assert r <= 10 * circle_path.grid.ds**2 * D0.dom_norm(D0.layout.reduce(xi))


def test_continuum_adjoint_D0(circle, circle_path):
    D0 = linops.assemble_D0(circle, circle_path)
    geo = circle_path.geometry(circle)
    s = circle_path.grid.s
    eta = geo.tan(np.column_stack([np.exp(-s**2 / 8), np.sin(s) * np.exp(-s**2 / 8)]))
    umid = 0.5 * (circle_path.points[1:] + circle_path.points[:-1])
    Ehat = D0.meta["mid_frames"]
    eta_mid = 0.5 * (eta[1:] + eta[:-1])
    W = np.einsum("nij,ni->nj", Ehat, eta_mid)
    disc = np.einsum("nij,nj->ni", D0.meta["frames"], D0.adjoint_apply(W))[1:-1]
    cont = linops.continuum_adjoint_D0(circle, circle_path, eta)
    assert np.max(np.abs(disc - cont)) <= 10 * circle_path.grid.ds * np.max(np.abs(cont))


def test_continuum_adjoint_Deps(circle, circle_path):
    eps = 0.3
    D = linops.assemble_Deps(circle, circle_path, eps)
    s = circle_path.grid.s
    Y = np.column_stack([np.exp(-s**2 / 8), np.cos(s) * np.exp(-s**2 / 8)])
    mv = np.tanh(s) * np.exp(-s**2 / 16)
    mid = lambda a: 0.5 * (a[1:] + a[:-1])
    disc = D.adjoint_apply(np.column_stack([mid(Y), mid(mv)]))[1:-1]
    X, ell = linops.continuum_adjoint_Deps(circle, circle_path, eps, Y, mv)
    ds = circle_path.grid.ds
    assert np.max(np.abs(disc[:, :2] - X)) <= 10 * ds * np.max(np.abs(X))
    assert np.max(np.abs(disc[:, 2] - ell)) <= 10 * ds * np.max(np.abs(ell))


def test_fredholm_D0(circle, circle_path):
    D0 = linops.assemble_D0(circle, circle_path)
    for tol in (1e-8, 1e-7, 1e-6):
        assert linops.fredholm_index_estimate(D0, tol) == (1, 0, 1)
    assert linops.kernel_correlation(circle, circle_path, D0, 0) >= 0.999


def test_fredholm_Deps(circle, circle_path):
    D = linops.assemble_Deps(circle, circle_path, 0.05)
    assert linops.fredholm_index_estimate(D) == (1, 0, 1)
    assert linops.kernel_correlation(circle, circle_path, D, 0) >= 0.999


def test_kernel_along_eps_trajectory_is_shift(circle, circle_path):
    from adiaflow import newton

    z = newton.T_eps(circle, circle_path, 0.2)
    D = linops.assemble_Deps(circle, z, 0.2)
    assert linops.fredholm_index_estimate(D) == (1, 0, 1)
    assert linops.kernel_correlation(circle, z, D, 0) >= 1 - 1e-6


def test_stationary_operator_invertible(circle):
    g = flows.TimeGrid(6.0, 200)
    xm, _ = flows.default_endpoints(circle)
    p = flows.stationary_path(circle, xm, g)
    assert linops.fredholm_index_estimate(linops.assemble_D0(circle, p)) == (0, 0, 0)
    assert linops.fredholm_index_estimate(linops.assemble_Deps(circle, p, 0.3)) == (0, 0, 0)


def test_reversed_labels_not_surjective(circle, circle_path):
    from adiaflow.errors import NotSurjective
    rev = flows.BasePath(circle_path.grid, circle_path.points[::-1], circle_path.x_plus,
                         circle_path.x_minus)
    D = linops.assemble_Deps(circle, rev, 0.1)
    assert linops.fredholm_index_estimate(D) == (0, 1, -1)
    with pytest.raises(NotSurjective):
        linops.GramSolver(D)


def test_right_inverse(circle, circle_path, rng):
    D = linops.assemble_Deps(circle, circle_path, 0.1)
    G = linops.GramSolver(D)
    Z0 = rng.standard_normal(D.domain_dim)
    r = D.apply_reduced(Z0)
    zeta = G.apply_reduced(r)
    assert D.cod_norm(D.apply_reduced(zeta) - r) <= 1e-10 * D.cod_norm(r)
    assert np.all(G.apply_reduced(np.zeros_like(r)) == 0)
    # minimum norm among preimages zeta + kernel elements
    k = G.kernel_projector(rng.standard_normal(D.domain_dim))
    for t in rng.uniform(-5, 5, 100):
        assert D.dom_norm(zeta) <= D.dom_norm(zeta + t * k) + 1e-12


def test_probe_components_bounded(circle, circle_path):
    r = linops.estimate_probe(circle, circle_path, 0.1, "components", n_random=10, rng=0)
    assert r["I_pi_over_Z"] <= 2
    assert set(r) == {"X_minus_pi", "ell_minus_dchi_pi", "Z_minus_I_pi", "I_pi_over_Z"}


def test_probe_report_no_growth():
    rep = linops.ProbeReport("x")
    for e, v in zip([0.2, 0.1, 0.05], [1.0, 1.1, 1.2]):
        rep.add(e, {"line": v})
    assert rep.no_growth()["line"]
    rep.add(0.025, {"line": 5.0})
    assert not rep.no_growth()["line"]
