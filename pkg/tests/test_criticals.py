import numpy as np
import pytest

from adiaflow import criticals as cr
from adiaflow import problems
from adiaflow.errors import CorrespondenceFailed, NotCritical
from adiaflow.fields import ProblemSetup, ScalarField


@pytest.mark.parametrize("name,expected", [
    ("circle", [(0, 1), (0, -1)]),
    ("ellipse", [(0, 1), (0, -1)]),
    ("sphere", [(0, 0, 1), (0, 0, -1)]),
])
def test_critical_sets(name, expected):
    crits = cr.find_critical_points(problems.get_problem(name))
    assert len(crits) == len(expected)
    for c, x in zip(crits, expected):
        np.testing.assert_allclose(c.x, x, atol=1e-12)


@pytest.mark.parametrize("name,x,expected", [
    ("circle_plain", (0, 1), [[-1]]),
    ("circle_plain", (0, -1), [[1]]),
    ("sphere", (0, 0, 1), [[-1, 0], [0, -1]]),
])
def test_hessian_f(name, x, expected):
    A = cr.hessian_f(problems.get_problem(name), np.array(x, float))
    np.testing.assert_allclose(A, expected, atol=1e-12)


def test_hessian_f_rejects_noncritical():
    with pytest.raises(NotCritical):
        cr.hessian_f(problems.get_problem("circle"), np.array([1.0, 0.0]))


def test_hessian_FH_circle_north_pole():
    # hand computation: Hess F = diag(0.2, 0), tau Hess H = -I
    B = cr.hessian_FH(problems.get_problem("circle"), np.array([0.0, 1.0]), -0.5)
    np.testing.assert_allclose(B, [[-0.8, 0, 0], [0, -1, 2], [0, 2, 0]], atol=1e-15)
    assert cr.morse_index(B) == (2, True)


def test_hessian_FH_plain_circle_is_nondegenerate():
    # Hess F = 0 for F = y: the spectrum is {-1, (-1 +- sqrt 17)/2}, index 2
    B = cr.hessian_FH(problems.get_problem("circle_plain"), np.array([0.0, 1.0]), -0.5)
    np.testing.assert_allclose(B, [[-1, 0, 0], [0, -1, 2], [0, 2, 0]], atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(B),
                               sorted([-1, (-1 - 17**0.5) / 2, (-1 + 17**0.5) / 2]), atol=1e-14)


def test_hessian_FH_constant_F():
    H = problems.get_problem("circle").H
    s = ProblemSetup(ScalarField.polynomial(2, {(0, 0): 1.0}), H)
    x = np.array([0.6, 0.8])
    B = cr.hessian_FH(s, x, 0.0)
    np.testing.assert_allclose(B[:2, 2], H.grad(x))
    np.testing.assert_allclose(B[:2, :2], 0)


@pytest.mark.parametrize("name", ["circle", "ellipse", "sphere", "quartic"])
def test_hessian_FH_matches_fd(name):
    s = problems.get_problem(name)
    m = s.dim
    for c in cr.find_critical_points(s):
        B = cr.hessian_FH(s, c.x, c.tau)
        z0 = np.append(c.x, c.tau)

        def g(z):
            return np.append(s.F.grad(z[:m]) + z[m] * s.H.grad(z[:m]), s.H.value(z[:m]))
        h = 1e-6
        fd = np.column_stack([(g(z0 + h * e) - g(z0 - h * e)) / (2 * h) for e in np.eye(m + 1)])
        np.testing.assert_allclose(B, fd, atol=1e-6)


@pytest.mark.parametrize("matrix,tol,expected", [
    (np.diag([-1.0]), 1e-8, (1, True)),
    (np.diag([2.0, -3.0, -0.5e-12]), 1e-9, (1, False)),
    (np.array([[0.0, 2.0], [2.0, 0.0]]), 1e-8, (1, True)),
])
def test_morse_index(matrix, tol, expected):
    assert cr.morse_index(matrix, tol) == expected


@pytest.mark.parametrize("name", ["circle", "ellipse", "sphere", "quartic"])
def test_correspondence_and_index_shift(name):
    s = problems.get_problem(name)
    rep = cr.verify_crit_correspondence(s)
    assert rep.passed
    for pair in rep.pairs:
        assert pair["tau_deviation"] <= 1e-8
        assert pair["index_FH"] == pair["index_f"] + 1


def test_correspondence_reports_count_mismatch(monkeypatch):
    s = problems.get_problem("circle")
    monkeypatch.setattr(cr, "find_FH_critical_points", lambda setup: [])
    with pytest.raises(CorrespondenceFailed):
        cr.verify_crit_correspondence(s)


def test_degenerate_point_flagged_not_claimed():
    # F = x^3 on the circle: at (0, +-1) the tangential Hessian vanishes
    H = problems.get_problem("circle").H
    s = ProblemSetup(ScalarField.polynomial(2, {(3, 0): 1.0}), H,
                     crit_seeds=np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]]))
    crits = cr.find_critical_points(s)
    deg = [c for c in crits if not c.nondegenerate]
    assert deg, "expected a degenerate critical point"
    rep = cr.verify_crit_correspondence(s, crits)
    assert any(not p["nondegenerate"] for p in rep.pairs)


def test_find_FH_points_independent_of_sigma():
    s = problems.get_problem("ellipse")
    pts = cr.find_FH_critical_points(s)
    for z in pts:
        assert abs(s.H.value(z[:2])) <= 1e-12
