"""Built-in constrained problems.

The three listed built-ins are the ones exposed by the CLI. ``circle_plain``
(the unperturbed height function on the circle) and ``quartic`` are extra
test problems with closed-form data or non-quadratic constraints.
"""

import numpy as np

from .errors import ConfigError
from .fields import ProblemSetup, ScalarField

__all__ = ["circle", "circle_plain", "ellipse", "sphere", "quartic",
           "get_problem", "list_problems", "BUILTIN_NAMES"]


def _ring_seeds(n=16, a=1.0, b=1.0):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([a * np.sin(t), b * np.cos(t)])


def _sphere_seeds(n=60):
    # Fibonacci lattice, plus the poles so the height critical set is hit exactly
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z**2)
    phi = np.pi * (1 + 5**0.5) * k
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return np.vstack([pts, [[0, 0, 1], [0, 0, -1]]])


def _unit_sphere(dim):
    terms = {tuple(2 * np.eye(dim, dtype=int)[i]): 1.0 for i in range(dim)}
    terms[(0,) * dim] = -1.0
    return ScalarField.polynomial(dim, terms)


def circle():
    F = ScalarField.polynomial(2, {(0, 1): 1.0, (2, 0): 0.1})
    return ProblemSetup(F, _unit_sphere(2), name="circle", crit_seeds=_ring_seeds(),
                        description="H = x^2 + y^2 - 1, F = y + 0.1 x^2")


def circle_plain():
    F = ScalarField.polynomial(2, {(0, 1): 1.0})
    return ProblemSetup(F, _unit_sphere(2), name="circle_plain", crit_seeds=_ring_seeds(),
                        description="H = x^2 + y^2 - 1, F = y")


def ellipse():
    H = ScalarField.polynomial(2, {(2, 0): 0.25, (0, 2): 1.0, (0, 0): -1.0})
    F = ScalarField.polynomial(2, {(0, 1): 1.0})
    return ProblemSetup(F, H, name="ellipse", crit_seeds=_ring_seeds(a=2.0),
                        description="H = x^2/4 + y^2 - 1, F = y")


def sphere():
    F = ScalarField.polynomial(3, {(0, 0, 1): 1.0})
    return ProblemSetup(F, _unit_sphere(3), name="sphere", crit_seeds=_sphere_seeds(),
                        description="H = x^2 + y^2 + z^2 - 1, F = z; index difference 2, Newton-only")


def quartic():
    """Non-quadratic constraint: H = x^4 + y^2 - 1, F = y + 0.1 x."""
    H = ScalarField.polynomial(2, {(4, 0): 1.0, (0, 2): 1.0, (0, 0): -1.0})
    F = ScalarField.polynomial(2, {(0, 1): 1.0, (1, 0): 0.1})
    return ProblemSetup(F, H, name="quartic", kappa=0.3, crit_seeds=_ring_seeds(24),
                        description="H = x^4 + y^2 - 1, F = y + 0.1 x")


_LISTED = {"circle": circle, "ellipse": ellipse, "sphere": sphere}
_EXTRA = {"circle_plain": circle_plain, "quartic": quartic}
BUILTIN_NAMES = tuple(_LISTED)


def get_problem(name):
    try:
        return {**_LISTED, **_EXTRA}[name]()
    except KeyError:
        raise ConfigError(f"unknown built-in problem {name!r}") from None


def list_problems():
    """Static description of the listed built-ins with their critical sets."""
    from .criticals import find_critical_points

    out = []
    for name, make in _LISTED.items():
        setup = make()
        crits = find_critical_points(setup)
        out.append({"name": name, "dim": setup.dim, "description": setup.description,
                    "n_critical": len(crits),
                    "critical_points": [c.to_dict() for c in crits]})
    return out
