"""Scalar fields on R^m: values, gradients and Hessians.

Polynomial fields are stored as monomial lists and differentiated exactly.
Callback fields wrap arbitrary Python callables and fall back to central
finite differences for whatever derivatives are not supplied.

All evaluation methods broadcast over leading axes: a point array of shape
``(..., m)`` yields values ``(...)``, gradients ``(..., m)`` and Hessians
``(..., m, m)``.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .errors import CheckFailed, ConfigError, NumericalError

__all__ = [
    "ScalarField",
    "ProblemSetup",
    "derivative_check",
    "DerivativeReport",
    "evaluate",
    "grad",
    "hess",
]


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite {what}")
    return values


def _poly_eval(exps, coefs, p):
    if len(coefs) == 0:
        return np.zeros(p.shape[:-1])
    powers = np.prod(p[..., None, :] ** exps, axis=-1)
    return powers @ coefs


class ScalarField:
    """A smooth function R^m -> R.

    Parameters
    ----------
    dim : int
        Ambient dimension m.
    monomials : list of (exponents, coefficient), optional
        Polynomial representation. Mutually exclusive with `func`.
    func : callable, optional
        Callback ``func(p) -> float`` for a single point ``p``.
    grad_func, hess_func : callable, optional
        Analytic derivatives for callback fields. Missing ones are replaced
        by central differences.
    fd_step : float
        Finite-difference step.
    """

    def __init__(self, dim, monomials=None, func=None, grad_func=None,
                 hess_func=None, fd_step=1e-6):
        if dim < 1:
            raise ValueError("dimension must be positive")
        if (monomials is None) == (func is None):
            raise ValueError("give exactly one of monomials or func")
        if fd_step <= 0:
            raise ValueError("fd_step must be positive")
        self.dim = int(dim)
        self.fd_step = float(fd_step)
        self._func = func
        self._grad_func = grad_func
        self._hess_func = hess_func
        if monomials is not None:
            self.kind = "polynomial"
            exps = np.array([e for e, _ in monomials], dtype=int).reshape(-1, self.dim)
            coefs = np.array([c for _, c in monomials], dtype=float)
            if np.any(exps < 0):
                raise ValueError("negative exponent")
            self._exps, self._coefs = exps, coefs
            self._build_derivatives()
        else:
            self.kind = "callback"

    # -- construction -----------------------------------------------------

    def _build_derivatives(self):
        m = self.dim
        e, c = self._exps, self._coefs
        self._dexps, self._dcoefs = [], []
        for i in range(m):
            de = e.copy()
            de[:, i] = np.maximum(de[:, i] - 1, 0)
            self._dexps.append(de)
            self._dcoefs.append(c * e[:, i])
        self._hexps = [[None] * m for _ in range(m)]
        self._hcoefs = [[None] * m for _ in range(m)]
        for i in range(m):
            for j in range(i, m):
                he = self._dexps[i].copy()
                hc = self._dcoefs[i] * self._dexps[i][:, j]
                # d/dx_j of the i-derivative; exponent of x_j in dexps[i]
                he[:, j] = np.maximum(he[:, j] - 1, 0)
                self._hexps[i][j] = self._hexps[j][i] = he
                self._hcoefs[i][j] = self._hcoefs[j][i] = hc

    @classmethod
    def polynomial(cls, dim, terms, fd_step=1e-6):
        """Build from ``{exponent tuple: coefficient}`` or a list of pairs."""
        if isinstance(terms, dict):
            terms = list(terms.items())
        return cls(dim, monomials=[(tuple(e), float(c)) for e, c in terms], fd_step=fd_step)

    @classmethod
    def from_dict(cls, data):
        """Parse the polynomial JSON schema ``{"dim", "monomials": [...]}``."""
        try:
            dim = int(data["dim"])
            monos = [(tuple(int(x) for x in t["exps"]), float(t["coef"]))
                     for t in data["monomials"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad polynomial field: {exc}") from exc
        if any(len(e) != dim for e, _ in monos):
            raise ConfigError("exponent vector length differs from dim")
        return cls(dim, monomials=monos)

    def to_dict(self):
        if self.kind != "polynomial":
            raise TypeError("only polynomial fields serialize")
        return {"dim": self.dim,
                "monomials": [{"exps": [int(x) for x in e], "coef": float(c)}
                              for e, c in zip(self._exps, self._coefs)]}

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_json(self):
        return json.dumps(self.to_dict())

    @property
    def degree(self):
        if self.kind != "polynomial" or len(self._coefs) == 0:
            return None
        return int(self._exps.sum(axis=1).max())

    # -- evaluation -------------------------------------------------------

    def _as_points(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise NumericalError("non-finite input point")
        return p

    def _map_points(self, fn, p, shape):
        flat = p.reshape(-1, self.dim)
        out = np.array([fn(x) for x in flat], dtype=float)
        return out.reshape(p.shape[:-1] + shape)

    def value(self, p):
        p = self._as_points(p)
        if self.kind == "polynomial":
            out = _poly_eval(self._exps, self._coefs, p)
        else:
            out = self._map_points(self._func, p, ())
        return _check_finite(out, "field value")

    def grad(self, p):
        p = self._as_points(p)
        if self.kind == "polynomial":
            out = np.stack([_poly_eval(self._dexps[i], self._dcoefs[i], p)
                            for i in range(self.dim)], axis=-1)
        elif self._grad_func is not None:
            out = self._map_points(self._grad_func, p, (self.dim,))
        else:
            out = self._fd_grad(p)
        return _check_finite(out, "gradient")

    def hess(self, p):
        p = self._as_points(p)
        m = self.dim
        if self.kind == "polynomial":
            out = np.empty(p.shape[:-1] + (m, m))
            for i in range(m):
                for j in range(i, m):
                    v = _poly_eval(self._hexps[i][j], self._hcoefs[i][j], p)
                    out[..., i, j] = v
                    out[..., j, i] = v
        elif self._hess_func is not None:
            out = self._map_points(self._hess_func, p, (m, m))
        else:
            out = self._fd_hess(p)
        return _check_finite(out, "Hessian")

    __call__ = value

    # -- finite differences -----------------------------------------------

    def _fd_grad(self, p, h=None):
        h = self.fd_step if h is None else h
        out = np.empty(p.shape)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out[..., i] = (self.value(p + e) - self.value(p - e)) / (2 * h)
        return out

    def _fd_hess(self, p):
        m = self.dim
        out = np.empty(p.shape[:-1] + (m, m))
        if self.kind == "polynomial" or self._grad_func is not None:
            h = self.fd_step
            for j in range(m):
                e = np.zeros(m)
                e[j] = h
                out[..., :, j] = (self.grad(p + e) - self.grad(p - e)) / (2 * h)
            return 0.5 * (out + np.swapaxes(out, -1, -2))
        # second-order stencil on values; the step is enlarged because the
        # roundoff term scales like 1/h^2
        h = max(self.fd_step, 1e-4)
        f0 = self.value(p)
        for i in range(m):
            ei = np.zeros(m)
            ei[i] = h
            out[..., i, i] = (self.value(p + ei) - 2 * f0 + self.value(p - ei)) / h**2
            for j in range(i + 1, m):
                ej = np.zeros(m)
                ej[j] = h
                v = (self.value(p + ei + ej) - self.value(p + ei - ej)
                     - self.value(p - ei + ej) + self.value(p - ei - ej)) / (4 * h**2)
                out[..., i, j] = v
                out[..., j, i] = v
        return out

    def fd_grad(self, p):
        """Central-difference gradient regardless of the field kind."""
        return self._fd_grad(self._as_points(p))

    def fd_hess(self, p):
        """Central-difference Hessian of the analytic gradient."""
        return self._fd_hess(self._as_points(p))

    def __repr__(self):
        if self.kind == "polynomial":
            return f"ScalarField(dim={self.dim}, terms={len(self._coefs)})"
        return f"ScalarField(dim={self.dim}, callback)"


def evaluate(field, p):
    return field.value(p)


def grad(field, p):
    return field.grad(p)


def hess(field, p):
    return field.hess(p)


@dataclass
class DerivativeReport:
    n_points: int
    max_grad_deviation: float
    max_hess_deviation: float
    worst_point: np.ndarray
    tol: float
    passed: bool

    def to_dict(self):
        return {"n_points": self.n_points,
                "max_grad_deviation": self.max_grad_deviation,
                "max_hess_deviation": self.max_hess_deviation,
                "worst_point": self.worst_point.tolist(),
                "tol": self.tol, "passed": self.passed}


def derivative_check(field, n_points, tol, seed=0, box=2.0):
    """Compare analytic derivatives with finite differences at random points.

    The gradient is compared with central differences of the values, the
    Hessian with central differences of the gradient. Raises `CheckFailed`
    when the worst deviation exceeds `tol`.
    """
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-box, box, size=(n_points, field.dim))
    worst, worst_pt = -1.0, pts[0]
    gmax = hmax = 0.0
    for p in pts:
        dg = np.max(np.abs(field.grad(p) - field.fd_grad(p)))
        if field.kind == "callback" and field._hess_func is None:
            # nothing analytic to compare against beyond the gradient
            dh = 0.0
        else:
            dh = np.max(np.abs(field.hess(p) - field.fd_hess(p)))
        gmax, hmax = max(gmax, dg), max(hmax, dh)
        if max(dg, dh) > worst:
            worst, worst_pt = max(dg, dh), p
    report = DerivativeReport(n_points, float(gmax), float(hmax), worst_pt, tol, worst <= tol)
    if not report.passed:
        raise CheckFailed(f"derivative deviation {worst:.3e} exceeds {tol:.1e}",
                          point=worst_pt, deviation=worst)
    return report


@dataclass
class ProblemSetup:
    """A constrained problem: minimize-flow F subject to H = 0 in R^m.

    Attributes
    ----------
    kappa : float
        Half-width of the band H^{-1}[-kappa, kappa] where retraction is valid.
    box : float
        Half-width of the coordinate box containing the band.
    """

    F: ScalarField
    H: ScalarField
    name: str = "custom"
    kappa: float = 0.5
    box: float = 4.0
    sigma_seed: int = 0
    sigma_count: int = 400
    m_H_floor: float = 1e-6
    crit_seeds: np.ndarray = None
    description: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.F.dim != self.H.dim:
            raise ValueError("F and H live in different dimensions")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @property
    def dim(self):
        return self.F.dim

    def F_H(self, p, tau):
        """Lagrange function F + tau * H."""
        return self.F.value(p) + tau * self.H.value(p)
