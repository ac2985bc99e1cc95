"""Geometry of the regular level set Sigma = H^{-1}(0) in Euclidean R^m.

Provides the tangent/normal splitting, the multiplier function
chi = -<grad F, grad H>/|grad H|^2, its surface gradient, the second
fundamental form, the graph embedding q -> (q, chi(q)) and the retraction
of nearby points onto Sigma along V = grad H/|grad H|^2.

Most helpers accept a single point ``(m,)`` or a stack ``(n, m)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGradient, NotOnSurface, NotTangent, RetractFailed

__all__ = [
    "SurfaceFrame",
    "surface_frame",
    "tangent_frame",
    "tan_nor_split",
    "chi",
    "chi_gradient_ambient",
    "grad_f_sigma",
    "grad_chi_sigma",
    "second_fundamental_form",
    "canonical_embed",
    "embed_derivative",
    "retract_to_sigma",
    "project_to_sigma",
    "sample_sigma",
    "m_H_estimate",
    "mu_inf_estimate",
    "PointGeometry",
    "point_geometry",
]

SURFACE_TOL = 1e-8


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def tangent_frame(normal):
    """Orthonormal basis of the complement of a unit vector.

    The m-1 standard basis vectors least aligned with `normal` are projected
    onto its orthogonal complement and orthonormalized by QR.
    """
    u = np.asarray(normal, dtype=float)
    m = u.shape[-1]
    keep = np.sort(np.argsort(np.abs(u), kind="stable")[: m - 1])
    basis = np.eye(m)[:, keep]
    basis = basis - np.outer(u, u @ basis)
    q, r = np.linalg.qr(basis)
    # fix signs so the frame varies continuously with the input
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q


@dataclass(frozen=True)
class SurfaceFrame:
    """Pointwise data on Sigma at q."""

    q: np.ndarray
    normal_u: np.ndarray
    grad_H: np.ndarray
    frame: np.ndarray
    chi: float
    grad_chi: np.ndarray
    mu: float

    @property
    def grad_H_sq(self):
        return float(self.grad_H @ self.grad_H)


def _grad_norm_checked(setup, g):
    n = np.sqrt(_dot(g, g))
    if np.any(n < setup.m_H_floor):
        raise DegenerateGradient(f"|grad H| = {np.min(n):.3e} below floor {setup.m_H_floor:.1e}")
    return n


def chi(F, H, p, m_H_floor=1e-6):
    """Multiplier chi(p) = -<grad F, grad H>/|grad H|^2."""
    gF, gH = F.grad(p), H.grad(p)
    n2 = _dot(gH, gH)
    if np.any(np.sqrt(n2) < m_H_floor):
        raise DegenerateGradient("grad H vanishes")
    return -_dot(gF, gH) / n2


def chi_gradient_ambient(setup, p):
    """Ambient gradient of the extension of chi to the regular set.

    Quotient rule on a/b with a = <grad F, grad H>, b = |grad H|^2.
    """
    gF, gH = setup.F.grad(p), setup.H.grad(p)
    hF, hH = setup.F.hess(p), setup.H.hess(p)
    _grad_norm_checked(setup, gH)
    a = _dot(gF, gH)
    b = _dot(gH, gH)
    da = np.einsum("...ij,...j->...i", hF, gH) + np.einsum("...ij,...j->...i", hH, gF)
    db = 2 * np.einsum("...ij,...j->...i", hH, gH)
    return -da / b[..., None] + (a / b**2)[..., None] * db


def surface_frame(setup, q, tol=SURFACE_TOL):
    q = np.asarray(q, dtype=float)
    h = setup.H.value(q)
    if abs(h) > tol:
        raise NotOnSurface(f"|H(q)| = {abs(h):.2e} exceeds {tol:.1e}")
    gH = setup.H.grad(q)
    n = float(_grad_norm_checked(setup, gH))
    u = gH / n
    c = float(-(setup.F.grad(q) @ gH) / n**2)
    gc = chi_gradient_ambient(setup, q)
    gc = gc - (gc @ u) * u
    return SurfaceFrame(q=q, normal_u=u, grad_H=gH, frame=tangent_frame(u),
                        chi=c, grad_chi=gc, mu=float(np.linalg.norm(gc)))


def tan_nor_split(frame, X):
    """Split X into (tangent, normal) parts at the frame's base point."""
    X = np.asarray(X, dtype=float)
    g = frame.grad_H
    nu = (X @ g) / (g @ g) * g
    return X - nu, nu


def grad_f_sigma(setup, frame):
    """Gradient of f = F restricted to Sigma, i.e. tan(grad F)."""
    xi, _ = tan_nor_split(frame, setup.F.grad(frame.q))
    return xi


def grad_chi_sigma(setup, frame):
    """Surface gradient of chi and its length mu."""
    return frame.grad_chi, frame.mu


def _require_tangent(frame, v, tol=1e-8):
    v = np.asarray(v, dtype=float)
    if abs(v @ frame.normal_u) > tol * max(1.0, np.linalg.norm(v)):
        raise NotTangent("vector has a normal component")
    return v


def second_fundamental_form(setup, frame, xi, eta):
    """II(xi, eta) for tangent vectors, returned as an ambient normal vector.

    For tangent fields, <D_xi eta, grad H> = -eta^T Hess H xi along Sigma.
    """
    xi = _require_tangent(frame, xi)
    eta = _require_tangent(frame, eta)
    hH = setup.H.hess(frame.q)
    sym = 0.5 * (xi @ hH @ eta + eta @ hH @ xi)
    return -sym / frame.grad_H_sq * frame.grad_H


def canonical_embed(setup, q, tol=SURFACE_TOL):
    """Graph embedding q -> (q, chi(q))."""
    q = np.asarray(q, dtype=float)
    if abs(setup.H.value(q)) > tol:
        raise NotOnSurface("point is not on Sigma")
    return q, float(chi(setup.F, setup.H, q, setup.m_H_floor))


def embed_derivative(frame, xi):
    """Linearized embedding xi -> (xi, d chi(q) xi)."""
    xi = np.asarray(xi, dtype=float)
    return xi, float(frame.grad_chi @ xi)


def _v_field(setup, p):
    g = setup.H.grad(p)
    return g / _dot(g, g)[..., None]


def _flow_minus_v(setup, p, r, substeps):
    """RK4 integration of dp/dt = -V(p) for parameter time r (per point)."""
    h = (r / substeps)[..., None]
    for _ in range(substeps):
        k1 = _v_field(setup, p)
        k2 = _v_field(setup, p - 0.5 * h * k1)
        k3 = _v_field(setup, p - 0.5 * h * k2)
        k4 = _v_field(setup, p - h * k3)
        p = p - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def retract_to_sigma(setup, p, tol=1e-12, max_iter=50):
    """Flow p back to Sigma along -V; returns (q, r) with p = phi_r(q), r = H(p).

    Since dH(V) = 1, flowing for parameter time H(p) lands on Sigma up to
    the RK4 error; the remainder is removed by repeating the flow with the
    residual value of H (a Newton iteration for the scalar root).
    Works on a single point or a stack of points.
    """
    p = np.asarray(p, dtype=float)
    r = setup.H.value(p)
    if np.any(np.abs(r) > setup.kappa):
        raise RetractFailed(f"|H(p)| = {np.max(np.abs(r)):.3g} outside band kappa={setup.kappa}")
    q = p.copy()
    h = r.copy()
    for _ in range(max_iter):
        if np.all(np.abs(h) <= tol):
            return q, r
        n = int(min(64, max(4, np.ceil(np.max(np.abs(h)) / 0.01))))
        q = _flow_minus_v(setup, q, h, n)
        h = setup.H.value(q)
        if not np.all(np.isfinite(q)):
            break
    if np.all(np.abs(h) <= tol):
        return q, r
    raise RetractFailed(f"retraction stalled at |H| = {np.max(np.abs(h)):.2e}")


def project_to_sigma(setup, p, tol=1e-13, max_iter=60):
    """Newton projection along grad H onto Sigma (no band restriction).

    Used for sampling and for grid midpoints; for points already close to
    Sigma the foot point agrees with `retract_to_sigma` to second order.
    """
    p = np.array(p, dtype=float)
    for _ in range(max_iter):
        h = setup.H.value(p)
        if np.all(np.abs(h) <= tol):
            break
        g = setup.H.grad(p)
        n2 = _dot(g, g)
        n2 = np.where(n2 < 1e-300, np.inf, n2)
        step = (h / n2)[..., None] * g
        p = p - step
    return p


def sample_sigma(setup, n, seed=None):
    """Random points on Sigma inside the configured box."""
    rng = np.random.default_rng(setup.sigma_seed if seed is None else seed)
    out = []
    tries = 0
    while sum(len(o) for o in out) < n and tries < 50:
        tries += 1
        pts = rng.uniform(-setup.box, setup.box, size=(2 * n, setup.dim))
        with np.errstate(all="ignore"):
            q = project_to_sigma(setup, pts)
        ok = np.all(np.isfinite(q), axis=1)
        q = q[ok]
        ok = (np.abs(setup.H.value(q)) <= 1e-12) & np.all(np.abs(q) <= setup.box, axis=1)
        out.append(q[ok])
    pts = np.concatenate(out)[:n]
    if len(pts) == 0:
        raise NotOnSurface("could not sample Sigma in the configured box")
    return pts


def m_H_estimate(setup, n_samples=2000, seed=None):
    """min |grad H| over sampled points of Sigma."""
    pts = sample_sigma(setup, n_samples, seed)
    val = float(np.min(np.linalg.norm(setup.H.grad(pts), axis=1)))
    if val < setup.m_H_floor:
        raise DegenerateGradient(f"m_H estimate {val:.2e} below floor")
    return val


def mu_inf_estimate(setup, n_samples=2000, seed=None, extra_points=None):
    """max(1, max |surface grad chi|) over samples (and optional extra points)."""
    pts = sample_sigma(setup, n_samples, seed)
    if extra_points is not None:
        pts = np.concatenate([pts, np.asarray(extra_points)])
    geo = point_geometry(setup, pts)
    return max(1.0, float(np.max(geo.mu)))


@dataclass
class PointGeometry:
    """Vectorized geometry at a stack of points (n, m).

    ``tau`` is the multiplier used in K = Hess F + tau Hess H; it equals
    chi at the points unless given explicitly.
    """

    points: np.ndarray
    grad_F: np.ndarray
    grad_H: np.ndarray
    hess_F: np.ndarray
    hess_H: np.ndarray
    chi: np.ndarray
    tau: np.ndarray
    grad_chi: np.ndarray
    mu: np.ndarray
    frames: np.ndarray

    @property
    def K(self):
        return self.hess_F + self.tau[:, None, None] * self.hess_H

    def tan(self, X):
        g = self.grad_H
        return X - (_dot(X, g) / _dot(g, g))[:, None] * g

    def dH(self, X):
        return _dot(X, self.grad_H)


def point_geometry(setup, points, tau=None):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    gF = setup.F.grad(points)
    gH = setup.H.grad(points)
    n = _grad_norm_checked(setup, gH)
    c = -_dot(gF, gH) / n**2
    u = gH / n[:, None]
    gc = chi_gradient_ambient(setup, points)
    gc = gc - _dot(gc, u)[:, None] * u
    frames = np.stack([tangent_frame(ui) for ui in u]) if setup.dim > 1 else np.zeros((len(points), 1, 0))
    return PointGeometry(points=points, grad_F=gF, grad_H=gH,
                         hess_F=setup.F.hess(points), hess_H=setup.H.hess(points),
                         chi=c, tau=c.copy() if tau is None else np.asarray(tau, dtype=float),
                         grad_chi=gc, mu=np.linalg.norm(gc, axis=1), frames=frames)
