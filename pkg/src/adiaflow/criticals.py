"""Critical points of f = F|_Sigma and of the Lagrange function F_H.

At a point of Sigma the Riemannian Hessian of f is the restriction of
K = Hess F + chi Hess H to the tangent space, so Newton on Sigma uses
E^T K E in an orthonormal tangent frame E.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import CorrespondenceFailed, NoConvergence, NotCritical
from .hypersurface import chi, project_to_sigma, sample_sigma, surface_frame

__all__ = ["CriticalPoint", "find_critical_points", "hessian_f", "hessian_FH",
           "morse_index", "verify_crit_correspondence", "find_FH_critical_points",
           "CorrespondenceReport",
           "critical_point_at"]

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-8


@dataclass
class CriticalPoint:
    x: np.ndarray
    f_value: float
    tau: float
    index_f: int
    index_FH: int
    hess_eigs_f: np.ndarray
    hess_eigs_FH: np.ndarray
    nondegenerate: bool

    def to_dict(self):
        return {"x": self.x.tolist(), "tau": self.tau, "f_value": self.f_value,
                "index_f": self.index_f, "index_FH": self.index_FH,
                "eigs_f": self.hess_eigs_f.tolist(), "eigs_FH": self.hess_eigs_FH.tolist(),
                "nondegenerate": self.nondegenerate}


def morse_index(matrix, degeneracy_tol=DEGENERACY_TOL):
    """Number of negative eigenvalues and a nondegeneracy flag.

    The threshold is relative to the spectral radius.
    """
    eigs = np.linalg.eigvalsh(np.atleast_2d(matrix))
    thr = degeneracy_tol * (np.max(np.abs(eigs)) if eigs.size else 0.0)
    return int(np.sum(eigs < -thr)), bool(np.all(np.abs(eigs) > thr))


def _K(setup, x, tau):
    return setup.F.hess(x) + tau * setup.H.hess(x)


def hessian_f(setup, x, crit_tol=1e-7):
    """Hessian of f at a critical point, in the tangent frame at x."""
    fr = surface_frame(setup, x)
    g = setup.F.grad(fr.q) + fr.chi * fr.grad_H
    if np.linalg.norm(g) > crit_tol:
        raise NotCritical(f"|grad f| = {np.linalg.norm(g):.2e} at {x}")
    E = fr.frame
    A = E.T @ _K(setup, fr.q, fr.chi) @ E
    return 0.5 * (A + A.T)


def hessian_FH(setup, x, tau, crit_tol=1e-7):
    """Full Hessian of (p, tau) -> F(p) + tau H(p), shape (m+1, m+1)."""
    x = np.asarray(x, dtype=float)
    gH = setup.H.grad(x)
    res = max(np.linalg.norm(setup.F.grad(x) + tau * gH), abs(setup.H.value(x)))
    if res > crit_tol:
        raise NotCritical(f"(x, tau) is not critical for F_H (residual {res:.2e})")
    m = setup.dim
    out = np.zeros((m + 1, m + 1))
    out[:m, :m] = _K(setup, x, tau)
    out[:m, m] = gH
    out[m, :m] = gH
    return out


def _newton_on_sigma(setup, q, tol=1e-12, max_iter=50):
    q = project_to_sigma(setup, q)
    for _ in range(max_iter):
        fr = surface_frame(setup, q)
        g = setup.F.grad(q) + fr.chi * fr.grad_H
        if np.linalg.norm(g) <= tol:
            return q
        E = fr.frame
        A = E.T @ _K(setup, q, fr.chi) @ E
        try:
            step = np.linalg.solve(A, -E.T @ g)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular Hessian during Newton") from exc
        # damp long steps so Newton stays on the local sheet
        n = np.linalg.norm(step)
        if n > 0.5:
            step *= 0.5 / n
        q = project_to_sigma(setup, q + E @ step)
        if not np.all(np.isfinite(q)):
            break
    raise NoConvergence(f"Newton did not reach |grad f| <= {tol:.0e}")


def critical_point_at(setup, x, degeneracy_tol=DEGENERACY_TOL):
    """Build the CriticalPoint record at a point known to be critical."""
    x = np.asarray(x, dtype=float)
    fr = surface_frame(setup, x)
    A = hessian_f(setup, x)
    B = hessian_FH(setup, x, fr.chi)
    i_f, nd_f = morse_index(A, degeneracy_tol)
    i_FH, nd_FH = morse_index(B, degeneracy_tol)
    return CriticalPoint(x=x, f_value=float(setup.F.value(x)), tau=fr.chi,
                         index_f=i_f, index_FH=i_FH,
                         hess_eigs_f=np.linalg.eigvalsh(A), hess_eigs_FH=np.linalg.eigvalsh(B),
                         nondegenerate=nd_f and nd_FH)


def find_critical_points(setup, seeds=None, degeneracy_tol=DEGENERACY_TOL, dedup=1e-6):
    """Newton on grad f from each seed; results sorted by decreasing f.

    Seeds default to the problem's own seeds, else random points of Sigma.
    """
    if seeds is None:
        seeds = setup.crit_seeds if setup.crit_seeds is not None else sample_sigma(setup, 64)
    found = []
    for s in np.atleast_2d(seeds):
        try:
            x = _newton_on_sigma(setup, s)
        except NoConvergence as exc:
            log.info("seed %s skipped: %s", s, exc)
            continue
        if any(np.linalg.norm(x - y) < dedup for y in found):
            continue
        found.append(x)
    crits = [critical_point_at(setup, x, degeneracy_tol) for x in found]
    crits.sort(key=lambda c: -c.f_value)
    return crits


def find_FH_critical_points(setup, seeds=None, tol=1e-12, max_iter=60, dedup=1e-6):
    """Zeros of grad F_H = (grad F + tau grad H, H) on M x R, found by
    unconstrained Newton in m+1 variables, independently of Sigma."""
    if seeds is None:
        seeds = setup.crit_seeds if setup.crit_seeds is not None else sample_sigma(setup, 64)
    m = setup.dim
    found = []
    for s in np.atleast_2d(seeds):
        # the multiplier guess only seeds Newton; it is not imposed
        z = np.append(np.asarray(s, dtype=float), chi(setup.F, setup.H, s, setup.m_H_floor))
        for _ in range(max_iter):
            x, tau = z[:m], z[m]
            g = np.append(setup.F.grad(x) + tau * setup.H.grad(x), setup.H.value(x))
            if np.linalg.norm(g) <= tol:
                break
            J = np.zeros((m + 1, m + 1))
            J[:m, :m] = _K(setup, x, tau)
            J[:m, m] = J[m, :m] = setup.H.grad(x)
            step = np.linalg.lstsq(J, -g, rcond=None)[0]
            n = np.linalg.norm(step)
            z = z + (step if n <= 0.5 else step * 0.5 / n)
        else:
            continue
        if np.linalg.norm(g) > tol or any(np.linalg.norm(z - y) < dedup for y in found):
            continue
        found.append(z)
    return found


@dataclass
class CorrespondenceReport:
    pairs: list = field(default_factory=list)
    passed: bool = True

    def to_dict(self):
        return {"passed": self.passed, "pairs": self.pairs}


def verify_crit_correspondence(setup, crits=None, tol=1e-8):
    """Check Crit f <-> Crit F_H and the index shift at each critical point.

    Degenerate points are reported but excluded from the index claim.
    Raises CorrespondenceFailed on the first violation.
    """
    if crits is None:
        crits = find_critical_points(setup)
    report = CorrespondenceReport()
    fh = find_FH_critical_points(setup)
    if len(fh) != len(crits):
        report.passed = False
        raise CorrespondenceFailed(f"{len(fh)} critical points of F_H but {len(crits)} of f")
    for c in crits:
        res = float(np.linalg.norm(setup.F.grad(c.x) + c.tau * setup.H.grad(c.x)))
        # forgetful map: the F_H critical point sitting over x
        dist = [np.linalg.norm(z[:-1] - c.x) for z in fh]
        k = int(np.argmin(dist))
        if dist[k] > tol:
            report.passed = False
            raise CorrespondenceFailed(f"no critical point of F_H over {c.x}", point=c.x)
        tau_FH = float(fh[k][-1])
        entry = {"x": c.x.tolist(), "tau": c.tau, "residual": res,
                 "tau_deviation": abs(tau_FH - c.tau),
                 "index_f": c.index_f, "index_FH": c.index_FH,
                 "nondegenerate": c.nondegenerate}
        report.pairs.append(entry)
        if res > tol or abs(tau_FH - c.tau) > tol:
            report.passed = False
            raise CorrespondenceFailed(f"dF + tau dH = {res:.2e} at {c.x}", point=c.x)
        if c.nondegenerate and c.index_FH != c.index_f + 1:
            report.passed = False
            raise CorrespondenceFailed(
                f"index_FH = {c.index_FH} but index_f = {c.index_f} at {c.x}", point=c.x)
    return report
