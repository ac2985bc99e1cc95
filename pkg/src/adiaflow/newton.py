"""Newton iteration for eps-trajectories near an embedded base trajectory.

The trivialized section F(Z) with Z = (X, l) is the box-scheme residual of
the eps-flow at (u, tau) = (q + X, chi(q) + l). Its derivative at Z = 0 is
exactly the assembled D^eps, so the iteration

    zeta_nu = -R F(Z_nu),   Z_{nu+1} = Z_nu + zeta_nu,   R = D*(D D*)^{-1}

keeps the right inverse frozen at the base path while re-evaluating the
section, starting from Z_0 = 0.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import DomainExit, Diverged, InsufficientData, UniquenessViolated
from .flows import AmbientPath
from .linops import (GramSolver, TangentField, assemble_Deps, eps_norm, random_smooth_field)
from .hypersurface import point_geometry

__all__ = ["NewtonReport", "trivialized_section", "section_derivative", "right_inverse_apply",
           "newton_iterate", "T_eps", "scaling_study", "ScalingResult", "uniqueness_probe",
           "quadratic_remainder_check", "loglog_slope"]

log = logging.getLogger(__name__)


def _packed(Z, n, m):
    if Z is None:
        return np.zeros((n, m + 1))
    if isinstance(Z, TangentField):
        return Z.packed()
    return np.asarray(Z, dtype=float).reshape(n, m + 1)


def trivialized_section(setup, path, eps, Z=None):
    """Box-scheme residual at the midpoints, shape (N, m+1).

    Row j: ((u_{j+1} - u_j)/ds + avg(grad F(u) + tau grad H(u)),
            (tau_{j+1} - tau_j)/ds + eps^-2 avg(H(u)))
    with u = q + X and tau = chi(q) + l on the nodes.
    """
    q = path.points
    n, m = q.shape
    Zp = _packed(Z, n, m)
    u = q + Zp[:, :m]
    if np.any(np.abs(u) > setup.box):
        raise DomainExit("q + X left the configured box")
    tau = path.geometry(setup).chi + Zp[:, m]
    ds = path.grid.ds
    G = setup.F.grad(u) + tau[:, None] * setup.H.grad(u)
    h = setup.H.value(u)
    r1 = np.diff(u, axis=0) / ds + 0.5 * (G[1:] + G[:-1])
    r2 = np.diff(tau) / ds + 0.5 * (h[1:] + h[:-1]) / eps**2
    return np.column_stack([r1, r2])


def section_derivative(setup, path, eps, Z, zeta):
    """Directional derivative dF(Z) zeta on unrestricted node fields."""
    q = path.points
    n, m = q.shape
    Zp, zp = _packed(Z, n, m), _packed(zeta, n, m)
    u = q + Zp[:, :m]
    tau = path.geometry(setup).chi + Zp[:, m]
    geo = point_geometry(setup, u, tau=tau)
    ds = path.grid.ds
    lin = np.einsum("nij,nj->ni", geo.K, zp[:, :m]) + zp[:, m, None] * geo.grad_H
    dh = geo.dH(zp[:, :m])
    r1 = np.diff(zp[:, :m], axis=0) / ds + 0.5 * (lin[1:] + lin[:-1])
    r2 = np.diff(zp[:, m]) / ds + 0.5 * (dh[1:] + dh[:-1]) / eps**2
    return np.column_stack([r1, r2])


def right_inverse_apply(Deps, r, solver=None):
    """zeta = D*(D D*)^{-1} r as a node field (N+1, m+1)."""
    solver = solver or GramSolver(Deps)
    return solver.apply(r)


@dataclass
class NewtonReport:
    eps: float
    iterations: list = field(default_factory=list)
    converged: bool = False
    Z_final: TangentField = None
    norm_Z_12eps: float = float("nan")
    norm_X_inf: float = float("nan")
    norm_ell_inf: float = float("nan")
    residual_final: float = float("nan")
    suspect: bool = False

    def to_dict(self):
        return {"eps": self.eps, "iterations": self.iterations, "converged": self.converged,
                "norm_Z_12eps": self.norm_Z_12eps, "norm_X_inf": self.norm_X_inf,
                "norm_ell_inf": self.norm_ell_inf, "residual_final": self.residual_final,
                "suspect": self.suspect}


def newton_iterate(setup, path, eps, max_iter=50, newton_tol=1e-10, Z0=None,
                   full_newton=False, solver=None):
    """Run the correction sequence from Z0 (default 0).

    Raises Diverged when the residual fails to contract for three
    consecutive steps; NotSurjective propagates from the Gram factorization.
    """
    D = solver.op if solver is not None else assemble_Deps(setup, path, eps)
    solver = solver or GramSolver(D)
    lay = D.layout
    ds = path.grid.ds
    v = np.zeros(lay.size) if Z0 is None else lay.reduce(_packed(Z0, lay.N + 1, setup.dim))
    report = NewtonReport(eps, suspect=solver.suspect)
    Z = lay.expand(v)
    r = trivialized_section(setup, path, eps, Z)
    nres = D.cod_norm(r)
    bad = 0
    for nu in range(max_iter):
        if nres <= newton_tol:
            report.converged = True
            break
        if full_newton and nu > 0:
            amb = AmbientPath(path.grid, path.points + Z[:, :-1],
                              path.geometry(setup).chi + Z[:, -1], path.x_minus, path.x_plus)
            solver = GramSolver(assemble_Deps(setup, amb, eps))
        zeta = -solver.apply_reduced(r.ravel())
        v = v + zeta
        Z = lay.expand(v)
        r = trivialized_section(setup, path, eps, Z)
        new = D.cod_norm(r)
        factor = new / nres
        zf = TangentField.from_packed(lay.expand(zeta), ds)
        report.iterations.append({"nu": nu, "norm_zeta_12eps": eps_norm(zf, eps, "n12"),
                                  "norm_residual_02eps": new, "contraction_factor": factor})
        bad = bad + 1 if factor >= 1 else 0
        nres = new
        if bad >= 3:
            raise Diverged(f"residual grew for 3 consecutive steps at eps={eps}")
        if not np.isfinite(new):
            raise Diverged("non-finite residual")
    else:
        report.converged = nres <= newton_tol
    Zf = TangentField.from_packed(Z, ds)
    report.Z_final = Zf
    report.residual_final = nres
    report.norm_Z_12eps = eps_norm(Zf, eps, "n12")
    report.norm_X_inf = float(np.max(np.linalg.norm(Zf.X, axis=1)))
    report.norm_ell_inf = float(np.max(np.abs(Zf.ell)))
    return report


def T_eps(setup, path, eps, report=None, **kwargs):
    """The eps-trajectory (q + X, chi(q) + l) produced by Newton from Z = 0."""
    report = report or newton_iterate(setup, path, eps, **kwargs)
    if not report.converged:
        from .errors import NoConvergence

        raise NoConvergence(f"Newton did not converge at eps={eps}")
    Z = report.Z_final
    return AmbientPath(path.grid, path.points + Z.X, path.geometry(setup).chi + Z.ell,
                       path.x_minus, path.x_plus, eps, meta={"newton": report.to_dict()})


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class ScalingResult:
    table: list
    slope_Z_12eps: float = None
    slope_X_inf: float = None
    slope_ell_inf: float = None
    ratio_X: list = None
    ratio_ell: list = None
    flagged: str = ""

    def to_dict(self):
        return dict(self.__dict__)

    CSV_COLUMNS = ("eps", "norm_Z_12eps", "norm_X_inf", "norm_ell_inf", "iterations", "residual")

    def to_csv(self, file):
        rows = [[r[k] for k in self.CSV_COLUMNS] for r in self.table]
        np.savetxt(file, np.array(rows, dtype=float), delimiter=",",
                   header=",".join(self.CSV_COLUMNS), comments="", fmt="%.17g")


def scaling_study(setup, path, eps_list, **kwargs):
    """Newton at each eps independently; log-log slopes of the norms of Z^eps.

    Ratios ||X||_inf / eps^{3/2} and ||l||_inf / eps^{1/2} are reported for
    the uniform-bound check.
    """
    eps_list = sorted(eps_list, reverse=True)
    if len(eps_list) < 2 or eps_list[0] / eps_list[-1] < 10 - 1e-9:
        raise InsufficientData("eps_list must span at least one decade")
    table = []
    for e in eps_list:
        rep = newton_iterate(setup, path, e, **kwargs)
        if not rep.converged:
            raise InsufficientData(f"Newton did not converge at eps={e}")
        table.append({"eps": e, "norm_Z_12eps": rep.norm_Z_12eps, "norm_X_inf": rep.norm_X_inf,
                      "norm_ell_inf": rep.norm_ell_inf, "iterations": len(rep.iterations),
                      "residual": rep.residual_final})
    e = np.array(eps_list)
    get = lambda k: np.array([r[k] for r in table])
    res = ScalingResult(table, ratio_X=(get("norm_X_inf") / e**1.5).tolist(),
                        ratio_ell=(get("norm_ell_inf") / e**0.5).tolist())
    if np.any(get("norm_Z_12eps") == 0):
        res.flagged = "zero correction; slopes undefined"
        return res
    res.slope_Z_12eps = loglog_slope(e, get("norm_Z_12eps"))
    res.slope_X_inf = loglog_slope(e, get("norm_X_inf"))
    res.slope_ell_inf = loglog_slope(e, get("norm_ell_inf"))
    return res


def uniqueness_probe(setup, path, eps, n_perturbations=20, delta0=0.05, rng=None,
                     tol=1e-8, newton_tol=1e-12, scale=1.0):
    """Restart Newton from Z^eps + D* W inside the ball |X|_inf <= delta0 sqrt(eps).

    ``scale`` > 1 pushes the starts outside the ball; outcomes are then only
    recorded. Raises UniquenessViolated when an in-ball start reconverges
    elsewhere.
    """
    rng = np.random.default_rng(rng)
    D = assemble_Deps(setup, path, eps)
    solver = GramSolver(D)
    base = newton_iterate(setup, path, eps, newton_tol=newton_tol, solver=solver)
    Zs = base.Z_final.packed()
    sm = path.grid.midpoints
    m = setup.dim
    radius = delta0 * np.sqrt(eps)
    out = []
    for k in range(n_perturbations):
        W = np.column_stack([random_smooth_field(rng, sm, m, zero_ends=False),
                             random_smooth_field(rng, sm, 1, zero_ends=False)])
        P = D.adjoint_apply(W)
        size = scale * radius * rng.uniform(0.2, 1.0)
        P *= size / np.max(np.linalg.norm(P[:, :m], axis=1))
        entry = {"k": k, "start_X_inf": float(np.max(np.linalg.norm(P[:, :m], axis=1)))}
        try:
            rep = newton_iterate(setup, path, eps, newton_tol=newton_tol, Z0=Zs + P,
                                 solver=solver)
            d = TangentField.from_packed(rep.Z_final.packed() - Zs, path.grid.ds)
            entry.update(converged=rep.converged, distance_12eps=eps_norm(d, eps, "n12"))
        except Diverged as exc:
            entry.update(converged=False, distance_12eps=float("inf"), error=str(exc))
        out.append(entry)
        if scale <= 1 and not (entry["converged"] and entry["distance_12eps"] <= tol):
            raise UniquenessViolated(f"perturbation {k} reconverged at distance "
                                     f"{entry['distance_12eps']:.2e}", pair=(Zs, Zs + P))
    return {"eps": eps, "delta0": delta0, "radius": radius, "runs": out,
            "max_distance": max(e["distance_12eps"] for e in out) if out else 0.0}


def quadratic_remainder_check(setup, path, eps, n_fields=5, rng=None,
                              t_ladder=(1.0, 0.5, 0.25, 0.125), size=0.1):
    """Scaling of the Taylor remainder and of the derivative difference.

    remainder(t) = F(Z + t zeta) - F(Z) - dF(Z) t zeta     (expect O(t^2))
    derivative(t) = dF(t Z) zeta - dF(0) zeta              (expect O(t))
    Norms are (0,2,eps) on the midpoint rows; random Z, zeta have sup norm
    `size`. Returns the minimal slopes over the fields, per row block too.
    """
    rng = np.random.default_rng(rng)
    s = path.grid.s
    m = setup.dim
    ds = path.grid.ds
    t = np.array(t_ladder)

    def n02(R):
        return float(np.sqrt(ds * np.sum(np.sum(R[:, :m] ** 2, 1) + eps**2 * R[:, m] ** 2)))

    def rand():
        Z = np.column_stack([random_smooth_field(rng, s, m), random_smooth_field(rng, s, 1)])
        return size * Z / np.max(np.abs(Z))

    slopes_rem, slopes_rem_H, slopes_der = [], [], []
    for _ in range(n_fields):
        Z, zeta = rand(), rand()
        F0 = trivialized_section(setup, path, eps, Z)
        dF = section_derivative(setup, path, eps, Z, zeta)
        rem = [trivialized_section(setup, path, eps, Z + tk * zeta) - F0 - tk * dF for tk in t]
        d0 = section_derivative(setup, path, eps, None, zeta)
        der = [section_derivative(setup, path, eps, tk * Z, zeta) - d0 for tk in t]
        slopes_rem.append(loglog_slope(t, [n02(r) for r in rem]))
        slopes_rem_H.append(loglog_slope(t, [np.sqrt(ds * np.sum(r[:, m] ** 2)) for r in rem]))
        slopes_der.append(loglog_slope(t, [n02(r) for r in der]))
    return {"eps": eps, "t_ladder": list(t_ladder),
            "remainder_slope_min": min(slopes_rem), "remainder_slopes": slopes_rem,
            "H_row_remainder_slopes": slopes_rem_H,
            "derivative_slope_min": min(slopes_der), "derivative_slopes": slopes_der}
