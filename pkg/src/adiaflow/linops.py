"""Discretized linearized operators, epsilon-weighted norms and probes.

Discretization
--------------
Fields live on the nodes s_j = -T + j ds (j = 0..N); operator outputs live
on the midpoints s_{j+1/2}. Each row block is a box (trapezoid) scheme:

    D^eps Z |_{j+1/2} = ( (X_{j+1} - X_j)/ds + avg(K X + l grad H),
                          (l_{j+1} - l_j)/ds + eps^-2 avg(dH X) )

with K = Hess F + tau Hess H and avg the mean of the two node values. The
base operator D^0 uses per-node tangent frames E_j and projects rows onto
the tangent frame at the midpoint (the chord midpoint pulled back to Sigma).

Boundary conditions are spectral: at s = -T the node value is restricted to
the span of asymptotic eigenvectors that decay as s -> -inf, at s = +T to
those decaying as s -> +inf. With these the discrete index equals the
Morse index difference, as in the continuum.

All weighted inner products use trapezoid weights on nodes, ds on
midpoints and eps^2 on the l component; in whitened coordinates the
weighted adjoint is the plain transpose, so adjoints are exact.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import FrameDegenerate, IllConditioned, NotSurjective
from .hypersurface import point_geometry, project_to_sigma, tangent_frame

__all__ = [
    "TangentField", "LinearOperator", "Layout", "GramSolver",
    "node_weights", "eps_norm", "pi_eps", "embed_field", "b_inverse_norms",
    "assemble_D0", "assemble_Deps", "fredholm_index_estimate", "kernel_vector",
    "kernel_correlation",
    "continuum_adjoint_D0", "continuum_adjoint_Deps", "estimate_probe",
    "random_smooth_field", "ProbeReport",
]

log = logging.getLogger(__name__)


# -- fields and norms ---------------------------------------------------------


@dataclass
class TangentField:
    """Node (or midpoint) samples of an ambient variation Z = (X, l).

    ``tangency`` is ``"sigma_tangent"`` for X-only fields tangent to Sigma
    along the base path and ``"ambient"`` otherwise.
    """

    X: np.ndarray
    ell: np.ndarray = None
    ds: float = None
    tangency: str = "ambient"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.ell is None:
            self.ell = np.zeros(len(self.X))
        self.ell = np.asarray(self.ell, dtype=float)

    @property
    def n(self):
        return len(self.X)

    def packed(self):
        return np.column_stack([self.X, self.ell])

    @classmethod
    def from_packed(cls, Z, ds=None):
        return cls(Z[:, :-1].copy(), Z[:, -1].copy(), ds)

    def __add__(self, other):
        return TangentField(self.X + other.X, self.ell + other.ell, self.ds, "ambient")

    def __sub__(self, other):
        return TangentField(self.X - other.X, self.ell - other.ell, self.ds, "ambient")

    def scaled(self, t):
        return TangentField(t * self.X, t * self.ell, self.ds, self.tangency)

    def check_tangent(self, grad_H, tol=1e-8):
        return bool(np.all(np.abs(np.einsum("ij,ij->i", self.X, grad_H)) <= tol))


def node_weights(n_nodes, ds):
    w = np.full(n_nodes, ds)
    w[0] = w[-1] = ds / 2
    return w


def eps_norm(field, eps, which="n02", ds=None):
    """(0,2,eps), (1,2,eps) and (0,inf,eps) norms of a node field.

    n02^2 = int |X|^2 + eps^2 l^2 (trapezoid)
    n12^2 = n02^2 + int eps^2 |X'|^2 + eps^4 l'^2 (forward differences)
    n0inf = max |X| + eps max |l|
    """
    ds = field.ds if ds is None else ds
    X, ell = field.X, field.ell
    if which == "n0inf":
        return float(np.max(np.linalg.norm(X, axis=1)) + eps * np.max(np.abs(ell)))
    if ds is None:
        raise ValueError("grid spacing required for integral norms")
    w = node_weights(len(X), ds)
    sq = np.sum(w * (np.sum(X**2, axis=1) + eps**2 * ell**2))
    if which == "n02":
        return float(np.sqrt(sq))
    if which != "n12":
        raise ValueError(f"unknown norm {which!r}")
    dX = np.diff(X, axis=0) / ds
    dl = np.diff(ell) / ds
    sq += ds * np.sum(eps**2 * np.sum(dX**2, axis=1) + eps**4 * dl**2)
    return float(np.sqrt(sq))


def _geo(setup, points, geometry=None):
    return geometry if geometry is not None else point_geometry(setup, points)


def pi_eps(setup, points, field, eps, alpha=2.0, beta=2.0, geometry=None):
    """Projection of ambient variations onto tangent variations of Sigma.

    pi(X, l) = (1 + eps^a mu^2 P)^{-1} (tan X + eps^b l grad chi), P the
    orthogonal projection onto grad chi (zero where mu = 0). The inverse of
    the rank-one shift is applied in closed form.
    """
    geo = _geo(setup, points, geometry)
    v = geo.tan(field.X) + (eps**beta * field.ell)[:, None] * geo.grad_chi
    gc = geo.grad_chi
    coef = eps**alpha / (1 + eps**alpha * geo.mu**2)
    v = v - (coef * np.einsum("ij,ij->i", gc, v))[:, None] * gc
    return TangentField(v, None, field.ds, "sigma_tangent")


def embed_field(setup, points, xi, geometry=None):
    """I_q xi = (xi, d chi(q) xi) for a tangent node field."""
    geo = _geo(setup, points, geometry)
    X = xi.X if isinstance(xi, TangentField) else np.asarray(xi)
    ds = xi.ds if isinstance(xi, TangentField) else None
    return TangentField(X, np.einsum("ij,ij->i", geo.grad_chi, X), ds)


def b_inverse_norms(setup, points, eps, alpha=2.0, n_random=20, rng=None, geometry=None):
    """Operator norms of B^{-1} = (1 + eps^a mu^2 P)^{-1} and relatives per node.

    Returns the per-node spectral norms of B^{-1}, B^{-1}P, eps^{a/2} mu B^{-1}P
    and eps^a mu^2 B^{-1}P (computed in the tangent frame), and the maxima of
    the corresponding ratios on random tangent vectors.
    """
    rng = np.random.default_rng(rng)
    geo = _geo(setup, points, geometry)
    n, m = geo.points.shape
    out = {k: np.zeros(n) for k in ("B_inv", "B_inv_P", "mu_B_inv_P", "mu2_B_inv_P")}
    sampled = {k: 0.0 for k in out}
    ea = eps**alpha
    for j in range(n):
        E = geo.frames[j]
        mu = geo.mu[j]
        g = E.T @ geo.grad_chi[j]
        P = np.outer(g, g) / mu**2 if mu > 0 else np.zeros((m - 1, m - 1))
        Binv = np.linalg.inv(np.eye(m - 1) + ea * mu**2 * P)
        mats = {"B_inv": Binv, "B_inv_P": Binv @ P,
                "mu_B_inv_P": eps ** (alpha / 2) * mu * Binv @ P,
                "mu2_B_inv_P": ea * mu**2 * Binv @ P}
        xs = rng.standard_normal((n_random, m - 1))
        for k, A in mats.items():
            out[k][j] = np.linalg.norm(A, 2)
            r = np.linalg.norm(xs @ A.T, axis=1) / np.linalg.norm(xs, axis=1)
            sampled[k] = max(sampled[k], float(np.max(r)))
    return {"eps": eps, "alpha": alpha, "per_node": {k: v.tolist() for k, v in out.items()},
            "max": {k: float(np.max(v)) for k, v in out.items()}, "sampled_max": sampled}


# -- operator layouts -----------------------------------------------------------


@dataclass
class Layout:
    """Node-based domain: d coordinates per node, end nodes restricted to
    the column spans of V0 and VN (orthonormal for the component weights)."""

    N: int
    d: int
    ds: float
    comp_weight: np.ndarray
    V0: np.ndarray
    VN: np.ndarray

    @property
    def k0(self):
        return self.V0.shape[1]

    @property
    def kN(self):
        return self.VN.shape[1]

    @property
    def size(self):
        return self.k0 + (self.N - 1) * self.d + self.kN

    def sqrt_weights(self):
        w = node_weights(self.N + 1, self.ds)
        inner = np.sqrt(np.outer(w[1:-1], self.comp_weight)).ravel()
        return np.concatenate([np.full(self.k0, np.sqrt(w[0])), inner,
                               np.full(self.kN, np.sqrt(w[-1]))])

    def expand(self, v):
        v = np.asarray(v)
        out = np.empty((self.N + 1, self.d))
        out[0] = self.V0 @ v[: self.k0]
        out[1:-1] = v[self.k0: self.k0 + (self.N - 1) * self.d].reshape(self.N - 1, self.d)
        out[-1] = self.VN @ v[self.size - self.kN:]
        return out

    def reduce(self, Z):
        """Coordinates of a node field; end values are projected onto the
        allowed spans (orthogonally for the component weights)."""
        Z = np.asarray(Z, dtype=float)
        c = self.comp_weight
        return np.concatenate([self.V0.T @ (c * Z[0]), Z[1:-1].ravel(),
                               self.VN.T @ (c * Z[-1])])

    def node_offsets(self):
        """First reduced coordinate of each node; last entry is the size."""
        off = np.empty(self.N + 2, dtype=int)
        off[0] = 0
        off[1:self.N + 1] = self.k0 + np.arange(self.N) * self.d
        off[self.N + 1] = self.size
        return off


class LinearOperator:
    """Banded operator from a node Layout to midpoint fields.

    ``matrix`` maps reduced domain coordinates to stacked midpoint rows.
    Weighted inner products are diagonal; ``whitened()`` returns
    M = Wc^{1/2} A Wd^{-1/2} whose transpose is the weighted adjoint.
    """

    def __init__(self, matrix, layout, row_weight, eps, kind, meta=None):
        self.matrix = sp.csr_matrix(matrix)
        self.layout = layout
        self.row_weight = np.asarray(row_weight, dtype=float)  # per row within a block
        self.eps = eps
        self.kind = kind
        self.meta = meta or {}
        self._wd = layout.sqrt_weights()
        self._wc = np.tile(np.sqrt(layout.ds * self.row_weight), layout.N)
        self._M = None

    @property
    def domain_dim(self):
        return self.matrix.shape[1]

    @property
    def codomain_dim(self):
        return self.matrix.shape[0]

    @property
    def weight_domain(self):
        return self._wd**2

    @property
    def weight_codomain(self):
        return self._wc**2

    @property
    def dc(self):
        return len(self.row_weight)

    def whitened(self):
        if self._M is None:
            self._M = (sp.diags(self._wc) @ self.matrix @ sp.diags(1 / self._wd)).tocsr()
        return self._M

    def bandwidth(self):
        coo = self.matrix.tocoo()
        return int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0

    # coordinate helpers
    def apply_reduced(self, v):
        return self.matrix @ v

    def adjoint_reduced(self, w):
        return (self.matrix.T @ (self._wc**2 * w)) / self._wd**2

    def apply(self, Z):
        """Apply to a node field (N+1, d); end values are first projected
        onto the boundary spans."""
        return (self.matrix @ self.layout.reduce(Z)).reshape(self.layout.N, self.dc)

    def adjoint_apply(self, W):
        """Weighted adjoint applied to a midpoint field (N, dc)."""
        return self.layout.expand(self.adjoint_reduced(np.asarray(W).ravel()))

    def dom_inner(self, a, b):
        return float(np.sum(self._wd**2 * a * b))

    def cod_inner(self, a, b):
        return float(np.sum(self._wc**2 * a * b))

    def cod_norm(self, w):
        return float(np.linalg.norm(self._wc * np.asarray(w).ravel()))

    def dom_norm(self, v):
        return float(np.linalg.norm(self._wd * v))

    def adjoint(self):
        """The adjoint as an explicit matrix (midpoint rows -> reduced domain)."""
        A = sp.diags(1 / self._wd**2) @ self.matrix.T @ sp.diags(self._wc**2)
        adj = LinearOperator.__new__(LinearOperator)
        adj.matrix = sp.csr_matrix(A)
        adj.layout, adj.row_weight, adj.eps, adj.meta = self.layout, self.row_weight, self.eps, self.meta
        adj.kind = self.kind + "_adjoint"
        adj._wd, adj._wc, adj._M = self._wc, self._wd, None
        return adj


def _assemble(left, right, layout, row_weight, eps, kind, meta=None):
    """Stack per-midpoint blocks L_j (node j) and R_j (node j+1)."""
    N, d = layout.N, layout.d
    dc = left.shape[1]
    off = layout.node_offsets()
    rows, cols, vals = [], [], []

    def put(j_row, node, block):
        if node == 0:
            block = block @ layout.V0
        elif node == N:
            block = block @ layout.VN
        r, c = np.nonzero(np.ones_like(block, dtype=bool))
        rows.append(j_row * dc + r)
        cols.append(off[node] + c)
        vals.append(block[r, c])

    for j in range(N):
        put(j, j, left[j])
        put(j, j + 1, right[j])
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * dc, layout.size))
    return LinearOperator(A, layout, row_weight, eps, kind, meta)


def _spectral_basis(S_sym, comp_weight, sign):
    """Eigenvectors of W^{-1} S (S symmetric, W = diag(comp_weight)) with
    eigenvalues of the given sign, orthonormal for the W inner product."""
    r = 1 / np.sqrt(comp_weight)
    lam, w = np.linalg.eigh(r[:, None] * S_sym * r[None, :])
    keep = lam < 0 if sign < 0 else lam > 0
    return r[:, None] * w[:, keep], lam[keep]


def _midpoint_frames(setup, q):
    mid = project_to_sigma(setup, 0.5 * (q[1:] + q[:-1]))
    g = setup.H.grad(mid)
    u = g / np.linalg.norm(g, axis=1)[:, None]
    return np.stack([tangent_frame(x) for x in u]), mid


def _frames_checked(frames, tol=1e-8):
    k = frames.shape[-1]
    G = np.einsum("nij,nik->njk", frames, frames)
    if np.max(np.abs(G - np.eye(k))) > tol:
        raise FrameDegenerate("tangent frame lost orthonormality")
    return frames


def assemble_D0(setup, path, variant="operator"):
    """Base linearization on tangent fields, in per-node frame coordinates.

    Parameters
    ----------
    path : BasePath
        Needs ``points``, ``grid`` and critical-point labels ``x_minus``,
        ``x_plus`` (CriticalPoint) for the spectral boundary spans.
    variant : {"operator", "adjoint"}
    """
    from .criticals import hessian_f
    from .hypersurface import surface_frame

    q = path.points
    N, ds = path.grid.N, path.grid.ds
    geo = point_geometry(setup, q)
    E = _frames_checked(geo.frames)
    Ehat, _ = _midpoint_frames(setup, q)
    KE = np.einsum("nij,njk->nik", geo.K, E)
    left = np.einsum("nji,njk->nik", Ehat, -E[:-1] / ds + 0.5 * KE[:-1])
    right = np.einsum("nji,njk->nik", Ehat, E[1:] / ds + 0.5 * KE[1:])
    d = setup.dim - 1

    def end_basis(x, Ej, sign):
        fr = surface_frame(setup, x)
        V, lam = _spectral_basis(hessian_f(setup, x), np.ones(d), sign)
        V = Ej.T @ fr.frame @ V
        Q, _ = np.linalg.qr(V) if V.shape[1] else (V, None)
        return Q

    layout = Layout(N, d, ds, np.ones(d), end_basis(path.x_minus.x, E[0], -1),
                    end_basis(path.x_plus.x, E[-1], +1))
    op = _assemble(left, right, layout, np.ones(d), None, "D0",
                   meta={"frames": E, "mid_frames": Ehat})
    return op if variant == "operator" else op.adjoint()


def ambient_state(setup, path):
    """(u, tau) node arrays of an AmbientPath or of an embedded BasePath."""
    if hasattr(path, "u"):
        return path.u, path.tau
    return path.points, point_geometry(setup, path.points).chi


def assemble_Deps(setup, path, eps, variant="operator"):
    """Ambient epsilon-linearization on (X, l) node fields."""
    from .criticals import hessian_FH

    if eps <= 0:
        raise ValueError("eps must be positive")
    u, tau = ambient_state(setup, path)
    N, ds = path.grid.N, path.grid.ds
    m = setup.dim
    geo = point_geometry(setup, u, tau=tau)
    K, g = geo.K, geo.grad_H
    blocks = np.zeros((N + 1, 2, m + 1, m + 1))  # [node, (left,right) sign]
    I = np.eye(m)
    for side, sgn in ((0, -1.0), (1, 1.0)):
        blocks[:, side, :m, :m] = sgn * I / ds + 0.5 * K
        blocks[:, side, :m, m] = 0.5 * g
        blocks[:, side, m, :m] = 0.5 * g / eps**2
        blocks[:, side, m, m] = sgn / ds
    cw = np.append(np.ones(m), eps**2)
    xm, xp = path.x_minus, path.x_plus
    V0, _ = _spectral_basis(hessian_FH(setup, xm.x, xm.tau), cw, -1)
    VN, _ = _spectral_basis(hessian_FH(setup, xp.x, xp.tau), cw, +1)
    layout = Layout(N, m + 1, ds, cw, V0, VN)
    op = _assemble(blocks[:-1, 0], blocks[1:, 1], layout, cw, eps, "Deps")
    return op if variant == "operator" else op.adjoint()


def continuum_adjoint_D0(setup, path, eta):
    """-nabla_s eta + tan(K eta) at interior nodes for a tangent ambient field
    eta sampled on nodes (central differences; validation target only)."""
    geo = point_geometry(setup, path.points)
    ds = path.grid.ds
    d_eta = np.zeros_like(eta)
    d_eta[1:-1] = (eta[2:] - eta[:-2]) / (2 * ds)
    out = geo.tan(-d_eta + np.einsum("nij,nj->ni", geo.K, eta))
    return out[1:-1]


def continuum_adjoint_Deps(setup, path, eps, Y, mvals):
    """(-Y' + K Y + m grad H, -m' + eps^-2 dH Y) at interior nodes."""
    u, tau = ambient_state(setup, path)
    geo = point_geometry(setup, u, tau=tau)
    ds = path.grid.ds
    dY = (Y[2:] - Y[:-2]) / (2 * ds)
    dm = (mvals[2:] - mvals[:-2]) / (2 * ds)
    s = slice(1, -1)
    X = -dY + np.einsum("nij,nj->ni", geo.K[s], Y[s]) + mvals[s, None] * geo.grad_H[s]
    ell = -dm + np.einsum("ni,ni->n", geo.grad_H[s], Y[s]) / eps**2
    return X, ell


# -- right inverse ---------------------------------------------------------------


def _to_banded_upper(G):
    G = G.tocoo()
    mask = G.col >= G.row
    r, c, v = G.row[mask], G.col[mask], G.data[mask]
    u = int(np.max(c - r)) if len(r) else 0
    ab = np.zeros((u + 1, G.shape[0]))
    ab[u + r - c, c] = v
    return ab


class GramSolver:
    """Right inverse R = A* (A A*)^{-1} through a banded Cholesky factor of
    the whitened Gram matrix M M^T.

    A failed factorization is retried once with diagonal jitter
    1e-14 * trace; such a solver is flagged ``suspect``. A second failure,
    or a factor whose pivots reveal numerical rank deficiency, raises
    NotSurjective.
    """

    PIVOT_RATIO = 1e-6  # min/max Cholesky pivot; squared this bounds 1/cond
    INV_ITERS = 6

    def __init__(self, op, refine_steps=2):
        self.op = op
        self.M = op.whitened()
        self.G = (self.M @ self.M.T).tocsr()
        self.refine_steps = refine_steps
        self.suspect = False
        ab = _to_banded_upper(self.G)
        try:
            self.cb = self._factor(ab)
        except np.linalg.LinAlgError:
            jitter = 1e-14 * float(self.G.diagonal().sum())
            ab = ab.copy()
            ab[-1] += jitter
            self.suspect = True
            log.warning("Gram factorization needed jitter %.2e", jitter)
            try:
                self.cb = self._factor(ab)
            except np.linalg.LinAlgError as exc:
                raise NotSurjective("Gram matrix D D* is not positive definite") from exc

    def _factor(self, ab):
        cb = sla.cholesky_banded(ab, lower=False)
        piv = np.abs(cb[-1])
        if np.min(piv) < self.PIVOT_RATIO * np.max(piv):
            raise NotSurjective(f"Gram matrix numerically singular "
                                f"(pivot ratio {np.min(piv) / np.max(piv):.1e})")
        # pivots miss a cokernel localized away from the last rows; inverse
        # iteration bounds the smallest eigenvalue directly
        y = np.random.default_rng(0).standard_normal(cb.shape[1])
        lam = np.inf
        for _ in range(self.INV_ITERS):
            y /= np.linalg.norm(y)
            z = sla.cho_solve_banded((cb, False), y)
            lam = 1.0 / np.linalg.norm(z)
            y = z
        if not np.isfinite(lam) or lam < self.PIVOT_RATIO**2 * np.max(piv) ** 2:
            raise NotSurjective(f"Gram matrix numerically singular "
                                f"(min eigenvalue ~{lam:.1e})")
        self.min_eig = lam
        return cb

    def solve_gram(self, b):
        y = sla.cho_solve_banded((self.cb, False), b)
        for _ in range(self.refine_steps):
            y = y + sla.cho_solve_banded((self.cb, False), b - self.G @ y)
        return y

    def apply_reduced(self, r):
        """Minimum-norm preimage (reduced coordinates) of codomain vector r."""
        y = self.solve_gram(self.op._wc * r)
        return (self.M.T @ y) / self.op._wd

    def apply(self, R):
        """Node field zeta with A zeta = R (R a midpoint field)."""
        return self.op.layout.expand(self.apply_reduced(np.asarray(R).ravel()))

    def kernel_projector(self, v):
        """I - A*(A A*)^{-1} A applied to reduced coordinates."""
        return v - self.apply_reduced(self.op.matrix @ v)


# -- Fredholm index ----------------------------------------------------------------


def _augmented_banded(op):
    """[[0, M], [M^T, 0]] in node/midpoint interleaved order, upper banded."""
    M = op.whitened().tocoo()
    lay = op.layout
    off = lay.node_offsets()
    dc = op.dc
    # position of node j's coordinates and midpoint j's rows in the interleaving
    col_pos = np.empty(lay.size, dtype=int)
    row_pos = np.empty(M.shape[0], dtype=int)
    pos = 0
    for j in range(lay.N + 1):
        n_j = off[j + 1] - off[j]
        col_pos[off[j]:off[j + 1]] = pos + np.arange(n_j)
        pos += n_j
        if j < lay.N:
            row_pos[j * dc:(j + 1) * dc] = pos + np.arange(dc)
            pos += dc
    n = pos
    r, c = row_pos[M.row], col_pos[M.col]
    i, k = np.minimum(r, c), np.maximum(r, c)
    u = int(np.max(k - i))
    ab = np.zeros((u + 1, n))
    ab[u + i - k, k] = M.data
    return ab


def _singular_spectrum(op, dense_limit=800):
    """Singular values of the whitened matrix (small ones reliably)."""
    M = op.whitened()
    r, c = M.shape
    if max(r, c) <= dense_limit:
        return np.sort(sla.svdvals(M.toarray())), 0
    lam = sla.eigvals_banded(_augmented_banded(op), lower=False, select="a")
    return np.sort(np.abs(lam)), abs(c - r)


def fredholm_index_estimate(op, rank_tol=1e-7):
    """(dim ker, dim coker, index) from the singular values of `op`.

    Large operators use the eigenvalues of the symmetric augmented matrix
    [[0, M], [M^T, 0]], which are +-sigma plus |cols - rows| exact zeros.
    """
    vals, structural = _singular_spectrum(op)
    smax = float(np.max(vals))
    thr = rank_tol * smax
    ambiguous = (vals >= thr / 10) & (vals <= thr * 10)
    if np.any(ambiguous):
        raise IllConditioned(f"singular values within a decade of {thr:.2e}: "
                             f"{vals[ambiguous][:5]}")
    rows, cols = op.codomain_dim, op.domain_dim
    n_small = int(np.sum(vals < thr))
    if structural:
        n_small = (n_small - structural) // 2
    rank = min(rows, cols) - n_small
    dim_ker, dim_coker = cols - rank, rows - rank
    return dim_ker, dim_coker, dim_ker - dim_coker


def kernel_vector(op, rng=None, solver=None):
    """A unit (weighted) kernel element as a full node field."""
    rng = np.random.default_rng(rng)
    solver = solver or GramSolver(op)
    v = rng.standard_normal(op.domain_dim)
    v = solver.kernel_projector(v)
    v = solver.kernel_projector(v)
    v = v / op.dom_norm(v)
    return op.layout.expand(v)


def kernel_correlation(setup, path, op, rng=None):
    """|cos| between a kernel element of `op` and the shift generator.

    For D0 the reference is d/ds q in the node frames. For Deps at an
    embedded BasePath it is (d/ds q, dchi d/ds q); at an AmbientPath
    (u, tau) it is d/ds (u, tau), the exact kernel of the linearization
    along an eps-trajectory. Inner product: the operator's domain one.
    Meaningful when the kernel is one-dimensional.
    """
    k = kernel_vector(op, rng)
    ds = path.grid.ds
    if op.kind == "D0":
        dq = np.gradient(path.points, ds, axis=0, edge_order=2)
        ref = np.einsum("nij,ni->nj", op.meta["frames"], dq)
        cw = np.ones(ref.shape[1])
    else:
        if hasattr(path, "u"):
            ref = np.gradient(np.column_stack([path.u, path.tau]), ds, axis=0, edge_order=2)
        else:
            dq = np.gradient(path.points, ds, axis=0, edge_order=2)
            geo = path.geometry(setup)
            ref = np.column_stack([dq, np.einsum("ij,ij->i", geo.grad_chi, dq)])
        cw = np.append(np.ones(setup.dim), op.eps**2)
    w = node_weights(len(ref), ds)
    ip = lambda a, b: float(np.sum(w * np.sum(cw * a * b, axis=1)))
    return abs(ip(k, ref)) / np.sqrt(ip(k, k) * ip(ref, ref))


# -- random test fields -------------------------------------------------------------


def random_smooth_field(rng, s, dim, n_bumps=6, width=(0.5, 2.0), margin=2.0,
                        zero_ends=True):
    """Sum of Gaussian bumps centered inside [s0 + margin, s1 - margin]."""
    lo, hi = s[0] + margin, s[-1] - margin
    out = np.zeros((len(s), dim))
    for _ in range(n_bumps):
        c = rng.uniform(lo, hi)
        w = rng.uniform(*width)
        out += np.exp(-0.5 * ((s - c) / w) ** 2)[:, None] * rng.standard_normal(dim)
    if zero_ends:
        out[0] = out[-1] = 0.0
    return out


# -- estimate probes ------------------------------------------------------------------


@dataclass
class ProbeReport:
    inequality_id: str
    eps_values: list = field(default_factory=list)
    max_ratio_per_eps: dict = field(default_factory=dict)
    fields_tested: int = 0

    def add(self, eps, ratios):
        self.eps_values.append(eps)
        for k, v in ratios.items():
            self.max_ratio_per_eps.setdefault(k, []).append(float(v))

    def no_growth(self, factor=1.5):
        """Last-eps ratio is at most `factor` times the median, per line."""
        return {k: bool(v[-1] <= factor * np.median(v)) for k, v in self.max_ratio_per_eps.items()}

    def to_dict(self):
        return {"inequality_id": self.inequality_id, "eps_values": self.eps_values,
                "max_ratio_per_eps": self.max_ratio_per_eps,
                "fields_tested": self.fields_tested, "no_growth": self.no_growth()}


def _split(Z):
    return Z[:, :-1], Z[:, -1]


def _mid_fields(Z, ds):
    """Node field -> (midpoint average, forward difference)."""
    return 0.5 * (Z[1:] + Z[:-1]), np.diff(Z, axis=0) / ds


def _l2(v, w):
    v = v.reshape(len(w), -1)
    return float(np.sqrt(np.sum(w[:, None] * v**2)))


def estimate_probe(setup, path, eps, which, n_random=20, rng=None, alpha=2.0, beta=2.0,
                   constants=None):
    """Empirical ratios LHS/RHS for the linear estimates at one eps.

    which : {"ambient", "key", "difference", "components"}
        ambient     (eps^-1|dH X| + |l| + |X'| + eps|l'|) / (|D Z| + |X|)
        key         three lines for Z* = D* W in the adjoint range:
                    |Z*|_{1,2,eps} / (eps|D Z*| + |pi D Z*|),
                    (eps^1/2 |Z*|_{0,inf,eps} + |Z*|_{1,2,eps}) / |D Z*|,
                    (|dH X*| + eps|l*| + eps|X*'| + eps^2|l*'|) / (eps |D Z*|)
        difference  |(D0)* pi Z - pi (Deps)* Z| / (eps (eps^-1|dH X| + eps^(a-1)|tan X| + eps|l|))
        components  the four bounds on pi and I pi with the constants m_H, mu_inf
    Norms of node fields are (0,2,eps) unless stated; |D Z| is the (0,2,eps)
    norm of the midpoint output. Returns {line: max ratio}.
    """
    rng = np.random.default_rng(rng)
    s = path.grid.s
    ds = path.grid.ds
    m = setup.dim
    wn = node_weights(len(s), ds)
    wm = np.full(len(s) - 1, ds)
    D = assemble_Deps(setup, path, eps)
    u, _ = ambient_state(setup, path)
    geo = point_geometry(setup, u)

    def n02_nodes(X, ell):
        return eps_norm(TangentField(X, ell, ds), eps, "n02")

    def n02_mid(W):
        return float(np.sqrt(np.sum(ds * (np.sum(W[:, :-1] ** 2, axis=1) + eps**2 * W[:, -1] ** 2))))

    ratios = {}

    def upd(k, v):
        ratios[k] = max(ratios.get(k, 0.0), float(v))

    if which == "ambient":
        for _ in range(n_random):
            Z = np.column_stack([random_smooth_field(rng, s, m), random_smooth_field(rng, s, 1)])
            Z = D.layout.expand(D.layout.reduce(Z))
            X, ell = _split(Z)
            dZ = np.diff(Z, axis=0) / ds
            lhs = (_l2(geo.dH(X), wn) / eps + _l2(ell, wn) + _l2(dZ[:, :-1], wm)
                   + eps * _l2(dZ[:, -1], wm))
            rhs = n02_mid(D.apply(Z)) + _l2(X, wn)
            upd("ambient", lhs / rhs)
    elif which == "key":
        for _ in range(n_random):
            W = np.column_stack([random_smooth_field(rng, s[:-1] + ds / 2, m, zero_ends=False),
                                 random_smooth_field(rng, s[:-1] + ds / 2, 1, zero_ends=False)])
            Zs = D.adjoint_apply(W)
            X, ell = _split(Zs)
            DZ = D.apply(Zs)
            fz = TangentField(X, ell, ds)
            n12 = eps_norm(fz, eps, "n12")
            n0inf = eps_norm(fz, eps, "n0inf")
            dnorm = n02_mid(DZ)
            # pi_eps of the midpoint output, evaluated at midpoint geometry
            umid = project_to_sigma(setup, 0.5 * (u[1:] + u[:-1]))
            piDZ = pi_eps(setup, umid, TangentField(DZ[:, :-1], DZ[:, -1], ds), eps, alpha, beta)
            pinorm = _l2(piDZ.X, wm)
            dZ = np.diff(Zs, axis=0) / ds
            upd("key_1", n12 / (eps * dnorm + pinorm))
            upd("key_2", (np.sqrt(eps) * n0inf + n12) / dnorm)
            upd("key_3", (_l2(geo.dH(X), wn) + eps * _l2(ell, wn) + eps * _l2(dZ[:, :-1], wm)
                          + eps**2 * _l2(dZ[:, -1], wm)) / (eps * dnorm))
    elif which in ("difference", "difference_adjoint"):
        D0 = assemble_D0(setup, path)
        Ehat = D0.meta["mid_frames"]
        E = D0.meta["frames"]
        umid = project_to_sigma(setup, 0.5 * (u[1:] + u[:-1]))
        gmid = point_geometry(setup, umid)
        sm = s[:-1] + ds / 2
        for _ in range(n_random):
            if which == "difference":
                # D0 pi Z - pi Deps Z on node fields, compared at midpoints
                Z = np.column_stack([random_smooth_field(rng, s, m),
                                     random_smooth_field(rng, s, 1)])
                Z = D.layout.expand(D.layout.reduce(Z))
                piZ = pi_eps(setup, u, TangentField(Z[:, :-1], Z[:, -1], ds), eps, alpha, beta,
                             geometry=geo)
                xi = np.einsum("nji,nj->ni", E, piZ.X)
                a_ = np.einsum("nij,nj->ni", Ehat, D0.apply(xi))
                DZ = D.apply(Z)
                b_ = pi_eps(setup, umid, TangentField(DZ[:, :-1], DZ[:, -1], ds), eps, alpha,
                            beta, geometry=gmid).X
                diff, wdiff = a_ - b_, wm
                Xz, lz, gz, wz = Z[:, :-1], Z[:, -1], geo, wn
            else:
                # adjoint form: midpoint fields mapped back to nodes
                Z = np.column_stack([random_smooth_field(rng, sm, m, zero_ends=False),
                                     random_smooth_field(rng, sm, 1, zero_ends=False)])
                piZ = pi_eps(setup, umid, TangentField(Z[:, :-1], Z[:, -1], ds), eps, alpha,
                             beta, geometry=gmid)
                eta = np.einsum("nji,nj->ni", Ehat, piZ.X)
                a_ = np.einsum("nij,nj->ni", E, D0.adjoint_apply(eta))
                adj = D.adjoint_apply(Z)
                b_ = pi_eps(setup, u, TangentField(adj[:, :-1], adj[:, -1], ds), eps, alpha,
                            beta, geometry=geo).X
                diff, wdiff = (a_ - b_)[1:-1], wn[1:-1]
                Xz, lz, gz, wz = Z[:, :-1], Z[:, -1], gmid, wm
            rhs = eps * (_l2(gz.dH(Xz), wz) / eps + eps ** (alpha - 1) * _l2(gz.tan(Xz), wz)
                         + eps * _l2(lz, wz))
            upd(which, _l2(diff, wdiff) / rhs)
    elif which == "components":
        c = constants or {}
        m_H = c.get("m_H") or float(np.min(np.linalg.norm(geo.grad_H, axis=1)))
        mu_inf = c.get("mu_inf") or max(1.0, float(np.max(geo.mu)))
        ea = eps**alpha
        gc = geo.grad_chi
        mu2 = np.where(geo.mu > 0, geo.mu**2, np.inf)
        for _ in range(n_random):
            X = random_smooth_field(rng, s, m)
            ell = random_smooth_field(rng, s, 1)[:, 0]
            Z = TangentField(X, ell, ds)
            pZ = pi_eps(setup, u, Z, eps, alpha, beta, geometry=geo)
            IpZ = embed_field(setup, u, pZ, geometry=geo)
            tanX = geo.tan(X)
            PtanX = (np.einsum("ij,ij->i", gc, tanX) / mu2)[:, None] * gc
            ndH, nP, nl = _l2(geo.dH(X), wn), _l2(PtanX, wn), _l2(ell, wn)
            upd("X_minus_pi", _l2(X - pZ.X, wn)
                / (ndH / m_H + ea * mu_inf**2 * nP + eps**2 * mu_inf * nl))
            upd("ell_minus_dchi_pi", _l2(ell - IpZ.ell, wn) / (mu_inf * nP + 2 * nl))
            upd("Z_minus_I_pi", n02_nodes(X - IpZ.X, ell - IpZ.ell)
                / (ndH / m_H + 2 * mu_inf**2 * eps * nP + 4 * mu_inf * eps * nl))
            upd("I_pi_over_Z", n02_nodes(IpZ.X, IpZ.ell) / n02_nodes(X, ell))
    else:
        raise ValueError(f"unknown probe {which!r}")
    return ratios
