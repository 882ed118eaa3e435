"""Assembly of the integral fractional Laplacian bilinear form on P1 spaces.

Two assembly routes are provided.

``method="edges"`` (default) uses that the distributional Laplacian of a P1
function is a sum of line measures on the mesh edges, weighted by the jumps
of the normal derivative. In Fourier variables |xi|^alpha = |xi|^{alpha-4}
|xi|^4, so

    a(u, v) = c_R * sum_{e, f} J_e(u) J_f(v) int_e int_f |x - y|^{2 - alpha},

with c_R the (negative) Riesz constant of order 4 - alpha. The kernel is
continuous, the exterior term needs no separate treatment, and the double
sum is evaluated with a near/far split.

``method="pairs"`` follows the textbook element-pair route: the double
integral over Omega x Omega with Duffy-type transforms for touching pairs,
plus the exterior weight rho. It is slow and is kept as a reference.
"""
from dataclasses import dataclass
import struct

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.special import gamma

from . import _kernels as kr
from .mesh import Square, TriMesh, UnitDisk
from .quadrature import gauss_jacobi01, gauss_legendre01, map_rule, triangle_rule


class QuadratureError(RuntimeError):
    pass


def normalization_constant(d, alpha):
    """C(d, alpha) = 2^a Gamma(a/2 + d/2) / (pi^{d/2} |Gamma(-a/2)|)."""
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    return 2.0 ** alpha * gamma(0.5 * alpha + 0.5 * d) / (np.pi ** (0.5 * d) * abs(gamma(-0.5 * alpha)))


def riesz_constant(beta, d=2):
    """Constant c with F^{-1}[|xi|^{-beta}] = c |x|^{beta - d} (analytically continued)."""
    return gamma(0.5 * (d - beta)) / (2.0 ** beta * np.pi ** (0.5 * d) * gamma(0.5 * beta))


@dataclass(frozen=True)
class FracKernelParams:
    alpha: float
    d: int = 2

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")

    @property
    def c_norm(self):
        return normalization_constant(self.d, self.alpha)


@dataclass(frozen=True)
class QuadratureConfig:
    """Quadrature knobs.

    The first four fields drive the element-pair route; the ``edge_*`` fields
    drive the edge route and the pointwise evaluation of the operator.
    """
    far_order: int = 7
    duffy_order: int = 8
    grading_levels: int = 3
    rho_grading: int = 4
    edge_far_points: int = 5
    edge_near_points: int = 12
    edge_vertex_points: int = 16
    near_factor: float = 2.0
    seg_points: int = 10
    eval_far_points: int = 3
    eval_near_factor: float = 2.0
    block_edges: int = 64

    def __post_init__(self):
        for k in ("far_order", "duffy_order", "grading_levels", "rho_grading", "edge_far_points",
                  "edge_near_points", "edge_vertex_points", "seg_points", "eval_far_points",
                  "block_edges"):
            if int(getattr(self, k)) < 1:
                raise ValueError("%s must be >= 1" % k)
        if self.near_factor <= 0 or self.eval_near_factor <= 0:
            raise ValueError("near factors must be positive")

    def doubled(self):
        """Configuration with all orders doubled (for self-convergence checks)."""
        kw = {k: 2 * getattr(self, k) for k in ("far_order", "duffy_order", "edge_far_points",
                                                  "edge_near_points", "edge_vertex_points",
                                                  "seg_points", "eval_far_points")}
        kw["grading_levels"] = self.grading_levels + 1
        kw["rho_grading"] = self.rho_grading + 1
        kw["near_factor"] = 2 * self.near_factor
        kw["eval_near_factor"] = 2 * self.eval_near_factor
        kw["block_edges"] = self.block_edges
        return QuadratureConfig(**kw)


class SpdOperator:
    """Dense symmetric positive definite matrix with a cached Cholesky factor."""

    def __init__(self, entries):
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("operator must be square")
        self.entries = entries
        self._chol = None

    @property
    def n(self):
        return self.entries.shape[0]

    def asymmetry(self):
        A = self.entries
        if A.size == 0:
            return 0.0
        return float(np.max(np.abs(A - A.T)) / np.max(np.abs(A)))

    def factor(self):
        if self._chol is None:
            try:
                self._chol = sla.cho_factor(self.entries, lower=False, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError("Cholesky breakdown: operator is not SPD") from exc
        return self._chol

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        return sla.cho_solve(self.factor(), b, check_finite=False)

    def __matmul__(self, x):
        return self.entries @ x

    def dump(self, path):
        """Binary dump: n as little-endian u64, then row-major little-endian f64."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", self.n))
            fh.write(np.ascontiguousarray(self.entries, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (n,) = struct.unpack("<Q", fh.read(8))
            data = np.frombuffer(fh.read(8 * n * n), dtype="<f8")
        return cls(data.reshape(n, n).copy())


# -- edge representation ----------------------------------------------------
def jump_matrix(mesh):
    """Sparse (n_edges, n_dofs) matrix of normal-derivative jumps of the hats.

    J[e, i] = sum over elements K adjacent to e of grad(phi_i)|_K . n_K,
    with n_K the outward normal of K on e (exterior gradient is zero).
    """
    G = mesh.grad_lambda
    te = mesh.t2e
    rows, cols, vals = [], [], []
    for l in range(3):
        nrm = -G[:, l] / np.linalg.norm(G[:, l], axis=1)[:, None]
        for m in range(3):
            rows.append(te[:, l])
            cols.append(mesh.dof_of_vertex[mesh.t[:, m]])
            vals.append(np.einsum("ij,ij->i", G[:, m], nrm))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = cols >= 0
    J = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(mesh.edges), mesh.n_dofs))
    J = J.tocsr()
    J.sum_duplicates()
    return J


def _morton_order(xy):
    lo = xy.min(axis=0)
    span = max(float(np.ptp(xy, axis=0).max()), 1e-300)
    q = np.clip(((xy - lo) / span * 65535).astype(np.int64), 0, 65535)
    code = np.zeros(len(xy), dtype=np.int64)
    for b in range(16):
        code |= ((q[:, 0] >> b) & 1) << (2 * b)
        code |= ((q[:, 1] >> b) & 1) << (2 * b + 1)
    return np.argsort(code, kind="stable")


def _near_pairs(centers_a, radius_a, centers_b, radius_b, same=False):
    """Index pairs (i, j) with |a_i - b_j| < max(radius_a[i], radius_b[j])."""
    ta = cKDTree(centers_a)
    tb = ta if same else cKDTree(centers_b)
    out = []
    hits = tb.query_ball_point(centers_a, r=radius_a, return_sorted=False)
    lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    out.append(np.column_stack([np.repeat(np.arange(len(centers_a)), lens),
                                np.fromiter((j for h in hits for j in h), dtype=np.int64,
                                            count=int(lens.sum()))]))
    hits = ta.query_ball_point(centers_b, r=radius_b, return_sorted=False)
    lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    out.append(np.column_stack([np.fromiter((j for h in hits for j in h), dtype=np.int64,
                                            count=int(lens.sum())),
                                np.repeat(np.arange(len(centers_b)), lens)]))
    pairs = np.vstack(out)
    nb = len(centers_b)
    key = np.unique(pairs[:, 0] * nb + pairs[:, 1])
    return np.column_stack([key // nb, key % nb])


class EdgeData:
    """Edge quantities shared by assembly and pointwise evaluation."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.E = np.ascontiguousarray(mesh.edges)
        a = mesh.p[self.E[:, 0]]
        b = mesh.p[self.E[:, 1]]
        self.mid = 0.5 * (a + b)
        self.length = np.linalg.norm(b - a, axis=1)
        self.J = jump_matrix(mesh)

    def points(self, ng):
        gx, gw = gauss_legendre01(ng)
        a = self.mesh.p[self.E[:, 0]]
        b = self.mesh.p[self.E[:, 1]]
        X = (a[:, None, :] + gx[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)
        w = (gw[None, :] * self.length[:, None]).ravel()
        return X, w


def assemble_stiffness(mesh, params, quad=None, method="edges", max_dofs=12000):
    """Dense stiffness matrix A_ij = a(phi_i, phi_j) over the interior hats."""
    if isinstance(params, (int, float)):
        params = FracKernelParams(float(params))
    quad = quad or QuadratureConfig()
    if mesh.n_dofs > max_dofs:
        raise MemoryError("dof count %d exceeds cap %d" % (mesh.n_dofs, max_dofs))
    if method == "edges":
        A = _assemble_edges(mesh, params.alpha, quad)
    elif method == "pairs":
        A = _assemble_pairs(mesh, params.alpha, quad)
    else:
        raise ValueError("unknown assembly method %r" % (method,))
    if not np.all(np.isfinite(A)):
        raise QuadratureError("non-finite stiffness entries")
    return SpdOperator(A)


def _assemble_edges(mesh, alpha, quad):
    beta = 2.0 - alpha
    ed = EdgeData(mesh)
    order = _morton_order(ed.mid)
    E = ed.E[order]
    J = ed.J[order]
    L = ed.length[order]
    mid = ed.mid[order]
    nE, n = J.shape
    ng = int(quad.edge_far_points)
    gx, gw = gauss_legendre01(ng)
    a = mesh.p[E[:, 0]]
    b = mesh.p[E[:, 1]]
    X = np.ascontiguousarray((a[:, None, :] + gx[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2))
    wq = np.ascontiguousarray((gw[None, :] * L[:, None]).ravel())

    Ahalf = np.zeros((n, n))
    ce = int(quad.block_edges)
    S = nE * ng
    kern = kr.quarter_power(0.5 * beta)
    if kern is None:
        buf = np.empty(ce * ng * S)
    else:
        x0, x1 = X[:, 0].copy(), X[:, 1].copy()
    Jc_all = J.tocsr()
    for e0 in range(0, nE, ce):
        e1 = min(e0 + ce, nE)
        Wee = np.empty((e1 - e0, nE - e0))
        if kern is None:
            R = buf[: (e1 - e0) * ng * (S - e0 * ng)].reshape((e1 - e0) * ng, S - e0 * ng)
            kr.block_r2(X, e0 * ng, e1 * ng, e0 * ng, R)
            np.power(R, 0.5 * beta, out=R)
            kr.reduce_rows_cols(R, ng, wq[e0 * ng:e1 * ng], wq[e0 * ng:], Wee)
        else:
            kr.far_edges_q(x0, x1, wq, ng, e0 * ng, e1 * ng, e0 * ng, kern, Wee)
        Wee[:, : e1 - e0] *= 0.5
        T = (Jc_all[e0:].T @ Wee.T).T  # (rows, n)
        Jc = Jc_all[e0:e1]
        D = np.unique(Jc.indices)
        if D.size:
            Ahalf[D] += Jc[:, D].toarray().T @ T
    A = Ahalf
    A += Ahalf.T

    # near pairs: exact minus far-rule values
    pairs = _near_pairs(mid, quad.near_factor * L, mid, quad.near_factor * L, same=True)
    pairs = pairs[pairs[:, 0] <= pairs[:, 1]]
    gn, wn = gauss_legendre01(int(quad.edge_near_points))
    gd, wd = gauss_legendre01(int(quad.edge_vertex_points))
    corr = kr.near_corrections(np.ascontiguousarray(pairs), np.ascontiguousarray(E), mesh.p,
                               beta, gx, gw, gn, wn, gd, wd)
    off = pairs[:, 0] != pairs[:, 1]
    C = sp.coo_matrix((np.r_[corr, corr[off]],
                       (np.r_[pairs[:, 0], pairs[off, 1]], np.r_[pairs[:, 1], pairs[off, 0]])),
                      shape=(nE, nE)).tocsr()
    N = (J.T @ C @ J).tocoo()
    N.sum_duplicates()
    A[N.row, N.col] += N.data
    A *= riesz_constant(4.0 - alpha)
    return A


# -- load vectors -----------------------------------------------------------
def assemble_load(mesh, g, quad_order=4):
    """b_i = int g phi_i dx with a per-element triangle rule of the given order."""
    lam, w = triangle_rule(int(quad_order))
    X = map_rule(mesh.p[mesh.t], lam)  # (ne, q, 2)
    gv = np.asarray(g(X.reshape(-1, 2)), dtype=float)
    gv = np.broadcast_to(gv, (X.shape[0] * X.shape[1],)).reshape(X.shape[:2])
    if not np.all(np.isfinite(gv)):
        bad = np.argwhere(~np.isfinite(gv))[0]
        raise ValueError("non-finite integrand in element %d" % bad[0])
    loc = mesh.areas[:, None] * ((gv * w[None, :]) @ lam)  # (ne, 3)
    b = np.bincount(mesh.t.ravel(), weights=loc.ravel(), minlength=mesh.n_vertices)
    return b[mesh.interior_vertices]


# -- exterior weight --------------------------------------------------------
def _boundary_segments(mesh):
    """Boundary edges oriented counter-clockwise, as rows (ax, ay, bx, by)."""
    segs = []
    for l in range(3):
        a = mesh.t[:, (l + 1) % 3]
        b = mesh.t[:, (l + 2) % 3]
        onb = mesh.e2t[mesh.t2e[:, l], 1] < 0
        segs.append(np.column_stack([mesh.p[a[onb]], mesh.p[b[onb]]]))
    return np.ascontiguousarray(np.vstack(segs))


def _square_segments():
    c = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    return np.ascontiguousarray(np.column_stack([c, np.roll(c, -1, axis=0)]))


def complement_weight(domain, x, params, quad=None):
    """rho(x) = int over the complement of the domain of |x - y|^{-2-alpha} dy.

    ``domain`` is a :class:`UnitDisk`, a :class:`Square` or a :class:`TriMesh`
    (then the complement of the mesh polygon is used). ``x`` may be one
    point or an (n, 2) array.
    """
    alpha = params if isinstance(params, (int, float)) else params.alpha
    quad = quad or QuadratureConfig()
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(domain, UnitDisk):
        r = np.linalg.norm(X, axis=1)
        if np.any(r >= 1.0):
            raise ValueError("point is not inside the unit disk")
        out = np.empty(len(X))
        for k, (xk, rk) in enumerate(zip(X, r)):
            # periodic analytic integrand: the trapezoid rule converges geometrically
            n = int(min(200000, 64 + 400.0 / (1.0 - rk)))
            th = 2.0 * np.pi * np.arange(n) / n
            d = np.column_stack([np.cos(th), np.sin(th)])
            xd = d @ xk
            R = -xd + np.sqrt(xd * xd + 1.0 - rk * rk)
            out[k] = 2.0 * np.pi / n * np.sum(R ** -alpha) / alpha
    else:
        if isinstance(domain, Square):
            if np.any(np.abs(X) >= 1.0):
                raise ValueError("point is not inside the square")
            S = _square_segments()
        elif isinstance(domain, TriMesh):
            S = _boundary_segments(domain)
        else:
            raise TypeError("unsupported domain %r" % (domain,))
        gx, gw = gauss_legendre01(int(quad.seg_points))
        out = np.empty(len(X))
        kr.polygon_flux(np.ascontiguousarray(X), S, alpha, gx, gw, out)
        out /= alpha
        if isinstance(domain, TriMesh) and np.any(out <= 0):
            raise ValueError("point is not inside the mesh")
    if not np.all(np.isfinite(out)):
        raise QuadratureError("non-finite exterior weight")
    return float(out[0]) if np.ndim(x) == 1 else out


# -- element pair route -----------------------------------------------------
# reference triangle {0 <= x2 <= x1 <= 1}, vertices (0,0), (1,0), (1,1);
# barycentric coordinates (1 - x1, x1 - x2, x2)
_REF_GRAD = np.array([[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]])


def _ss_regions(kind, n, alpha=0.0):
    """Duffy-type maps for touching pairs with xi already integrated out.

    Returns (X, Y, w): reference points divided by xi and weights over the
    remaining variables, for the singular point at the reference origin.
    After xi is factored out, |x - y|^{-alpha} still carries eta1^{-alpha}
    (and eta2^{-alpha} for identical pairs); Gauss-Jacobi rules absorb these.
    """
    g, gw = gauss_legendre01(n)
    j1, jw1 = gauss_jacobi01(n, 2.0 - alpha)
    if kind == "identical":
        j2, jw2 = gauss_jacobi01(n, 1.0 - alpha)
        e1, e2, e3 = [a.ravel() for a in np.meshgrid(j1, j2, g, indexing="ij")]
        w = np.einsum("i,j,k->ijk", jw1, jw2, gw).ravel() * (e1 * e2) ** alpha
    elif kind == "edge":
        e1, e2, e3 = [a.ravel() for a in np.meshgrid(j1, g, g, indexing="ij")]
        w = np.einsum("i,j,k->ijk", jw1, gw, gw).ravel() * e1 ** alpha
    elif kind == "vertex":
        e1, e2, e3 = [a.ravel() for a in np.meshgrid(g, g, g, indexing="ij")]
        w = np.einsum("i,j,k->ijk", gw, gw, gw).ravel()
    else:
        raise ValueError(kind)
    one = np.ones_like(e1)
    regions = []
    if kind == "identical":
        a = [(np.c_[one, 1 - e1 + e1 * e2], np.c_[1 - e1 * e2 * e3, 1 - e1]),
             (np.c_[one, e1 - e1 * e2 + e1 * e2 * e3], np.c_[1 - e1 * e2, e1 - e1 * e2]),
             (np.c_[1 - e1 * e2 * e3, e1 - e1 * e2 * e3], np.c_[one, e1 - e1 * e2])]
        for X, Y in a:
            regions += [(X, Y, w), (Y, X, w)]
    elif kind == "edge":
        regions.append((np.c_[one, e1 * e3], np.c_[1 - e1 * e2, e1 * (1 - e2)], w))
        w2 = w * e2
        regions.append((np.c_[one, e1], np.c_[1 - e1 * e2 * e3, e1 * e2 * (1 - e3)], w2))
        regions.append((np.c_[1 - e1 * e2, e1 * (1 - e2)], np.c_[one, e1 * e2 * e3], w2))
        regions.append((np.c_[1 - e1 * e2 * e3, e1 * e2 * (1 - e3)], np.c_[one, e1], w2))
        regions.append((np.c_[1 - e1 * e2 * e3, e1 * (1 - e2 * e3)], np.c_[one, e1 * e2], w2))
    else:
        X, Y = np.c_[one, e1], np.c_[e2, e2 * e3]
        regions += [(X, Y, w * e2), (Y, X, w * e2)]
    X = np.vstack([r[0] for r in regions])
    Y = np.vstack([r[1] for r in regions])
    w = np.concatenate([r[2] for r in regions])
    return X, Y, w


def _classify(tk, tl):
    shared = [v for v in tk if v in tl]
    return {3: "identical", 2: "edge", 1: "vertex", 0: "disjoint"}[len(shared)], shared


def _ref_order(tri, shared):
    """Vertex order with the shared vertices first (in the given order)."""
    return list(shared) + [v for v in tri if v not in shared]


def pair_integral(mesh, K, L, alpha, quad=None, relationship=None):
    """Double integral over K x L of (phi_a(x) - phi_a(y))(phi_b(x) - phi_b(y)) |x-y|^{-2-a}.

    Returns (verts, M) with ``verts`` the union of the vertex ids of K and L
    and M[a, b] the integral for the hats of verts[a] and verts[b].
    """
    quad = quad or QuadratureConfig()
    tk, tl = [int(v) for v in mesh.t[K]], [int(v) for v in mesh.t[L]]
    kind, shared = _classify(tk, tl)
    if relationship is not None and relationship != kind:
        raise ValueError("pair (%d, %d) is %s, not %s" % (K, L, kind, relationship))
    if kind == "identical":
        ok, ol = tk, tk
    elif kind == "edge":
        ok, ol = _ref_order(tk, shared), _ref_order(tl, shared)
    elif kind == "vertex":
        ok, ol = _ref_order(tk, shared), _ref_order(tl, shared)
    else:
        ok, ol = tk, tl
    verts = ok + [v for v in ol if v not in ok]
    m = len(verts)
    if kind == "disjoint":
        M = _disjoint_block(mesh.p[ok], mesh.p[ol], alpha, quad, int(quad.grading_levels))
        full = np.zeros((m, m))
        # local order of M is (ok, ol) as 6 separate functions
        idx = [verts.index(v) for v in ok + ol]
        for a in range(6):
            for b in range(6):
                full[idx[a], idx[b]] += M[a, b]
        M = full
    else:
        M = _touching_block(mesh.p[ok], mesh.p[ol], ok, ol, verts, alpha, kind, quad)
    if not np.all(np.isfinite(M)):
        raise QuadratureError("non-finite pair integral for elements (%d, %d)" % (K, L))
    return verts, M


def _ref_affine(P):
    return P[0], np.column_stack([P[1] - P[0], P[2] - P[1]])


def _touching_block(Pk, Pl, ok, ol, verts, alpha, kind, quad):
    X, Y, w = _ss_regions(kind, int(quad.duffy_order), alpha)
    _, Bk = _ref_affine(Pk)
    _, Bl = _ref_affine(Pl)
    R = X @ Bk.T - Y @ Bl.T
    ker = np.sum(R * R, axis=1) ** (-1.0 - 0.5 * alpha)
    # differences of hats divided by xi: g_K . X - g_L . Y in reference gradients
    D = np.zeros((len(verts), len(w)))
    for a, v in enumerate(verts):
        if v in ok:
            D[a] += X @ _REF_GRAD[ok.index(v)]
        if v in ol:
            D[a] -= Y @ _REF_GRAD[ol.index(v)]
    jac = abs(np.linalg.det(Bk)) * abs(np.linalg.det(Bl))
    return jac / (4.0 - alpha) * (D * (w * ker)) @ D.T


def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _subdivide(P):
    m01, m12, m20 = 0.5 * (P[0] + P[1]), 0.5 * (P[1] + P[2]), 0.5 * (P[2] + P[0])
    return [np.array([P[0], m01, m20]), np.array([m01, P[1], m12]),
            np.array([m20, m12, P[2]]), np.array([m01, m12, m20])]


def _tri_dist(P, Q):
    from .mesh import _point_segment_dist
    d = min(_point_segment_dist(p, Q[i], Q[(i + 1) % 3]) for p in P for i in range(3))
    return min(d, min(_point_segment_dist(q, P[i], P[(i + 1) % 3]) for q in Q for i in range(3)))


def _bary_matrix(P, X):
    """Barycentric coordinates of the points X (n, 2) in triangle P."""
    T = np.column_stack([P[1] - P[0], P[2] - P[0]])
    l12 = np.linalg.solve(T, (X - P[0]).T).T
    return np.column_stack([1.0 - l12.sum(axis=1), l12])


def _disjoint_block(Pk, Pl, alpha, quad, levels, Pk0=None, Pl0=None):
    """6x6 block over the functions (lambda^K_0..2, lambda^L_0..2) for disjoint K, L.

    Sub-triangle pairs closer than their diameter are subdivided up to
    ``levels`` times.
    """
    Pk0 = Pk if Pk0 is None else Pk0
    Pl0 = Pl if Pl0 is None else Pl0
    diam = max(np.ptp(Pk, axis=0).max(), np.ptp(Pl, axis=0).max())
    if levels > 0 and _tri_dist(Pk, Pl) < diam:
        out = np.zeros((6, 6))
        for a in _subdivide(Pk):
            for b in _subdivide(Pl):
                out += _disjoint_block(a, b, alpha, quad, levels - 1, Pk0, Pl0)
        return out
    lam, w = triangle_rule(int(quad.far_order))
    X = lam @ Pk
    Y = lam @ Pl
    ak = 0.5 * abs(_cross2(Pk[1] - Pk[0], Pk[2] - Pk[0]))
    al = 0.5 * abs(_cross2(Pl[1] - Pl[0], Pl[2] - Pl[0]))
    R = X[:, None, :] - Y[None, :, :]
    ker = np.sum(R * R, axis=2) ** (-1.0 - 0.5 * alpha) * (ak * w)[:, None] * (al * w)[None, :]
    lx = _bary_matrix(Pk0, X)  # K functions at x, zero at y (and vice versa)
    ly = _bary_matrix(Pl0, Y)
    nq = len(w)
    Dx = np.zeros((6, nq, 1))
    Dy = np.zeros((6, 1, nq))
    Dx[:3, :, 0] = lx.T
    Dy[3:, 0, :] = -ly.T
    D = Dx + Dy  # (6, nq, nq): phi(x) - phi(y)
    return np.einsum("aij,bij,ij->ab", D, D, ker)


def _rho_mass(mesh, alpha, quad):
    """Entries of int phi_i phi_j rho_h over the mesh, with grading toward the boundary."""
    lam, w = triangle_rule(int(quad.far_order))
    gx, gw = gauss_legendre01(int(quad.seg_points))
    S = _boundary_segments(mesh)
    n = mesh.n_vertices
    M = np.zeros((n, n))
    for K in range(mesh.n_elements):
        P = mesh.p[mesh.t[K]]
        pieces = [P]
        if mesh.on_boundary[mesh.t[K]].any():
            onb = mesh.on_boundary[mesh.t[K]]
            for _ in range(int(quad.rho_grading)):
                nxt = []
                for Q in pieces:
                    lq = _bary_matrix(P, Q)
                    # a sub-triangle touches the boundary if one of its vertices does
                    touch = np.any(np.abs(lq[:, ~onb].sum(axis=1)) < 1e-13) if (~onb).any() else True
                    nxt.extend(_subdivide(Q) if touch else [Q])
                pieces = nxt
        X = np.vstack([lam @ Q for Q in pieces])
        W = np.concatenate([w * 0.5 * abs(_cross2(Q[1] - Q[0], Q[2] - Q[0])) for Q in pieces])
        rho = np.empty(len(X))
        kr.polygon_flux(np.ascontiguousarray(X), S, alpha, gx, gw, rho)
        rho /= alpha
        L = _bary_matrix(P, X)
        idx = mesh.t[K]
        M[np.ix_(idx, idx)] += (L * (W * rho)[:, None]).T @ L
    return M


def _assemble_pairs(mesh, alpha, quad):
    """Reference element-pair assembly (slow, for small meshes)."""
    if mesh.n_elements > 600:
        raise MemoryError("the pair route is meant for small meshes")
    n = mesh.n_vertices
    A = np.zeros((n, n))
    ne = mesh.n_elements
    for K in range(ne):
        for L in range(K, ne):
            verts, M = pair_integral(mesh, K, L, alpha, quad)
            f = 1.0 if K == L else 2.0  # (K, L) and (L, K) give the same block
            A[np.ix_(verts, verts)] += f * M
    c = normalization_constant(2, alpha)
    A = 0.5 * c * A + c * _rho_mass(mesh, alpha, quad)
    iv = mesh.interior_vertices
    return A[np.ix_(iv, iv)]
