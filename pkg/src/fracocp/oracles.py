"""Independent reference computations used by the test suite and ``selftest``.

None of these routines share code with the production assembly or
evaluation paths. They are slow and meant for a handful of entries.

* stiffness entries: a(phi_i, phi_j) = C int_{R^2} |z|^{-2-a} (M - c(z)) dz,
  where c(z) = int phi_i(x) phi_j(x + z) dx is computed exactly by polygon
  clipping and the polar integral is split at the kinks of c along each ray;
* exterior weight of the square: polar integral of R(theta)^{-a} / a split at
  the corner directions;
* pointwise fractional Laplacian of a P1 function: ray casting with the
  radial integrals done in closed form on each linear piece;
* dense solves: Gaussian elimination with partial pivoting.
"""
import numba as nb
import numpy as np
from scipy.special import gamma, roots_jacobi

_GL_CACHE = {}


def _gl(n):
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def c_norm(alpha):
    return 2.0 ** alpha * gamma(0.5 * alpha + 1.0) / (np.pi * abs(gamma(-0.5 * alpha)))


def _ccw(P):
    P = np.array(P, dtype=float)
    a = (P[1, 0] - P[0, 0]) * (P[2, 1] - P[0, 1]) - (P[1, 1] - P[0, 1]) * (P[2, 0] - P[0, 0])
    return P if a > 0 else P[[0, 2, 1]]


def _affine(P, vals):
    """(gx, gy, c) with g.x + c interpolating ``vals`` at the corners of P."""
    M = np.column_stack([P, np.ones(3)])
    return np.linalg.solve(M, np.asarray(vals, dtype=float))


def _hat_pieces(mesh, vertex):
    """Support triangles (CCW) of the hat at ``vertex`` and its affine pieces."""
    tris, coef = [], []
    for K in np.nonzero(np.any(mesh.t == vertex, axis=1))[0]:
        ids = mesh.t[K]
        P = mesh.p[ids]
        vals = (ids == vertex).astype(float)
        a = (P[1, 0] - P[0, 0]) * (P[2, 1] - P[0, 1]) - (P[1, 1] - P[0, 1]) * (P[2, 0] - P[0, 0])
        if a < 0:
            P, vals = P[[0, 2, 1]], vals[[0, 2, 1]]
        tris.append(P)
        coef.append(_affine(P, vals))
    return np.array(tris), np.array(coef)


# -- exact overlap integrals --------------------------------------------------
@nb.njit(cache=True)
def _clip_integral(T, f, S, g, zx, zy):
    """int over T and (S - z) of (f.x) * (g.(x + z)); T, S CCW triangles."""
    px = np.empty(12)
    py = np.empty(12)
    qx = np.empty(12)
    qy = np.empty(12)
    n = 3
    for k in range(3):
        px[k] = T[k, 0]
        py[k] = T[k, 1]
    for e in range(3):
        ax = S[e, 0] - zx
        ay = S[e, 1] - zy
        bx = S[(e + 1) % 3, 0] - zx
        by = S[(e + 1) % 3, 1] - zy
        m = 0
        for k in range(n):
            cx, cy = px[k], py[k]
            dx, dy = px[(k + 1) % n], py[(k + 1) % n]
            sc = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            sd = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
            if sc >= 0.0:
                qx[m] = cx
                qy[m] = cy
                m += 1
            if (sc >= 0.0) != (sd >= 0.0):
                s = sc / (sc - sd)
                qx[m] = cx + s * (dx - cx)
                qy[m] = cy + s * (dy - cy)
                m += 1
        n = m
        if n < 3:
            return 0.0
        for k in range(n):
            px[k] = qx[k]
            py[k] = qy[k]
    total = 0.0
    for k in range(1, n - 1):
        x0, y0 = px[0], py[0]
        x1, y1 = px[k], py[k]
        x2, y2 = px[k + 1], py[k + 1]
        area = 0.5 * ((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0))
        acc = 0.0
        # edge midpoint rule, exact for quadratics
        for (mx, my) in ((0.5 * (x0 + x1), 0.5 * (y0 + y1)), (0.5 * (x1 + x2), 0.5 * (y1 + y2)),
                         (0.5 * (x2 + x0), 0.5 * (y2 + y0))):
            fv = f[0] * mx + f[1] * my + f[2]
            gv = g[0] * (mx + zx) + g[1] * (my + zy) + g[2]
            acc += fv * gv
        total += area * acc / 3.0
    return total


@nb.njit(cache=True)
def _autocorr(TA, FA, TB, FB, Z, out):
    for m in range(Z.shape[0]):
        s = 0.0
        for a in range(TA.shape[0]):
            for b in range(TB.shape[0]):
                s += _clip_integral(TA[a], FA[a], TB[b], FB[b], Z[m, 0], Z[m, 1])
        out[m] = s


def _edge_lines(tris):
    """Normals n and offsets c of all edge lines n.x = c."""
    A = tris.reshape(-1, 2)
    B = np.roll(tris, -1, axis=1).reshape(-1, 2)
    n = np.column_stack([B[:, 1] - A[:, 1], A[:, 0] - B[:, 0]])
    return n, np.sum(n * A, axis=1)


def _edge_segments(tris):
    """Start points and direction vectors of all triangle edges."""
    A = tris.reshape(-1, 2)
    return A, np.roll(tris, -1, axis=1).reshape(-1, 2) - A


def _on_segment(Q, start, d, tol=1e-10):
    """Whether Q[k, m] (on the line of edge m) lies within that edge."""
    s = np.sum((Q - start[None]) * d[None], axis=2) / np.sum(d * d, axis=1)[None]
    return (s >= -tol) & (s <= 1 + tol)


def _unique_angles(ang, tol=1e-11):
    ang = np.sort(np.mod(ang, np.pi))
    keep = np.r_[True, np.diff(ang) > tol]
    ang = ang[keep]
    if len(ang) and ang[-1] > np.pi - tol:
        ang = ang[:-1]
    return ang


def _panels(breaks, rmax):
    """Split (0, rmax] at ``breaks`` and geometrically inside wide pieces.

    Breaks below 1e-8 rmax are round-off images of zero; keeping them would
    create tiny panels where 2M - c(re) - c(-re) cancels catastrophically.
    """
    b = np.unique(np.r_[breaks[(breaks > 1e-8 * rmax) & (breaks < rmax)], rmax])
    b = b[np.r_[True, np.diff(b) > 1e-12 * rmax]]
    first = b[0]
    out = []
    lo = first
    for hi in b[1:]:
        a = lo
        while hi > 2.0 * a:
            out.append((a, 2.0 * a))
            a *= 2.0
        out.append((a, hi))
        lo = hi
    return first, np.array(out).reshape(-1, 2)


def stiffness_entry_oracle(mesh, i, j, alpha, n_theta=12, n_r=10):
    """a(phi_i, phi_j) for interior dofs i, j of ``mesh`` (independent route)."""
    vi, vj = mesh.interior_vertices[i], mesh.interior_vertices[j]
    TA, FA = _hat_pieces(mesh, vi)
    TB, FB = _hat_pieces(mesh, vj)
    VA, VB = TA.reshape(-1, 2), TB.reshape(-1, 2)
    nA, cA = _edge_lines(TA)
    nB, cB = _edge_lines(TB)
    sA, dA = _edge_segments(TA)
    sB, dB = _edge_segments(TB)
    rmax = np.max(np.linalg.norm(VB[:, None, :] - VA[None, :, :], axis=2)) * (1 + 1e-12)
    M = np.empty(1)
    _autocorr(TA, FA, TB, FB, np.zeros((1, 2)), M)
    M = M[0]
    # directions where the structure of c along a ray changes
    D = (VB[:, None, :] - VA[None, :, :]).reshape(-1, 2)
    D = D[np.linalg.norm(D, axis=1) > 1e-12]
    edges = np.vstack([nA[:, [1, 0]] * [-1, 1], nB[:, [1, 0]] * [-1, 1]])
    crit = _unique_angles(np.r_[np.arctan2(D[:, 1], D[:, 0]), np.arctan2(edges[:, 1], edges[:, 0])])
    crit = np.r_[crit, crit[0] + np.pi] if len(crit) else np.array([0.0, np.pi])
    tg, tw = _gl(n_theta)
    rg, rw = _gl(n_r)
    xj, wj = roots_jacobi(4, 0.0, 1.0 - alpha)
    xj, wj = 0.5 * (xj + 1.0), wj / 2.0 ** (2.0 - alpha)
    total = 0.0
    for t0, t1 in zip(crit[:-1], crit[1:]):
        for th, wt in zip(t0 + (t1 - t0) * tg, (t1 - t0) * tw):
            e = np.array([np.cos(th), np.sin(th)])
            with np.errstate(divide="ignore", invalid="ignore"):
                # vertex of B - r e on an edge of A, vertex of A + r e on an edge of B;
                # crossings of the edge lines outside the segments are no kinks
                r1 = (VB @ nA.T - cA[None, :]) / (nA @ e)[None, :]
                r2 = (cB[None, :] - VA @ nB.T) / (nB @ e)[None, :]
                ok1 = _on_segment(VB[:, None, :] - r1[:, :, None] * e, sA, dA)
                ok2 = _on_segment(VA[:, None, :] + r2[:, :, None] * e, sB, dB)
            br = np.abs(np.r_[r1[ok1], r2[ok2]])
            br = br[np.isfinite(br)]
            first, pan = _panels(br, rmax)
            # first piece: 2M - c(re) - c(-re) = r^2 q(r) with q polynomial
            r0 = first * xj
            rs = np.r_[r0, (pan[:, :1] + (pan[:, 1:] - pan[:, :1]) * rg[None, :]).ravel()]
            Z = np.vstack([rs[:, None] * e, -rs[:, None] * e])
            cv = np.empty(len(Z))
            _autocorr(TA, FA, TB, FB, Z, cv)
            P = 2.0 * M - cv[: len(rs)] - cv[len(rs):]
            val = first ** (2.0 - alpha) * np.sum(wj * P[:4] / r0 ** 2)
            rr = rs[4:].reshape(len(pan), n_r)
            ww = (pan[:, 1:] - pan[:, :1]) * rw[None, :]
            val += np.sum(ww * rr ** (-1.0 - alpha) * P[4:].reshape(rr.shape))
            val += 2.0 * M * rmax ** -alpha / alpha
            total += wt * val
    return c_norm(alpha) * total


# -- exterior weight ------------------------------------------------------------
def square_rho_oracle(x, alpha, n=40):
    """int over the complement of (-1,1)^2 of |x - y|^{-2-alpha} dy."""
    x = np.asarray(x, dtype=float)
    corners = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float)
    ang = np.sort(np.mod(np.arctan2(corners[:, 1] - x[1], corners[:, 0] - x[0]), 2 * np.pi))
    ang = np.r_[ang, ang[0] + 2 * np.pi]
    g, w = _gl(n)
    total = 0.0
    for a0, a1 in zip(ang[:-1], ang[1:]):
        th = a0 + (a1 - a0) * g
        c, s = np.cos(th), np.sin(th)
        with np.errstate(divide="ignore"):
            tx = np.where(c > 0, (1 - x[0]) / c, np.where(c < 0, (-1 - x[0]) / c, np.inf))
            ty = np.where(s > 0, (1 - x[1]) / s, np.where(s < 0, (-1 - x[1]) / s, np.inf))
        R = np.minimum(tx, ty)
        total += (a1 - a0) * np.sum(w * R ** -alpha)
    return total / alpha


# -- pointwise fractional Laplacian --------------------------------------------
def _radial(c0, c1, a, b, alpha):
    """int_a^b r^{-1-alpha} (c0 + c1 r) dr."""
    out = c0 * (a ** -alpha - b ** -alpha) / alpha
    if abs(alpha - 1.0) < 1e-14:
        return out + c1 * np.log(b / a)
    return out + c1 * (b ** (1.0 - alpha) - a ** (1.0 - alpha)) / (1.0 - alpha)


def _p1_values(tris, coef, Y):
    """Values of a P1 function given by its support pieces; zero elsewhere."""
    out = np.zeros(len(Y))
    found = np.zeros(len(Y), dtype=bool)
    for P, c in zip(tris, coef):
        d = (P[1, 0] - P[0, 0]) * (P[2, 1] - P[0, 1]) - (P[1, 1] - P[0, 1]) * (P[2, 0] - P[0, 0])
        l1 = ((P[2, 1] - P[0, 1]) * (Y[:, 0] - P[0, 0]) - (P[2, 0] - P[0, 0]) * (Y[:, 1] - P[0, 1])) / d
        l2 = ((P[1, 0] - P[0, 0]) * (Y[:, 1] - P[0, 1]) - (P[1, 1] - P[0, 1]) * (Y[:, 0] - P[0, 0])) / d
        inside = (l1 >= -1e-13) & (l2 >= -1e-13) & (l1 + l2 <= 1 + 1e-13) & ~found
        out[inside] = Y[inside] @ c[:2] + c[2]
        found |= inside
    return out


def hat_fraclap_oracle(mesh, vertex, x, alpha, n_theta=16):
    """(-Delta)^{alpha/2} of the hat at ``vertex`` evaluated at x (not on an edge)."""
    x = np.asarray(x, dtype=float)
    tris, coef = _hat_pieces(mesh, vertex)
    V = tris.reshape(-1, 2)
    n, c = _edge_lines(tris)
    rmax = np.max(np.linalg.norm(V - x, axis=1)) * (1 + 1e-12)
    vx = _p1_values(tris, coef, x[None])[0]
    D = V - x
    crit = _unique_angles(np.arctan2(D[:, 1], D[:, 0]))
    crit = np.r_[crit, crit[0] + np.pi]
    tg, tw = _gl(n_theta)
    total = 0.0
    for t0, t1 in zip(crit[:-1], crit[1:]):
        for th, wt in zip(t0 + (t1 - t0) * tg, (t1 - t0) * tw):
            e = np.array([np.cos(th), np.sin(th)])
            with np.errstate(divide="ignore", invalid="ignore"):
                br = np.abs((c - n @ x) / (n @ e))
            br = np.unique(br[np.isfinite(br) & (br > 1e-13) & (br < rmax)])
            b = np.r_[0.0, br, rmax]
            # drop round-off duplicates among the breakpoints
            b = b[np.r_[True, np.diff(b) > 1e-12 * rmax]]
            lo, hi = b[:-1], b[1:]
            # 2 v(x) - v(x + r e) - v(x - r e) is linear on each piece
            s1 = lo + 0.25 * (hi - lo)
            s2 = lo + 0.75 * (hi - lo)
            Y = np.vstack([x + s1[:, None] * e, x - s1[:, None] * e, x + s2[:, None] * e,
                           x - s2[:, None] * e])
            v = _p1_values(tris, coef, Y).reshape(4, -1)
            g1 = 2 * vx - v[0] - v[1]
            g2 = 2 * vx - v[2] - v[3]
            c1 = (g2 - g1) / (s2 - s1)
            c0 = g1 - c1 * s1
            val = 0.0
            for k in range(len(lo)):
                if lo[k] == 0.0:
                    # affine near x: the symmetric difference vanishes there
                    if abs(c0[k]) + abs(c1[k]) * hi[k] > 1e-12:
                        raise ValueError("x lies on an element edge")
                    continue
                val += _radial(c0[k], c1[k], lo[k], hi[k], alpha)
            val += 2 * vx * rmax ** -alpha / alpha
            total += wt * val
    return c_norm(alpha) * total


# -- dense solve ----------------------------------------------------------------
def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting (plain loops)."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if A[piv, k] == 0.0:
            raise ZeroDivisionError("singular matrix")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        for r in range(k + 1, n):
            m = A[r, k] / A[k, k]
            A[r, k:] -= m * A[k, k:]
            b[r] -= m * b[k]
    x = np.zeros(n)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - A[k, k + 1:] @ x[k + 1:]) / A[k, k]
    return x
