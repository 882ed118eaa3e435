"""Compiled inner loops for segment integrals of power kernels."""
import numpy as np
from numba import njit

_PANEL = 2.0  # width of a panel in the sinh-stretched variable


@njit(cache=True)
def _cosh_power_integral(u0, u1, q, gx, gw):
    """int_{u0}^{u1} cosh(u)^q du by panelled Gauss-Legendre."""
    span = u1 - u0
    n = max(1, int(np.ceil(abs(span) / _PANEL)))
    du = span / n
    s = 0.0
    for k in range(n):
        a = u0 + k * du
        for i in range(gx.shape[0]):
            s += gw[i] * np.cosh(a + gx[i] * du) ** q
    return s * du


@njit(cache=True)
def seg_power(px, py, ax, ay, bx, by, mu, gx, gw):
    """int over segment [a, b] of |p - y|^{-mu} ds(y), p off the segment."""
    dx = bx - ax
    dy = by - ay
    L = np.sqrt(dx * dx + dy * dy)
    tx = dx / L
    ty = dy / L
    rx = ax - px
    ry = ay - py
    t0 = rx * tx + ry * ty
    t1 = t0 + L
    h = abs(rx * ty - ry * tx)
    if h <= 1e-14 * L:
        # p on the supporting line, outside the segment
        a0 = abs(t0)
        a1 = abs(t1)
        if a0 > a1:
            a0, a1 = a1, a0
        if abs(mu - 1.0) < 1e-14:
            return np.log(a1 / a0)
        return (a1 ** (1.0 - mu) - a0 ** (1.0 - mu)) / (1.0 - mu)
    u0 = np.arcsinh(t0 / h)
    u1 = np.arcsinh(t1 / h)
    return h ** (1.0 - mu) * _cosh_power_integral(u0, u1, 1.0 - mu, gx, gw)


@njit(cache=True)
def seg_flux(px, py, ax, ay, bx, by, alpha, gx, gw):
    """int over [a, b] of ((y - p).n) |y - p|^{-2-alpha} ds, n the right normal."""
    dx = bx - ax
    dy = by - ay
    L = np.sqrt(dx * dx + dy * dy)
    tx = dx / L
    ty = dy / L
    rx = ax - px
    ry = ay - py
    hn = rx * ty - ry * tx  # (a - p).n with n = (ty, -tx)
    h = abs(hn)
    if h <= 1e-14 * L:
        return 0.0
    t0 = rx * tx + ry * ty
    u0 = np.arcsinh(t0 / h)
    u1 = np.arcsinh((t0 + L) / h)
    return hn * h ** (-1.0 - alpha) * _cosh_power_integral(u0, u1, -1.0 - alpha, gx, gw)


# -- edge pair integrals of |x - y|^beta ------------------------------------
@njit(cache=True)
def _pair_gauss(ax, ay, bx, by, cx, cy, dx, dy, beta, gx, gw):
    L1 = np.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
    L2 = np.sqrt((dx - cx) ** 2 + (dy - cy) ** 2)
    s = 0.0
    for i in range(gx.shape[0]):
        x0 = ax + gx[i] * (bx - ax)
        x1 = ay + gx[i] * (by - ay)
        for j in range(gx.shape[0]):
            y0 = cx + gx[j] * (dx - cx)
            y1 = cy + gx[j] * (dy - cy)
            r2 = (x0 - y0) ** 2 + (x1 - y1) ** 2
            if r2 > 0.0:
                s += gw[i] * gw[j] * r2 ** (0.5 * beta)
    return s * L1 * L2


@njit(cache=True)
def _pair_vertex(ux, uy, vx, vy, beta, gx, gw):
    """int_0^1 int_0^1 |s u - t v|^beta ds dt for segments sharing the origin."""
    s1 = 0.0
    s2 = 0.0
    for k in range(gx.shape[0]):
        w = gx[k]
        s1 += gw[k] * ((ux - w * vx) ** 2 + (uy - w * vy) ** 2) ** (0.5 * beta)
        s2 += gw[k] * ((w * ux - vx) ** 2 + (w * uy - vy) ** 2) ** (0.5 * beta)
    return (s1 + s2) / (beta + 2.0)


@njit(cache=True)
def edge_pair_exact(e0, e1, f0, f1, P, beta, gn, wn, gd, wd):
    """int_e int_f |x - y|^beta for mesh edges given by vertex ids."""
    ax, ay = P[e0, 0], P[e0, 1]
    bx, by = P[e1, 0], P[e1, 1]
    cx, cy = P[f0, 0], P[f0, 1]
    dx, dy = P[f1, 0], P[f1, 1]
    if (e0 == f0 and e1 == f1) or (e0 == f1 and e1 == f0):
        L = np.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
        return 2.0 * L ** (beta + 2.0) / ((beta + 1.0) * (beta + 2.0))
    # shared vertex: place it at the origin of both segments
    if e0 == f0 or e0 == f1 or e1 == f0 or e1 == f1:
        if e0 == f0 or e0 == f1:
            ox, oy, ux, uy = ax, ay, bx - ax, by - ay
        else:
            ox, oy, ux, uy = bx, by, ax - bx, ay - by
        if f0 == e0 or f0 == e1:
            vx, vy = dx - cx, dy - cy
        else:
            vx, vy = cx - dx, cy - dy
        L1 = np.sqrt(ux * ux + uy * uy)
        L2 = np.sqrt(vx * vx + vy * vy)
        # |s u - t v| with s, t in [0, 1] scaled by full edge vectors
        return L1 * L2 * _pair_vertex(ux, uy, vx, vy, beta, gd, wd)
    return _pair_gauss(ax, ay, bx, by, cx, cy, dx, dy, beta, gn, wn)


@njit(cache=True)
def near_corrections(pairs, E, P, beta, gf, wf, gn, wn, gd, wd):
    """exact - far-rule value for each near edge pair."""
    out = np.empty(pairs.shape[0])
    for k in range(pairs.shape[0]):
        e = pairs[k, 0]
        f = pairs[k, 1]
        ex = edge_pair_exact(E[e, 0], E[e, 1], E[f, 0], E[f, 1], P, beta, gn, wn, gd, wd)
        cr = _pair_gauss(P[E[e, 0], 0], P[E[e, 0], 1], P[E[e, 1], 0], P[E[e, 1], 1],
                         P[E[f, 0], 0], P[E[f, 0], 1], P[E[f, 1], 0], P[E[f, 1], 1],
                         beta, gf, wf)
        out[k] = ex - cr
    return out


@njit(cache=True)
def block_r2(X, r0, r1, c0, out):
    """out[i, j] = |X[r0 + i] - X[c0 + j]|^2."""
    for i in range(r1 - r0):
        x0 = X[r0 + i, 0]
        x1 = X[r0 + i, 1]
        for j in range(out.shape[1]):
            d0 = x0 - X[c0 + j, 0]
            d1 = x1 - X[c0 + j, 1]
            out[i, j] = d0 * d0 + d1 * d1


@njit(cache=True)
def block_r2_targets(Y, X, out):
    for i in range(Y.shape[0]):
        y0 = Y[i, 0]
        y1 = Y[i, 1]
        for j in range(X.shape[0]):
            d0 = y0 - X[j, 0]
            d1 = y1 - X[j, 1]
            out[i, j] = d0 * d0 + d1 * d1


@njit(cache=True)
def reduce_rows_cols(W, ng, wr, wc, out):
    """out[a, b] = sum_{g,h} wr[a*ng+g] W[a*ng+g, b*ng+h] wc[b*ng+h]."""
    nr = out.shape[0]
    nc = out.shape[1]
    for a in range(nr):
        for b in range(nc):
            out[a, b] = 0.0
        for g in range(ng):
            i = a * ng + g
            wi = wr[i]
            for b in range(nc):
                s = 0.0
                for h in range(ng):
                    j = b * ng + h
                    s += W[i, j] * wc[j]
                out[a, b] += wi * s


@njit(cache=True)
def target_near(tx, ty, pairs_t, pairs_e, E, P, mu, gx, gw, gf, wf, out):
    """For (target, edge) pairs: exact - far-rule integral of |x-y|^{-mu}."""
    for k in range(pairs_t.shape[0]):
        q = pairs_t[k]
        e = pairs_e[k]
        ax = P[E[e, 0], 0]
        ay = P[E[e, 0], 1]
        bx = P[E[e, 1], 0]
        by = P[E[e, 1], 1]
        ex = seg_power(tx[q], ty[q], ax, ay, bx, by, mu, gx, gw)
        L = np.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
        cr = 0.0
        for g in range(gf.shape[0]):
            d0 = tx[q] - (ax + gf[g] * (bx - ax))
            d1 = ty[q] - (ay + gf[g] * (by - ay))
            cr += wf[g] * (d0 * d0 + d1 * d1) ** (-0.5 * mu)
        out[k] = ex - cr * L


@njit(cache=True)
def split_pointwise(x0, x1, K, vals, P, T, G, alpha, delta, gx, gw):
    """v(x) 2 pi delta^-a / a - int_{Omega minus B_delta(x)} v |x-y|^{-2-a} dy.

    Each element integral is turned into edge integrals with the divergence
    theorem: for affine v = c + g.(y - x),
      int_D r^{-2-a} = -(1/a) oint (y - x).n r^{-2-a},
      int_D g.(y - x) r^{-2-a} = -(1/a) oint g.n r^{-a}.
    """
    total = 0.0
    vx = 0.0
    for k in range(T.shape[0]):
        va = vals[T[k, 0]]
        vb = vals[T[k, 1]]
        vc = vals[T[k, 2]]
        if va == 0.0 and vb == 0.0 and vc == 0.0:
            continue
        g0 = va * G[k, 0, 0] + vb * G[k, 1, 0] + vc * G[k, 2, 0]
        g1 = va * G[k, 0, 1] + vb * G[k, 1, 1] + vc * G[k, 2, 1]
        c = va + g0 * (x0 - P[T[k, 0], 0]) + g1 * (x1 - P[T[k, 0], 1])
        flux = 0.0
        lin = 0.0
        for l in range(3):
            a = T[k, l]
            b = T[k, (l + 1) % 3]
            ax = P[a, 0]
            ay = P[a, 1]
            bx = P[b, 0]
            by = P[b, 1]
            L = np.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
            n0 = (by - ay) / L
            n1 = -(bx - ax) / L
            flux += seg_flux(x0, x1, ax, ay, bx, by, alpha, gx, gw)
            lin += (g0 * n0 + g1 * n1) * seg_power(x0, x1, ax, ay, bx, by, alpha, gx, gw)
        part = -(c * flux + lin) / alpha
        if k == K:
            part += c * 2.0 * np.pi * delta ** (-alpha) / alpha
            vx = c
        total += part
    return vx * 2.0 * np.pi * delta ** (-alpha) / alpha - total


@njit(cache=True)
def polygon_flux(X, S, alpha, gx, gw, out):
    """out[k] = sum over segments S[m] = (ax, ay, bx, by) of seg_flux(X[k])."""
    for k in range(X.shape[0]):
        s = 0.0
        for m in range(S.shape[0]):
            s += seg_flux(X[k, 0], X[k, 1], S[m, 0], S[m, 1], S[m, 2], S[m, 3], alpha, gx, gw)
        out[k] = s


# -- fused far-field loops for exponents that are multiples of 1/4 -----------
# r2^(p/4) built from square roots vectorises; a general power does not. The
# power is passed as a function so every exponent gets its own loop.
_FM = dict(cache=True, fastmath=True, error_model="numpy")


@njit(inline="always", **_FM)
def _q1(r2):
    return np.sqrt(np.sqrt(r2))


@njit(inline="always", **_FM)
def _q2(r2):
    return np.sqrt(r2)


@njit(inline="always", **_FM)
def _q3(r2):
    s = np.sqrt(r2)
    return s * np.sqrt(s)


@njit(inline="always", **_FM)
def _qm1(r2):
    return 1.0 / np.sqrt(np.sqrt(r2))


@njit(inline="always", **_FM)
def _qm2(r2):
    return 1.0 / np.sqrt(r2)


@njit(inline="always", **_FM)
def _qm3(r2):
    s = np.sqrt(r2)
    return 1.0 / (s * np.sqrt(s))


QPOW = {1: _q1, 2: _q2, 3: _q3, -1: _qm1, -2: _qm2, -3: _qm3}


def quarter_power(e):
    """Kernel r2 -> r2^e when 4e is a nonzero integer in [-3, 3], else None."""
    p = round(4.0 * e)
    if abs(4.0 * e - p) < 1e-12 and p in QPOW:
        return QPOW[p]
    return None


@njit(**_FM)
def far_targets_q(T, x0, x1, S, kern, out):
    """out[i, f] = sum_j kern(|T_i - x_j|^2) S[f, j]."""
    nf = S.shape[0]
    n = x0.shape[0]
    for i in range(T.shape[0]):
        t0 = T[i, 0]
        t1 = T[i, 1]
        if nf == 2:
            a0 = 0.0
            a1 = 0.0
            for j in range(n):
                d0 = t0 - x0[j]
                d1 = t1 - x1[j]
                v = kern(d0 * d0 + d1 * d1)
                a0 += v * S[0, j]
                a1 += v * S[1, j]
            out[i, 0] = a0
            out[i, 1] = a1
        else:
            for f in range(nf):
                a = 0.0
                for j in range(n):
                    d0 = t0 - x0[j]
                    d1 = t1 - x1[j]
                    a += kern(d0 * d0 + d1 * d1) * S[f, j]
                out[i, f] = a


@njit(**_FM)
def far_edges_q(x0, x1, w, ng, r0, r1, c0, kern, out):
    """out[a, b] = sum_{g,h} w_i w_j kern(|x_i - x_j|^2), i = r0 + a*ng + g, j = c0 + b*ng + h."""
    nc = x0.shape[0] - c0
    tmp = np.empty(nc)
    for a in range((r1 - r0) // ng):
        for j in range(nc):
            tmp[j] = 0.0
        for g in range(ng):
            i = r0 + a * ng + g
            xi = x0[i]
            yi = x1[i]
            wi = w[i]
            for j in range(nc):
                d0 = xi - x0[c0 + j]
                d1 = yi - x1[c0 + j]
                tmp[j] += wi * kern(d0 * d0 + d1 * d1)
        for b in range(nc // ng):
            s = 0.0
            for h in range(ng):
                s += tmp[b * ng + h] * w[c0 + b * ng + h]
            out[a, b] = s
