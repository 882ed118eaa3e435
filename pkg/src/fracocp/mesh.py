"""Triangulations of the unit disk and the square (-1, 1)^2 with
newest-vertex bisection (NVB).

Elements are stored counter-clockwise with the newest vertex ("peak") in
local slot 0, so the refinement edge of element ``k`` is ``t[k, 1]-t[k, 2]``.
"""
from dataclasses import dataclass
from functools import cached_property
import json

import numpy as np
from scipy.spatial import Delaunay, cKDTree


@dataclass(frozen=True)
class UnitDisk:
    n_boundary: int = 16

    def __post_init__(self):
        if int(self.n_boundary) < 8:
            raise ValueError("UnitDisk needs n_boundary >= 8")


@dataclass(frozen=True)
class Square:
    n_per_side: int = 2

    def __post_init__(self):
        if int(self.n_per_side) < 2:
            raise ValueError("Square needs n_per_side >= 2")


def _orient_ccw(p, t):
    d = p[t[:, 1]] - p[t[:, 0]]
    e = p[t[:, 2]] - p[t[:, 0]]
    neg = d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0] < 0
    t = t.copy()
    t[neg, 1], t[neg, 2] = t[neg, 2], t[neg, 1].copy()
    return t


def _longest_edge_peak(p, t):
    """Rotate each triangle so the vertex opposite its longest edge is first."""
    L = np.stack([np.sum((p[t[:, (i + 2) % 3]] - p[t[:, (i + 1) % 3]]) ** 2, axis=1)
                  for i in range(3)], axis=1)
    k = np.argmax(L, axis=1)
    idx = (k[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(t, idx, axis=1)


class TriMesh:
    """Conforming P1 triangulation with NVB genealogy.

    Attributes
    ----------
    p : (nv, 2) vertex coordinates
    t : (ne, 3) vertex ids, counter-clockwise, peak first
    on_boundary : (nv,) bool
    parent, generation, root : per-element genealogy; ``parent`` indexes the
        previous mesh (-1 on an initial mesh)
    """

    def __init__(self, p, t, on_boundary, domain, parent=None, generation=None, root=None):
        self.p = np.ascontiguousarray(p, dtype=float)
        self.t = np.ascontiguousarray(t, dtype=np.int64)
        self.on_boundary = np.asarray(on_boundary, dtype=bool)
        self.domain = domain
        ne = len(self.t)
        self.parent = np.full(ne, -1, np.int64) if parent is None else np.asarray(parent, np.int64)
        self.generation = np.zeros(ne, np.int64) if generation is None else np.asarray(generation, np.int64)
        self.root = np.arange(ne, dtype=np.int64) if root is None else np.asarray(root, np.int64)
        for a in (self.p, self.t, self.on_boundary, self.parent, self.generation, self.root):
            a.setflags(write=False)
        if np.any(self.areas <= 0):
            raise ValueError("mesh contains non-positive element areas")

    # -- basic geometry -------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.p)

    @property
    def n_elements(self):
        return len(self.t)

    @property
    def peak(self):
        """Local index of the newest vertex; always 0 by storage convention."""
        return np.zeros(self.n_elements, dtype=np.int64)

    @cached_property
    def areas(self):
        a = self.p[self.t[:, 1]] - self.p[self.t[:, 0]]
        b = self.p[self.t[:, 2]] - self.p[self.t[:, 0]]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    @cached_property
    def h(self):
        """Element size h_K = |K|^{1/2}."""
        return np.sqrt(self.areas)

    @cached_property
    def diameters(self):
        return np.sqrt(self.edge_lengths_local.max(axis=1))

    @cached_property
    def edge_lengths_local(self):
        """Squared lengths of the edges opposite local vertices 0, 1, 2."""
        p, t = self.p, self.t
        return np.stack([np.sum((p[t[:, (i + 2) % 3]] - p[t[:, (i + 1) % 3]]) ** 2, axis=1)
                         for i in range(3)], axis=1)

    @cached_property
    def centroids(self):
        return self.p[self.t].mean(axis=1)

    @cached_property
    def grad_lambda(self):
        """(ne, 3, 2) gradients of the barycentric coordinates."""
        P = self.p[self.t]
        B = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.einsum("ij,kjl->kil", ref, np.linalg.inv(B))

    # -- topology -------------------------------------------------------
    @cached_property
    def _edge_data(self):
        t = self.t
        loc = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        key = np.sort(loc, axis=1)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        te = inv.reshape(3, -1).T.copy()
        ne = len(t)
        owner = np.tile(np.arange(ne), 3)
        e2t = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inv, kind="stable")
        inv_s = inv[order]
        first = np.r_[True, inv_s[1:] != inv_s[:-1]]
        e2t[inv_s[first], 0] = owner[order][first]
        sec = ~first
        if np.any(np.bincount(inv, minlength=len(edges)) > 2):
            raise ValueError("non-manifold edge")
        e2t[inv_s[sec], 1] = owner[order][sec]
        return edges, te, e2t

    @property
    def edges(self):
        """(n_edges, 2) sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def t2e(self):
        """(ne, 3) edge opposite each local vertex; column 0 is the refinement edge."""
        return self._edge_data[1]

    @property
    def e2t(self):
        """(n_edges, 2) adjacent elements, second entry -1 on the boundary."""
        return self._edge_data[2]

    @cached_property
    def boundary_edges(self):
        return np.flatnonzero(self.e2t[:, 1] < 0)

    @cached_property
    def boundary_vertices(self):
        return np.flatnonzero(self.on_boundary)

    @cached_property
    def interior_vertices(self):
        return np.flatnonzero(~self.on_boundary)

    @property
    def n_dofs(self):
        return len(self.interior_vertices)

    @cached_property
    def dof_of_vertex(self):
        """Map vertex id -> dof index (-1 for boundary vertices)."""
        m = np.full(self.n_vertices, -1, dtype=np.int64)
        m[self.interior_vertices] = np.arange(self.n_dofs)
        return m

    @cached_property
    def vertex_to_elements(self):
        """CSR-style (indptr, elements) incidence of vertices in elements."""
        v = self.t.ravel()
        order = np.argsort(v, kind="stable")
        indptr = np.r_[0, np.cumsum(np.bincount(v, minlength=self.n_vertices))]
        return indptr, order // 3

    # -- refinement -----------------------------------------------------
    def refine(self, marked):
        return bisect_marked(self, marked)

    def to_json(self):
        return {
            "vertices": self.p.tolist(),
            "elements": self.t.tolist(),
            "boundary": self.boundary_vertices.tolist(),
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def _disk_points(n_boundary):
    rings = max(1, int(round(n_boundary / (2.0 * np.pi))))
    pts = [np.zeros((1, 2))]
    for j in range(1, rings + 1):
        r = j / rings
        n = n_boundary if j == rings else max(6, int(round(n_boundary * r)))
        th = 2.0 * np.pi * np.arange(n) / n + (0.5 * np.pi / n if j % 2 == 0 and j != rings else 0.0)
        pts.append(np.column_stack([r * np.cos(th), r * np.sin(th)]))
    return np.vstack(pts)


def make_initial_mesh(domain):
    """Initial conforming mesh; peaks opposite the longest edge."""
    if isinstance(domain, UnitDisk):
        p = _disk_points(int(domain.n_boundary))
        t = Delaunay(p).simplices.astype(np.int64)
        on_b = np.abs(np.hypot(p[:, 0], p[:, 1]) - 1.0) < 1e-12
        p[on_b] /= np.hypot(p[on_b, 0], p[on_b, 1])[:, None]
    elif isinstance(domain, Square):
        n = int(domain.n_per_side)
        g = np.linspace(-1.0, 1.0, n + 1)
        X, Y = np.meshgrid(g, g)
        p = np.column_stack([X.ravel(), Y.ravel()])
        t = []
        for j in range(n):
            for i in range(n):
                a = j * (n + 1) + i
                b, c, d = a + 1, a + n + 2, a + n + 1
                t += [[a, b, c], [a, c, d]]
        t = np.array(t, dtype=np.int64)
        on_b = (np.abs(p[:, 0]) == 1.0) | (np.abs(p[:, 1]) == 1.0)
    else:
        raise TypeError("unknown domain %r" % (domain,))
    t = _longest_edge_peak(p, _orient_ccw(p, t))
    return TriMesh(p, t, on_b, domain)


def _closure(mesh, marked_edges):
    te = mesh.t2e
    while True:
        need = marked_edges[te].any(axis=1) & ~marked_edges[te[:, 0]]
        if not need.any():
            return marked_edges
        marked_edges[te[need, 0]] = True


def bisect_marked(mesh, marked, all_edges=False):
    """Bisect marked elements with NVB and restore conformity.

    With ``all_edges=True`` every edge is split, which bisects each element
    twice (one uniform sweep).
    """
    marked = np.unique(np.asarray(list(marked) if isinstance(marked, (set, frozenset)) else marked,
                                  dtype=np.int64))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_elements):
        raise IndexError("marked element id out of range")
    edges = mesh.edges
    me = np.zeros(len(edges), dtype=bool)
    if all_edges:
        me[:] = True
    else:
        if marked.size == 0:
            return mesh
        me[mesh.t2e[marked, 0]] = True
        me = _closure(mesh, me)

    # new vertices at marked edge midpoints
    ids = np.flatnonzero(me)
    mid = 0.5 * (mesh.p[edges[ids, 0]] + mesh.p[edges[ids, 1]])
    mid_b = mesh.e2t[ids, 1] < 0
    if isinstance(mesh.domain, UnitDisk) and mid_b.any():
        mid[mid_b] /= np.hypot(mid[mid_b, 0], mid[mid_b, 1])[:, None]
    newv = np.full(len(edges), -1, dtype=np.int64)
    newv[ids] = mesh.n_vertices + np.arange(len(ids))
    p = np.vstack([mesh.p, mid])
    on_b = np.r_[mesh.on_boundary, mid_b]

    # edge lookup for children uses a dict keyed by sorted vertex pair
    ekey = {(int(a), int(b)): i for i, (a, b) in enumerate(edges[ids])}
    ekey = {k: newv[ids[v]] for k, v in ekey.items()}

    def split(a, b):
        return ekey.get((a, b) if a < b else (b, a), -1)

    # parent ids refer to the previous mesh; depth is the number of
    # bisections separating a child from that parent (0, 1 or 2)
    T, par, depth = [], [], []
    t = mesh.t
    for k in range(mesh.n_elements):
        P, Q, R = (int(v) for v in t[k])
        m = split(Q, R)
        if m < 0:
            T.append((P, Q, R))
            par.append(k)
            depth.append(0)
            continue
        for c0, c1, c2 in ((m, P, Q), (m, R, P)):
            m2 = split(c1, c2)
            if m2 < 0:
                T.append((c0, c1, c2))
                par.append(k)
                depth.append(1)
            else:
                T += [(m2, c0, c1), (m2, c2, c0)]
                par += [k, k]
                depth += [2, 2]
    par = np.array(par, dtype=np.int64)
    depth = np.array(depth, dtype=np.int64)
    new = TriMesh(p, np.array(T, dtype=np.int64), on_b, mesh.domain, parent=par,
                  generation=mesh.generation[par] + depth, root=mesh.root[par])
    new.refine_depth = depth
    new.previous = mesh
    return new


def uniform_refine(mesh):
    """Bisect every element twice (all edges split)."""
    return bisect_marked(mesh, np.arange(mesh.n_elements), all_edges=True)


# -- queries ------------------------------------------------------------
def element_size(mesh, K):
    return float(mesh.h[K])


def _point_segment_dist(x, a, b):
    d = b - a
    s = np.clip(np.dot(x - a, d) / np.dot(d, d), 0.0, 1.0)
    return float(np.linalg.norm(x - (a + s * d)))


def barycentric(mesh, K, x):
    G = mesh.grad_lambda[K]
    x0 = mesh.p[mesh.t[K, 0]]
    l12 = G[1:] @ (np.asarray(x, float) - x0)
    return np.r_[1.0 - l12.sum(), l12]


def skeleton_distance(mesh, K, x, tol=1e-12):
    """dist(x, dK) for x in K (the distance to the mesh skeleton)."""
    x = np.asarray(x, dtype=float)
    if barycentric(mesh, K, x).min() < -tol:
        raise ValueError("point is outside element %d" % K)
    P = mesh.p[mesh.t[K]]
    return min(_point_segment_dist(x, P[i], P[(i + 1) % 3]) for i in range(3))


def skeleton_distance_batch(mesh, elems, pts):
    """Vectorised dist(x_q, dK_q) for points inside their elements."""
    P = mesh.p[mesh.t[elems]]
    out = np.full(len(pts), np.inf)
    for i in range(3):
        a = P[:, i]
        d = P[:, (i + 1) % 3] - a
        s = np.clip(np.einsum("ij,ij->i", pts - a, d) / np.einsum("ij,ij->i", d, d), 0, 1)
        out = np.minimum(out, np.linalg.norm(pts - a - s[:, None] * d, axis=1))
    return out


def element_patch(mesh, K, k):
    """k-th order patch: k=0 is {K}; each step adds vertex-touching elements."""
    if k < 0:
        raise ValueError("patch order must be >= 0")
    indptr, v2e = mesh.vertex_to_elements
    patch = {int(K)}
    for _ in range(k):
        verts = np.unique(mesh.t[list(patch)])
        add = np.concatenate([v2e[indptr[v]:indptr[v + 1]] for v in verts])
        patch |= set(add.tolist())
    return patch


def locate(mesh, x, tol=1e-12):
    """Lowest-id element whose closed triangle contains x."""
    x = np.asarray(x, dtype=float)
    tree = getattr(mesh, "_ctree", None)
    if tree is None:
        tree = cKDTree(mesh.centroids)
        mesh._ctree = tree
    k = min(mesh.n_elements, 16)
    while True:
        _, cand = tree.query(x, k=k)
        cand = np.sort(np.atleast_1d(cand))
        for K in cand:
            if barycentric(mesh, K, x).min() >= -tol:
                return int(K)
        if k >= mesh.n_elements:
            raise ValueError("point %s lies outside the mesh" % (x,))
        k = min(mesh.n_elements, 4 * k)


def min_angle(mesh):
    P = mesh.p[mesh.t]
    ang = []
    for i in range(3):
        u = P[:, (i + 1) % 3] - P[:, i]
        v = P[:, (i + 2) % 3] - P[:, i]
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        ang.append(np.arccos(np.clip(c, -1, 1)))
    return float(np.min(ang))


# -- audits -------------------------------------------------------------
def conformity_audit(mesh):
    """True when every edge is shared by one (boundary) or two elements and
    no vertex lies in the interior of another element's edge."""
    loc = np.sort(np.concatenate([mesh.t[:, [1, 2]], mesh.t[:, [2, 0]], mesh.t[:, [0, 1]]]), axis=1)
    _, counts = np.unique(loc, axis=0, return_counts=True)
    if counts.max() > 2:
        return False
    edges = mesh.edges
    once = edges[counts == 1]
    # edges used once must lie on the domain boundary
    if not np.all(mesh.on_boundary[once].all(axis=1)):
        return False
    # no hanging node: no vertex strictly inside an edge
    mids = 0.5 * (mesh.p[edges[:, 0]] + mesh.p[edges[:, 1]])
    tree = cKDTree(mesh.p)
    hits = tree.query_ball_point(mids, r=1e-12)
    return not any(len(h) for h in hits)


def similarity_classes(mesh, ndigits=9):
    """Number of distinct sorted angle triples per root element."""
    P = mesh.p[mesh.t]
    ang = []
    for i in range(3):
        u = P[:, (i + 1) % 3] - P[:, i]
        v = P[:, (i + 2) % 3] - P[:, i]
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        ang.append(np.arccos(np.clip(c, -1, 1)))
    key = np.round(np.sort(np.stack(ang, axis=1), axis=1), ndigits)
    out = {}
    for r, k in zip(mesh.root, map(tuple, key)):
        out.setdefault(int(r), set()).add(k)
    return {r: len(s) for r, s in out.items()}
