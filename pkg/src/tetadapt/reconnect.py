"""Speculative local reconnection: 2-3, 3-2, 4-4 volume flips and 2-2 surface flips.

Every flip is expressed as a replacement of an old set of tetrahedra by a new
one over the same vertices and judged by :func:`_evaluate`:

* Delaunay criterion (five-metric circumsphere test): apply when the old
  configuration has a violating interior face and the new one has none;
* edge-weight criterion: apply when the largest edge-weight quantity drops
  by more than a relative 1e-12 and the new configuration is still free of
  Delaunay violations (so the two criteria can never undo each other).

The 4-4 flip uses only the edge-weight criterion.  The 2-2 flip uses a
metric in-circle test on the two boundary triangles plus a flatness guard.
"""
import math
import time

import numpy as np

from . import topo
from ._jit import njit
from .metric import _k_delaunay_alphas, _k_edge_weight, _k_exp, _k_inner, _k_mean_ratio, _k_quad
from .parallel import make_pools, next_bucket, run_workers
from .predicates import orient3d, solid_tet
from .stats import PassStats
from .topo import EDGES, FACES, claim_vertex, edge_shell, release_all

ATTEMPTED, APPLIED, ROLLED_BACK, REJECTED, N23, N32, N44, N22 = range(8)
NSTAT = 8

CRIT_DELAUNAY = 1
CRIT_EDGE_WEIGHT = 2
CRIT_BOTH = 3

DELAUNAY_MARGIN = 1e-9
IMPROVE_TOL = 1e-12
FLATNESS_TOL = 1e-3
RESWEEPS = 3

_CRITERIA = {"delaunay": CRIT_DELAUNAY, "edge-weight": CRIT_EDGE_WEIGHT, "both": CRIT_BOTH}


# ----------------------------------------------------------------- criteria


@njit
def _inside(M, p, k0, k1, k2, k3, margin):
    """Strict five-metric circumsphere violation of point ``p`` against (k0..k3)."""
    ap, tot = _k_delaunay_alphas(M.xyz[p], M.met[p], M.xyz[k0], M.xyz[k1], M.xyz[k2], M.xyz[k3],
                                 M.met[k0], M.met[k1], M.met[k2], M.met[k3])
    if ap < 0.0:
        return False
    return ap < 1.0 - margin and tot < 5.0 - margin


@njit
def _config_violates(M, T, n, margin):
    """True if any face shared by two tetrahedra of ``T[:n]`` fails the Delaunay test."""
    for i in range(n):
        for j in range(i + 1, n):
            common = 0
            for a in range(4):
                for b in range(4):
                    if T[i, a] == T[j, b]:
                        common += 1
            if common != 3:
                continue
            pi = -1
            pj = -1
            for a in range(4):
                if T[i, a] != T[j, 0] and T[i, a] != T[j, 1] and T[i, a] != T[j, 2] and T[i, a] != T[j, 3]:
                    pi = T[i, a]
                if T[j, a] != T[i, 0] and T[j, a] != T[i, 1] and T[j, a] != T[i, 2] and T[j, a] != T[i, 3]:
                    pj = T[j, a]
            if _inside(M, pj, T[i, 0], T[i, 1], T[i, 2], T[i, 3], margin):
                return True
            if _inside(M, pi, T[j, 0], T[j, 1], T[j, 2], T[j, 3], margin):
                return True
    return False


@njit
def _all_positive(M, T, n):
    for k in range(n):
        if not solid_tet(M.xyz[T[k, 0]], M.xyz[T[k, 1]], M.xyz[T[k, 2]], M.xyz[T[k, 3]]):
            return False
    return True


@njit
def _config_metric(M, T, n, out):
    """Metric at the centroid of the configuration's vertex set (log-Euclidean mean)."""
    seen = np.empty(4 * n, dtype=np.int64)
    ns = 0
    lm = np.zeros(6)
    for k in range(n):
        for a in range(4):
            v = T[k, a]
            if not topo.contains(seen, ns, v):
                seen[ns] = v
                ns += 1
                for c in range(6):
                    lm[c] += M.logm[v, c]
    for c in range(6):
        lm[c] /= ns
    return _k_exp(lm, out)


@njit
def _max_q(M, T, n, m):
    worst = -np.inf
    for k in range(n):
        q = _k_edge_weight(M.xyz[T[k, 0]], M.xyz[T[k, 1]], M.xyz[T[k, 2]], M.xyz[T[k, 3]], m)
        if q > worst:
            worst = q
    return worst


@njit
def _evaluate(M, old, nold, new, nnew, crit, margin):
    """0 reject, 1 accepted by the Delaunay criterion, 2 by the edge-weight criterion."""
    if not _all_positive(M, new, nnew):
        return 0
    if crit & CRIT_DELAUNAY:
        if _config_violates(M, old, nold, margin) and not _config_violates(M, new, nnew, margin):
            return 1
    if crit & CRIT_EDGE_WEIGHT:
        m = np.empty(6)
        if not _config_metric(M, old, nold, m):
            return 0
        qo = _max_q(M, old, nold, m)
        qn = _max_q(M, new, nnew, m)
        if np.isfinite(qo) and qn < qo - IMPROVE_TOL * abs(qo):
            if not _config_violates(M, new, nnew, margin):
                return 2
    return 0


@njit
def _ring_tets(a, b, tri, ntri, out):
    """Ring rule: triangle (i, j, k) of the edge ring gives (i, j, k, b) and (i, k, j, a)."""
    for r in range(ntri):
        i = tri[r, 0]
        j = tri[r, 1]
        k = tri[r, 2]
        out[2 * r, 0] = i
        out[2 * r, 1] = j
        out[2 * r, 2] = k
        out[2 * r, 3] = b
        out[2 * r + 1, 0] = i
        out[2 * r + 1, 1] = k
        out[2 * r + 1, 2] = j
        out[2 * r + 1, 3] = a
    return 2 * ntri


# ------------------------------------------------------------- operations


@njit
def _commit(M, old_ids, nold, new, nnew, ref, tpool, tpool_n, wid, stats):
    """1 on success, -1 when the slot pool is short (retry later), 0 when refused."""
    if nnew - nold > tpool_n[wid]:
        return -1
    refs = np.full(nnew, ref, dtype=np.int64)
    if topo.replace_cavity(M, old_ids, nold, new, refs, nnew, tpool, tpool_n, wid):
        return 1
    # e.g. a new boundary face whose marker is ambiguous; retrying cannot help
    stats[wid, REJECTED] += 1
    return 0


@njit
def op_flip23(M, t, j, crit, margin, wid, held, nheld, tpool, tpool_n, stats):
    """2-3 flip of face ``j`` of ``t``; returns 1 applied, 0 rejected, -1 contention."""
    n = M.adj[t, j]
    if n < 0 or M.tref[n] != M.tref[t]:
        return 0
    loc = -1
    for l in range(4):
        if M.adj[n, l] == t:
            loc = l
    if loc < 0:
        return 0
    e = M.tets[n, loc]
    if not claim_vertex(M.claim, e, wid, held, nheld):
        return -1
    d = M.tets[t, j]
    a = M.tets[t, FACES[j, 0]]
    b = M.tets[t, FACES[j, 1]]
    c = M.tets[t, FACES[j, 2]]
    old = np.empty((2, 4), dtype=np.int64)
    for k in range(4):
        old[0, k] = M.tets[t, k]
        old[1, k] = M.tets[n, k]
    new = np.empty((3, 4), dtype=np.int64)
    new[0, 0] = a
    new[0, 1] = b
    new[0, 2] = d
    new[0, 3] = e
    new[1, 0] = b
    new[1, 1] = c
    new[1, 2] = d
    new[1, 3] = e
    new[2, 0] = c
    new[2, 1] = a
    new[2, 2] = d
    new[2, 3] = e
    stats[wid, ATTEMPTED] += 1
    if _evaluate(M, old, 2, new, 3, crit, margin) == 0:
        stats[wid, REJECTED] += 1
        return 0
    ids = np.empty(2, dtype=np.int64)
    ids[0] = t
    ids[1] = n
    r = _commit(M, ids, 2, new, 3, M.tref[t], tpool, tpool_n, wid, stats)
    if r <= 0:
        return r
    stats[wid, APPLIED] += 1
    stats[wid, N23] += 1
    return 1


@njit
def _tri_normal(M, p, q, r):
    a = M.xyz[p]
    b = M.xyz[q]
    c = M.xyz[r]
    ux = b[0] - a[0]
    uy = b[1] - a[1]
    uz = b[2] - a[2]
    vx = c[0] - a[0]
    vy = c[1] - a[1]
    vz = c[2] - a[2]
    n = np.empty(3)
    n[0] = uy * vz - uz * vy
    n[1] = uz * vx - ux * vz
    n[2] = ux * vy - uy * vx
    return n


@njit
def _angle(n1, n2):
    d = n1[0] * n2[0] + n1[1] * n2[1] + n1[2] * n2[2]
    l = math.sqrt((n1[0] ** 2 + n1[1] ** 2 + n1[2] ** 2) * (n2[0] ** 2 + n2[1] ** 2 + n2[2] ** 2))
    if l == 0.0:
        return math.pi
    return math.acos(max(-1.0, min(1.0, d / l)))


@njit
def _boundary_face_normal(M, T, n, x, y, z):
    """Outward normal of face {x, y, z} of the first tetrahedron in ``T`` holding it."""
    for k in range(n):
        for j in range(4):
            f0 = T[k, FACES[j, 0]]
            f1 = T[k, FACES[j, 1]]
            f2 = T[k, FACES[j, 2]]
            if topo.face_key(f0, f1, f2) == topo.face_key(x, y, z):
                return _tri_normal(M, f0, f1, f2), True
    return np.zeros(3), False


@njit
def _in_circle(M, p, x, y, z, m, margin):
    """Point ``p`` strictly inside the metric circumcircle of triangle xyz."""
    X = M.xyz[x]
    ux = M.xyz[y, 0] - X[0]
    uy = M.xyz[y, 1] - X[1]
    uz = M.xyz[y, 2] - X[2]
    vx = M.xyz[z, 0] - X[0]
    vy = M.xyz[z, 1] - X[1]
    vz = M.xyz[z, 2] - X[2]
    uu = _k_inner(m, ux, uy, uz, ux, uy, uz)
    uv = _k_inner(m, ux, uy, uz, vx, vy, vz)
    vv = _k_inner(m, vx, vy, vz, vx, vy, vz)
    det = uu * vv - uv * uv
    if not det > 1e-14 * uu * vv:
        return False
    s = 0.5 * (uu * vv - vv * uv) / det
    t = 0.5 * (vv * uu - uu * uv) / det
    ox = s * ux + t * vx
    oy = s * uy + t * vy
    oz = s * uz + t * vz
    r2 = _k_quad(m, ox, oy, oz)
    d2 = _k_quad(m, M.xyz[p, 0] - X[0] - ox, M.xyz[p, 1] - X[1] - oy, M.xyz[p, 2] - X[2] - oz)
    return d2 < r2 * (1.0 - margin)


@njit
def _edge_exists(M, d, e, ball):
    n = topo.vertex_ball(M, d, ball)
    if n < 0:
        return True
    for i in range(n):
        if topo.tet_has(M, ball[i], e):
            return True
    return False


@njit
def _min_quality(M, T, n):
    q = 1.0
    for k in range(n):
        v = _k_mean_ratio(M.xyz[T[k, 0]], M.xyz[T[k, 1]], M.xyz[T[k, 2]], M.xyz[T[k, 3]],
                          M.logm[T[k, 0]], M.logm[T[k, 1]], M.logm[T[k, 2]], M.logm[T[k, 3]])
        if v < q:
            q = v
    return q


@njit
def op_edge(M, t, a, b, mask, crit, margin, wid, held, nheld, tpool, tpool_n, stats):
    """Edge flips on edge ``ab`` of ``t``: 3-2 / 4-4 (interior) or 2-2 (surface).

    ``mask`` bits: 1 allows 3-2, 2 allows 4-4, 4 allows 2-2.
    Returns 1 applied, 0 rejected or not a candidate, -1 contention.
    """
    shell = np.empty(topo.MAX_SHELL, dtype=np.int64)
    ring = np.empty(topo.MAX_SHELL + 1, dtype=np.int64)
    cnt, is_open, mf, ml = edge_shell(M, a, b, t, shell, ring)
    if cnt < 0:
        return 0
    if not is_open:
        if not ((cnt == 3 and (mask & 1)) or (cnt == 4 and (mask & 2))):
            return 0
    else:
        if not ((cnt == 2 or cnt == 3) and (mask & 4) and mf == ml):
            return 0
    nring = cnt + 1 if is_open else cnt
    for i in range(nring):
        if not claim_vertex(M.claim, ring[i], wid, held, nheld):
            return -1
    ref = M.tref[shell[0]]
    for i in range(cnt):
        if M.tref[shell[i]] != ref:
            return 0
    old = np.empty((cnt, 4), dtype=np.int64)
    for i in range(cnt):
        for k in range(4):
            old[i, k] = M.tets[shell[i], k]
    tri = np.empty((2, 3), dtype=np.int64)
    new = np.empty((4, 4), dtype=np.int64)
    stats[wid, ATTEMPTED] += 1

    if not is_open and cnt == 3:
        tri[0, 0] = ring[0]
        tri[0, 1] = ring[1]
        tri[0, 2] = ring[2]
        nn = _ring_tets(a, b, tri, 1, new)
        if _evaluate(M, old, 3, new, nn, crit, margin) == 0:
            stats[wid, REJECTED] += 1
            return 0
        r = _commit(M, shell, 3, new, nn, ref, tpool, tpool_n, wid, stats)
        if r <= 0:
            return r
        stats[wid, APPLIED] += 1
        stats[wid, N32] += 1
        return 1

    if not is_open:
        # 4-4: two alternative diagonals of the ring quadrilateral
        m = np.empty(6)
        if not _config_metric(M, old, 4, m):
            stats[wid, REJECTED] += 1
            return 0
        qo = _max_q(M, old, 4, m)
        best = np.inf
        best_new = np.empty((4, 4), dtype=np.int64)
        for diag in range(2):
            i0 = diag
            tri[0, 0] = ring[i0]
            tri[0, 1] = ring[i0 + 1]
            tri[0, 2] = ring[(i0 + 2) % 4]
            tri[1, 0] = ring[i0]
            tri[1, 1] = ring[(i0 + 2) % 4]
            tri[1, 2] = ring[(i0 + 3) % 4]
            nn = _ring_tets(a, b, tri, 2, new)
            if not _all_positive(M, new, nn):
                continue
            qn = _max_q(M, new, nn, m)
            if qn < best and not _config_violates(M, new, nn, margin):
                best = qn
                best_new[:, :] = new
        if not (np.isfinite(qo) and best < qo - IMPROVE_TOL * abs(qo)):
            stats[wid, REJECTED] += 1
            return 0
        r = _commit(M, shell, 4, best_new, 4, ref, tpool, tpool_n, wid, stats)
        if r <= 0:
            return r
        stats[wid, APPLIED] += 1
        stats[wid, N44] += 1
        return 1

    # 2-2 surface flip of boundary edge ab; open ring d, ..., e
    d = ring[0]
    e = ring[cnt]
    m = np.empty(6)
    if not _config_metric(M, old, cnt, m):
        stats[wid, REJECTED] += 1
        return 0
    viol = _in_circle(M, d, a, b, e, m, margin) or _in_circle(M, e, a, b, d, m, margin)
    if not viol:
        stats[wid, REJECTED] += 1
        return 0
    if _in_circle(M, a, d, e, b, m, margin) or _in_circle(M, b, d, e, a, m, margin):
        stats[wid, REJECTED] += 1
        return 0
    n1, ok1 = _boundary_face_normal(M, old, cnt, a, b, d)
    n2, ok2 = _boundary_face_normal(M, old, cnt, a, b, e)
    if not (ok1 and ok2):
        return 0
    theta_old = _angle(n1, n2)
    best_q = 0.0
    best_n = 0
    best_new = np.empty((4, 4), dtype=np.int64)
    nopt = 1 if cnt == 2 else 2
    for opt in range(nopt):
        if cnt == 2:
            tri[0, 0] = d
            tri[0, 1] = ring[1]
            tri[0, 2] = e
            ntri = 1
        elif opt == 0:
            tri[0, 0] = d
            tri[0, 1] = ring[1]
            tri[0, 2] = ring[2]
            tri[1, 0] = d
            tri[1, 1] = ring[2]
            tri[1, 2] = e
            ntri = 2
        else:
            tri[0, 0] = d
            tri[0, 1] = ring[1]
            tri[0, 2] = e
            tri[1, 0] = ring[1]
            tri[1, 1] = ring[2]
            tri[1, 2] = e
            ntri = 2
        nn = _ring_tets(a, b, tri, ntri, new)
        if not _all_positive(M, new, nn):
            continue
        q = _min_quality(M, new, nn)
        if q > best_q:
            best_q = q
            best_n = nn
            best_new[:nn, :] = new[:nn, :]
    if best_n == 0:
        stats[wid, REJECTED] += 1
        return 0
    n3, ok3 = _boundary_face_normal(M, best_new, best_n, d, e, a)
    n4, ok4 = _boundary_face_normal(M, best_new, best_n, d, e, b)
    if not (ok3 and ok4) or _angle(n3, n4) > theta_old + FLATNESS_TOL:
        stats[wid, REJECTED] += 1
        return 0
    ball = np.empty(topo.MAX_BALL, dtype=np.int64)
    if _edge_exists(M, d, e, ball):
        stats[wid, REJECTED] += 1
        return 0
    r = _commit(M, shell, cnt, best_new, best_n, ref, tpool, tpool_n, wid, stats)
    if r <= 0:
        return r
    stats[wid, APPLIED] += 1
    stats[wid, N22] += 1
    return 1


@njit
def _claim_tet(M, t, wid, held, nheld):
    """Claim the vertices of ``t`` and confirm it did not change meanwhile."""
    v0 = M.tets[t, 0]
    v1 = M.tets[t, 1]
    v2 = M.tets[t, 2]
    v3 = M.tets[t, 3]
    if v0 < 0 or v1 < 0 or v2 < 0 or v3 < 0:
        return 0
    if not (claim_vertex(M.claim, v0, wid, held, nheld) and claim_vertex(M.claim, v1, wid, held, nheld)
            and claim_vertex(M.claim, v2, wid, held, nheld) and claim_vertex(M.claim, v3, wid, held, nheld)):
        return -1
    if M.tets[t, 0] != v0 or M.tets[t, 1] != v1 or M.tets[t, 2] != v2 or M.tets[t, 3] != v3:
        return 0
    return 1


@njit
def process_tet(M, t, crit, margin, surface, wid, held, nheld, tpool, tpool_n, stats):
    """Try every flip around tetrahedron ``t``; returns 1 / 0 / -1 (contention)."""
    r = _claim_tet(M, t, wid, held, nheld)
    if r <= 0:
        release_all(M.claim, wid, held, nheld)
        return r
    res = 0
    contended = False
    for j in range(4):
        if M.adj[t, j] < 0:
            continue
        r = op_flip23(M, t, j, crit, margin, wid, held, nheld, tpool, tpool_n, stats)
        if r > 0:
            res = 1
            break
        if r < 0:
            contended = True
    if res == 0:
        mask = 3 if crit & CRIT_EDGE_WEIGHT else 1
        if surface:
            mask |= 4
        for k in range(6):
            a = M.tets[t, EDGES[k, 0]]
            b = M.tets[t, EDGES[k, 1]]
            r = op_edge(M, t, a, b, mask, crit, margin, wid, held, nheld, tpool, tpool_n, stats)
            if r > 0:
                res = 1
                break
            if r < 0:
                contended = True
    release_all(M.claim, wid, held, nheld)
    if res == 0 and contended:
        return -1
    return res


@njit
def _reconnect_worker(M, items, counter, bucket, crit, margin, surface, tpool, tpool_n, stats, wid):
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    n = len(items)
    while True:
        lo, hi = next_bucket(counter, n, bucket)
        if lo >= n:
            break
        for _ in range(RESWEEPS):
            changed = 0
            for i in range(lo, hi):
                t = items[i]
                if M.active[t] == 0 or M.tets[t, 0] < 0:
                    continue
                M.active[t] = 0
                r = process_tet(M, t, crit, margin, surface, wid, held, nheld, tpool, tpool_n, stats)
                if r < 0:
                    M.active[t] = 1
                    stats[wid, ROLLED_BACK] += 1
                elif r > 0:
                    changed += 1
            if changed == 0:
                break


def reconnection_pass(mesh, workers=1, criterion="both", max_sweeps=30, bucket=4096,
                      surface=True, margin=DELAUNAY_MARGIN) -> PassStats:
    """Sweep active tetrahedra in buckets, flipping until a fixpoint or the sweep budget.

    Tetrahedra created by a flip, and their face neighbours, are re-activated.
    """
    crit = _CRITERIA[criterion]
    st = PassStats("reconnect")
    t0 = time.perf_counter()
    for sweep in range(max_sweeps):
        a = mesh.a
        items = np.flatnonzero((a.active != 0) & (a.tets[:, 0] >= 0))
        if len(items) == 0:
            break
        mesh.ensure_capacity(0, max(len(items), 4096))
        a = mesh.a
        tpool, tpool_n = make_pools(mesh.free_slots()[1], workers)
        stats = np.zeros((workers, NSTAT), dtype=np.int64)
        counter = np.zeros(1, dtype=np.int64)
        run_workers(_reconnect_worker, workers, a, items, counter, bucket, crit, margin, surface,
                    tpool, tpool_n, stats)
        s = stats.sum(axis=0)
        st.sweeps += 1
        st.attempted += int(s[ATTEMPTED])
        st.applied += int(s[APPLIED])
        st.rolled_back += int(s[ROLLED_BACK])
        st.rejected += int(s[REJECTED])
        for name, col in (("flip23", N23), ("flip32", N32), ("flip44", N44), ("flip22", N22)):
            st.detail[name] = st.detail.get(name, 0) + int(s[col])
        if s[APPLIED] == 0 and s[ROLLED_BACK] == 0:
            break
    st.seconds = time.perf_counter() - t0
    return st


# --------------------------------------------------------- single-op API


def _single(mesh, fn, *args):
    mesh.ensure_capacity(0, 16)
    tpool, tpool_n = make_pools(mesh.free_slots()[1], 1, headroom=16)
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    stats = np.zeros((1, NSTAT), dtype=np.int64)
    a = mesh.a
    r = fn(a, *args, 0, held, nheld, tpool, tpool_n, stats)
    release_all(a.claim, 0, held, nheld)
    return r > 0


def _edge_tet(mesh, a, b):
    from .mesh import vertex_ball
    for t in vertex_ball(mesh, a).tets:
        if b in mesh.a.tets[t]:
            return int(t)
    raise ValueError(f"({a}, {b}) is not an edge of the mesh")


def flip23(mesh, t, face, criterion="both", margin=DELAUNAY_MARGIN):
    """Try the 2-3 flip of face ``face`` (opposite local vertex) of tetrahedron ``t``."""
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    if _claim_tet(mesh.a, t, 0, held, nheld) <= 0:
        release_all(mesh.a.claim, 0, held, nheld)
        return False
    release_all(mesh.a.claim, 0, held, nheld)
    return _single(mesh, op_flip23, t, face, _CRITERIA[criterion], margin)


def flip32(mesh, a, b, criterion="both", margin=DELAUNAY_MARGIN):
    """Try the 3-2 flip removing interior edge ``ab`` (valence must be 3)."""
    return _single(mesh, op_edge, _edge_tet(mesh, a, b), a, b, 1, _CRITERIA[criterion], margin)


def flip44(mesh, a, b, margin=DELAUNAY_MARGIN):
    """Try the 4-4 flip of interior edge ``ab`` (valence must be 4)."""
    return _single(mesh, op_edge, _edge_tet(mesh, a, b), a, b, 2, CRIT_EDGE_WEIGHT, margin)


def flip22(mesh, a, b, margin=DELAUNAY_MARGIN):
    """Try the 2-2 surface flip of boundary edge ``ab``."""
    return _single(mesh, op_edge, _edge_tet(mesh, a, b), a, b, 4, CRIT_DELAUNAY, margin)
