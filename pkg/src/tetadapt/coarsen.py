"""Parallel edge collapse and vertex smoothing.

Both kernels work vertex by vertex.  A worker claims the vertex, which
freezes its ball, then claims every vertex of the ball before reading or
writing geometry.  Collapses remove the vertex onto a neighbour along a
short edge; smoothing samples positions along segments from the vertex
towards its link when the ball contains poor elements.
"""
import math
import time

import numpy as np

from . import topo
from ._jit import njit
from .mesh import CORNER, DEAD, INTERIOR, RIDGE, SURFACE
from .metric import _k_edge_length, _k_exp, _k_mean_ratio
from .parallel import make_pools, next_guided, run_workers
from .predicates import solid_tet
from .stats import PassStats
from .topo import FACES, claim_tet_vertices, claim_vertex, release_all, vertex_ball

COLLAPSE_THRESHOLD = 1.0 / math.sqrt(2.0)
MAX_NEW_LENGTH = math.sqrt(2.0)
MIN_QUALITY = 1e-6
MAX_NORMAL_DEVIATION = 0.2
QUALITY_TRIGGER = 0.1
SMOOTH_STEPS = np.array([0.25, 0.5, 0.75])
GUIDED_FLOOR = 64

# stats columns
ATTEMPTED, APPLIED, CONTENDED, REJ_TOPOLOGY, REJ_GEOMETRY = range(5)
NSTAT = 5

# stands for the outside of the domain in link computations
INF = topo.MAX_VERTICES - 1


# ----------------------------------------------------------------- helpers


@njit
def claim_ball(M, v, wid, held, nheld, ball):
    """Claim ``v`` and every vertex of its ball; returns the ball size.

    0 means contention, negative values are the :func:`vertex_ball` codes.
    """
    if not claim_vertex(M.claim, v, wid, held, nheld):
        return 0
    nb = vertex_ball(M, v, ball)
    if nb <= 0:
        return nb
    for i in range(nb):
        if not claim_tet_vertices(M, ball[i], wid, held, nheld):
            return 0
    return nb


@njit
def boundary_fan(M, v, ball, nb, fx, fy, fm):
    """Boundary faces around ``v``: opposite edges (fx, fy) and markers.

    The edge is stored so that (v, fx, fy) is the face as seen from inside.
    """
    n = 0
    for i in range(nb):
        t = ball[i]
        for j in range(4):
            if M.tets[t, j] == v or M.adj[t, j] >= 0:
                continue
            f0 = M.tets[t, FACES[j, 0]]
            f1 = M.tets[t, FACES[j, 1]]
            f2 = M.tets[t, FACES[j, 2]]
            # rotate so that v comes first
            if f1 == v:
                f0, f1, f2 = f1, f2, f0
            elif f2 == v:
                f0, f1, f2 = f2, f0, f1
            fx[n] = f1
            fy[n] = f2
            fm[n] = -1 - M.adj[t, j]
            n += 1
    return n


@njit
def edge_markers(w, fx, fy, fm, nf):
    """Markers of the boundary faces of the fan sharing the edge to ``w``.

    Returns (count, first marker, second marker).
    """
    c = 0
    m0 = -1
    m1 = -1
    for i in range(nf):
        if fx[i] == w or fy[i] == w:
            if c == 0:
                m0 = fm[i]
            else:
                m1 = fm[i]
            c += 1
    return c, m0, m1


@njit
def _normal(p, q, r):
    n = np.empty(3)
    ux = q[0] - p[0]
    uy = q[1] - p[1]
    uz = q[2] - p[2]
    vx = r[0] - p[0]
    vy = r[1] - p[1]
    vz = r[2] - p[2]
    n[0] = uy * vz - uz * vy
    n[1] = uz * vx - ux * vz
    n[2] = ux * vy - uy * vx
    return n


@njit
def _angle(n1, n2):
    d = n1[0] * n2[0] + n1[1] * n2[1] + n1[2] * n2[2]
    l = math.sqrt((n1[0] ** 2 + n1[1] ** 2 + n1[2] ** 2) * (n2[0] ** 2 + n2[1] ** 2 + n2[2] ** 2))
    if not l > 0.0:
        return math.pi
    return math.acos(max(-1.0, min(1.0, d / l)))


@njit
def _sorted_unique(arr, n):
    if n == 0:
        return arr[:0].copy()
    return np.unique(arr[:n])


@njit
def _member(sorted_arr, x):
    i = np.searchsorted(sorted_arr, x)
    return i < len(sorted_arr) and sorted_arr[i] == x


@njit
def _vertex_link(M, v, ball, nb):
    """Vertices, edges and triangles (as keys) of the link of ``v``.

    Boundary faces are coned to the virtual vertex ``INF`` so the link of a
    boundary vertex is a closed surface, as for an interior one.
    """
    vs = np.empty(3 * nb + 1, dtype=np.int64)
    es = np.empty(9 * nb, dtype=np.int64)
    ts = np.empty(4 * nb, dtype=np.int64)
    nv = 0
    ne = 0
    nt = 0
    boundary = False
    for i in range(nb):
        t = ball[i]
        j = topo.local_index(M, t, v)
        x = M.tets[t, FACES[j, 0]]
        y = M.tets[t, FACES[j, 1]]
        z = M.tets[t, FACES[j, 2]]
        vs[nv] = x
        vs[nv + 1] = y
        vs[nv + 2] = z
        nv += 3
        es[ne] = topo.edge_key(x, y)
        es[ne + 1] = topo.edge_key(y, z)
        es[ne + 2] = topo.edge_key(z, x)
        ne += 3
        ts[nt] = topo.face_key(x, y, z)
        nt += 1
        for f in range(4):
            if f == j or M.adj[t, f] >= 0:
                continue
            boundary = True
            # the boundary face holds v and two of x, y, z
            p = -1
            q = -1
            for k in range(3):
                w = M.tets[t, FACES[f, k]]
                if w != v:
                    if p < 0:
                        p = w
                    else:
                        q = w
            es[ne] = topo.edge_key(p, INF)
            es[ne + 1] = topo.edge_key(q, INF)
            ne += 2
            ts[nt] = topo.face_key(p, q, INF)
            nt += 1
    if boundary:
        vs[nv] = INF
        nv += 1
    return _sorted_unique(vs, nv), _sorted_unique(es, ne), _sorted_unique(ts, nt)


@njit
def link_condition(M, a, b, ball_a, na, ball_b, nb):
    """Lk(a) and Lk(b) intersect exactly in Lk(ab)."""
    va, ea, ta = _vertex_link(M, a, ball_a, na)
    vb, eb, tb = _vertex_link(M, b, ball_b, nb)
    # link of the edge
    vab = np.empty(4 * nb, dtype=np.int64)
    eab = np.empty(3 * nb, dtype=np.int64)
    nv = 0
    ne = 0
    for i in range(nb):
        t = ball_b[i]
        if not topo.tet_has(M, t, a):
            continue
        x, y, _, _ = topo.other_two(M, t, a, b)
        vab[nv] = x
        vab[nv + 1] = y
        nv += 2
        eab[ne] = topo.edge_key(x, y)
        ne += 1
        for f in range(4):
            w = M.tets[t, f]
            if w == a or w == b:
                continue
            # face opposite w holds a, b and the remaining vertex
            if M.adj[t, f] < 0:
                r = x if w == y else y
                vab[nv] = INF
                nv += 1
                eab[ne] = topo.edge_key(r, INF)
                ne += 1
    vab_s = _sorted_unique(vab, nv)
    eab_s = _sorted_unique(eab, ne)
    for x in va:
        if _member(vb, x) and not _member(vab_s, x):
            return False
    for e in ea:
        if _member(eb, e) and not _member(eab_s, e):
            return False
    for f in ta:
        if _member(tb, f):
            return False
    return True


@njit
def collapse_allowed(M, b, a, fx, fy, fm, nf):
    """Classification rule for moving ``b`` onto ``a``.

    Corners never move, ridge vertices slide along a ridge edge, surface
    vertices along a boundary edge of their own surface.  The removed
    vertex must not have a higher class than the one it merges into.
    """
    cb = M.vcls[b]
    ca = M.vcls[a]
    if cb == CORNER or cb < 0 or ca < 0 or ca < cb:
        return False
    if cb == INTERIOR:
        return True
    c, m0, m1 = edge_markers(a, fx, fy, fm, nf)
    if c != 2:
        return False
    if cb == SURFACE:
        return m0 == m1 and m0 == M.vref[b]
    # ridge
    return m0 != m1


# ---------------------------------------------------------------- collapse


@njit
def try_collapse(M, b, a, ball_b, nb, max_len, qmin, max_dev, wid, tpool, tpool_n):
    """Collapse edge ``ab`` by merging ``b`` into ``a``.

    The caller holds claims on the ball of ``b``.  Returns 1 on success,
    -1 on a topological refusal and -2 on a geometric one.
    """
    fx = np.empty(3 * nb, dtype=np.int64)
    fy = np.empty(3 * nb, dtype=np.int64)
    fm = np.empty(3 * nb, dtype=np.int64)
    nf = boundary_fan(M, b, ball_b, nb, fx, fy, fm)
    if not collapse_allowed(M, b, a, fx, fy, fm, nf):
        return -1
    ball_a = np.empty(topo.MAX_BALL, dtype=np.int64)
    na = vertex_ball(M, a, ball_a)
    if na <= 0:
        return -1
    if not link_condition(M, a, b, ball_a, na, ball_b, nb):
        return -1

    new = np.empty((nb, 4), dtype=np.int64)
    refs = np.empty(nb, dtype=np.int64)
    nn = 0
    for i in range(nb):
        t = ball_b[i]
        if topo.tet_has(M, t, a):
            continue
        for k in range(4):
            w = M.tets[t, k]
            new[nn, k] = a if w == b else w
        refs[nn] = M.tref[t]
        nn += 1
    if nn == 0:
        return -1
    for k in range(nn):
        p0 = M.xyz[new[k, 0]]
        p1 = M.xyz[new[k, 1]]
        p2 = M.xyz[new[k, 2]]
        p3 = M.xyz[new[k, 3]]
        if not solid_tet(p0, p1, p2, p3):
            return -2
        q = _k_mean_ratio(p0, p1, p2, p3, M.logm[new[k, 0]], M.logm[new[k, 1]],
                          M.logm[new[k, 2]], M.logm[new[k, 3]])
        if not q >= qmin:
            return -2
        for j in range(4):
            w = new[k, j]
            if w != a:
                if _k_edge_length(M.xyz[a], M.xyz[w], M.met[a], M.met[w]) > max_len:
                    return -2
    # boundary faces of b that survive with a in place of b
    for i in range(nf):
        if fx[i] == a or fy[i] == a:
            continue
        n_old = _normal(M.xyz[b], M.xyz[fx[i]], M.xyz[fy[i]])
        n_new = _normal(M.xyz[a], M.xyz[fx[i]], M.xyz[fy[i]])
        if _angle(n_old, n_new) > max_dev:
            return -2

    if not topo.replace_cavity(M, ball_b, nb, new, refs, nn, tpool, tpool_n, wid):
        return -1
    M.vcls[b] = DEAD
    M.vtet[b] = -1
    return 1


@njit
def _collapse_vertex(M, v, threshold, max_len, qmin, max_dev, vact, wid, held, nheld,
                     ball, nbrs, tpool, tpool_n, stats):
    """Try the short edges of ``v`` shortest first; at most one collapse."""
    nb = claim_ball(M, v, wid, held, nheld, ball)
    if nb == 0:
        stats[wid, CONTENDED] += 1
        return -1
    if nb < 0:
        return 0
    nn = topo.ball_vertices(M, v, ball, nb, nbrs)
    if nn <= 0:
        return 0
    lens = np.empty(nn)
    for i in range(nn):
        w = nbrs[i]
        lens[i] = _k_edge_length(M.xyz[v], M.xyz[w], M.met[v], M.met[w])
    order = np.argsort(lens)
    for k in range(nn):
        i = order[k]
        if not lens[i] < threshold:
            break
        w = nbrs[i]
        # the lower class vertex goes; among equals the one being visited
        if M.vcls[w] < M.vcls[v]:
            continue
        stats[wid, ATTEMPTED] += 1
        r = try_collapse(M, v, w, ball, nb, max_len, qmin, max_dev, wid, tpool, tpool_n)
        if r > 0:
            stats[wid, APPLIED] += 1
            for j in range(nn):
                vact[nbrs[j]] = 1
            return 1
        if r == -1:
            stats[wid, REJ_TOPOLOGY] += 1
        else:
            stats[wid, REJ_GEOMETRY] += 1
    return 0


@njit
def _collapse_worker(M, items, counter, workers, threshold, max_len, qmin, max_dev, vact,
                     tpool, tpool_n, stats, wid):
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    ball = np.empty(topo.MAX_BALL, dtype=np.int64)
    nbrs = np.empty(topo.MAX_BALL, dtype=np.int64)
    n = len(items)
    while True:
        lo, hi = next_guided(counter, n, workers, GUIDED_FLOOR)
        if lo >= n:
            break
        for i in range(lo, hi):
            v = items[i]
            if vact[v] == 0 or M.vcls[v] < 0 or M.vcls[v] == CORNER:
                continue
            vact[v] = 0
            r = _collapse_vertex(M, v, threshold, max_len, qmin, max_dev, vact, wid, held, nheld,
                                 ball, nbrs, tpool, tpool_n, stats)
            if r < 0:
                vact[v] = 1
            release_all(M.claim, wid, held, nheld)


def collapse_pass(mesh, workers=1, threshold=COLLAPSE_THRESHOLD, max_sweeps=10,
                  max_len=MAX_NEW_LENGTH, qmin=MIN_QUALITY, max_dev=MAX_NORMAL_DEVIATION,
                  seed=None) -> PassStats:
    """Collapse edges shorter than ``threshold`` until none can be removed.

    With ``seed`` the vertices are visited in a seeded random order rather
    than by index, which avoids directional bias on structured meshes.
    """
    rng = None if seed is None else np.random.default_rng(seed)
    st = PassStats("collapse")
    t0 = time.perf_counter()
    a = mesh.a
    vact = (a.vcls >= 0).astype(np.int8)
    for sweep in range(max_sweeps):
        a = mesh.a
        items = np.flatnonzero((vact != 0) & (a.vcls >= 0) & (a.vcls != CORNER))
        if len(items) == 0:
            break
        if rng is not None:
            items = rng.permutation(items)
        tpool, tpool_n = make_pools(np.zeros(0, dtype=np.int64), workers, headroom=1 << 16)
        stats = np.zeros((workers, NSTAT), dtype=np.int64)
        counter = np.zeros(1, dtype=np.int64)
        run_workers(_collapse_worker, workers, a, items, counter, workers, threshold, max_len,
                    qmin, max_dev, vact, tpool, tpool_n, stats)
        s = stats.sum(axis=0)
        st.sweeps += 1
        st.attempted += int(s[ATTEMPTED])
        st.applied += int(s[APPLIED])
        st.rolled_back += int(s[CONTENDED])
        st.rejected += int(s[REJ_TOPOLOGY] + s[REJ_GEOMETRY])
        st.detail["rejected_topology"] = st.detail.get("rejected_topology", 0) + int(s[REJ_TOPOLOGY])
        st.detail["rejected_geometry"] = st.detail.get("rejected_geometry", 0) + int(s[REJ_GEOMETRY])
        if s[APPLIED] == 0 and s[CONTENDED] == 0:
            break
    st.seconds = time.perf_counter() - t0
    return st


# --------------------------------------------------------------- smoothing


@njit
def _ball_quality(M, v, ball, nb, p, lp):
    """Minimum mean ratio over the ball with ``v`` placed at ``p`` with log-metric ``lp``.

    Returns -1 when an element is inverted or flat.
    """
    q = 1.0
    pts = np.empty((4, 3))
    logs = np.empty((4, 6))
    for i in range(nb):
        t = ball[i]
        for k in range(4):
            w = M.tets[t, k]
            if w == v:
                pts[k] = p
                logs[k] = lp
            else:
                pts[k] = M.xyz[w]
                logs[k] = M.logm[w]
        if not solid_tet(pts[0], pts[1], pts[2], pts[3]):
            return -1.0
        r = _k_mean_ratio(pts[0], pts[1], pts[2], pts[3], logs[0], logs[1], logs[2], logs[3])
        if r < q:
            q = r
    return q


@njit
def smoothing_targets(M, v, ball, nb, targets, tlogs):
    """Ends of the search segments of ``v`` and the log-metrics there.

    Interior vertices search towards the centroid of every face opposite
    ``v`` in its ball, surface vertices towards the midpoint of every edge
    opposite ``v`` in its surface fan, ridge vertices towards either ridge
    neighbour.  Each segment lies in one element, so blending log-metrics
    along it is the log-Euclidean interpolation at the trial point.
    Returns the number of segments (0 for corners and ambiguous cases).
    """
    cls = M.vcls[v]
    if cls == CORNER or cls < 0:
        return 0
    if cls == INTERIOR:
        for i in range(nb):
            t = ball[i]
            targets[i] = 0.0
            tlogs[i] = 0.0
            for k in range(4):
                w = M.tets[t, k]
                if w != v:
                    targets[i] += M.xyz[w]
                    tlogs[i] += M.logm[w]
            targets[i] /= 3.0
            tlogs[i] /= 3.0
        return nb
    fx = np.empty(3 * nb, dtype=np.int64)
    fy = np.empty(3 * nb, dtype=np.int64)
    fm = np.empty(3 * nb, dtype=np.int64)
    nf = boundary_fan(M, v, ball, nb, fx, fy, fm)
    c = 0
    if cls == SURFACE:
        for i in range(nf):
            if fm[i] != M.vref[v]:
                continue
            targets[c] = 0.5 * (M.xyz[fx[i]] + M.xyz[fy[i]])
            tlogs[c] = 0.5 * (M.logm[fx[i]] + M.logm[fy[i]])
            c += 1
        return c
    # ridge: neighbours whose boundary edge separates two markers
    ends = np.full(2, -1, dtype=np.int64)
    for i in range(nf):
        for w in (fx[i], fy[i]):
            if w == ends[0] or w == ends[1]:
                continue
            k, m0, m1 = edge_markers(w, fx, fy, fm, nf)
            if k == 2 and m0 != m1:
                if c == 2:
                    return 0
                ends[c] = w
                c += 1
    if c != 2:
        return 0
    for i in range(2):
        targets[i] = M.xyz[ends[i]]
        tlogs[i] = M.logm[ends[i]]
    return 2


@njit
def smooth_vertex_kernel(M, v, ball, nb, trigger, max_dev, steps):
    """Move ``v`` to the best sample along its search segments if quality strictly improves.

    The caller holds claims on the ball.  Returns 1 when moved.
    """
    p0 = M.xyz[v].copy()
    l0 = M.logm[v].copy()
    q0 = _ball_quality(M, v, ball, nb, p0, l0)
    if not q0 < trigger:
        return 0
    targets = np.empty((3 * nb, 3))
    tlogs = np.empty((3 * nb, 6))
    ns = smoothing_targets(M, v, ball, nb, targets, tlogs)
    if ns == 0:
        return 0
    nf = 0
    fx = np.empty(3 * nb, dtype=np.int64)
    fy = np.empty(3 * nb, dtype=np.int64)
    fm = np.empty(3 * nb, dtype=np.int64)
    if M.vcls[v] != INTERIOR:
        nf = boundary_fan(M, v, ball, nb, fx, fy, fm)
    best_q = q0
    best_p = p0.copy()
    best_l = l0.copy()
    p = np.empty(3)
    lp = np.empty(6)
    for j in range(ns):
        for s in steps:
            p[:] = (1.0 - s) * p0 + s * targets[j]
            lp[:] = (1.0 - s) * l0 + s * tlogs[j]
            ok = True
            for i in range(nf):
                n_old = _normal(p0, M.xyz[fx[i]], M.xyz[fy[i]])
                n_new = _normal(p, M.xyz[fx[i]], M.xyz[fy[i]])
                if _angle(n_old, n_new) > max_dev:
                    ok = False
                    break
            if not ok:
                continue
            q = _ball_quality(M, v, ball, nb, p, lp)
            if q > best_q:
                best_q = q
                best_p[:] = p
                best_l[:] = lp
    if not best_q > q0:
        return 0
    met = np.empty(6)
    if not _k_exp(best_l, met):
        return 0
    M.xyz[v] = best_p
    M.logm[v] = best_l
    M.met[v] = met
    return 1


@njit
def _smooth_worker(M, items, counter, workers, trigger, max_dev, steps, stats, wid):
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    ball = np.empty(topo.MAX_BALL, dtype=np.int64)
    n = len(items)
    while True:
        lo, hi = next_guided(counter, n, workers, GUIDED_FLOOR)
        if lo >= n:
            break
        for i in range(lo, hi):
            v = items[i]
            if M.vcls[v] < 0 or M.vcls[v] == CORNER:
                continue
            nb = claim_ball(M, v, wid, held, nheld, ball)
            if nb == 0:
                stats[wid, CONTENDED] += 1
            elif nb > 0:
                stats[wid, ATTEMPTED] += 1
                if smooth_vertex_kernel(M, v, ball, nb, trigger, max_dev, steps) > 0:
                    stats[wid, APPLIED] += 1
            release_all(M.claim, wid, held, nheld)


def smoothing_pass(mesh, workers=1, sweeps=3, trigger=QUALITY_TRIGGER,
                   max_dev=MAX_NORMAL_DEVIATION) -> PassStats:
    """Smooth vertices of poor elements for a fixed number of sweeps."""
    st = PassStats("smooth")
    t0 = time.perf_counter()
    for sweep in range(sweeps):
        a = mesh.a
        items = np.flatnonzero((a.vcls >= 0) & (a.vcls != CORNER))
        stats = np.zeros((workers, NSTAT), dtype=np.int64)
        counter = np.zeros(1, dtype=np.int64)
        run_workers(_smooth_worker, workers, a, items, counter, workers, trigger, max_dev,
                    SMOOTH_STEPS, stats)
        s = stats.sum(axis=0)
        st.sweeps += 1
        st.attempted += int(s[ATTEMPTED])
        st.applied += int(s[APPLIED])
        st.rolled_back += int(s[CONTENDED])
        if s[APPLIED] == 0:
            break
    st.seconds = time.perf_counter() - t0
    return st


# ---------------------------------------------------------- single-op API


def collapse_edge(mesh, b, a, max_len=MAX_NEW_LENGTH, qmin=MIN_QUALITY,
                  max_dev=MAX_NORMAL_DEVIATION):
    """Merge vertex ``b`` into ``a``; returns True when the collapse was applied."""
    m = mesh.a
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    ball = np.empty(topo.MAX_BALL, dtype=np.int64)
    try:
        nb = claim_ball(m, b, 0, held, nheld, ball)
        if nb <= 0 or not topo.contains(m.tets[ball[:nb]].ravel(), 4 * nb, a):
            return False
        tpool, tpool_n = make_pools(np.zeros(0, dtype=np.int64), 1, headroom=64)
        return try_collapse(m, b, a, ball, nb, max_len, qmin, max_dev, 0, tpool, tpool_n) > 0
    finally:
        release_all(m.claim, 0, held, nheld)


def smooth_vertex(mesh, v, trigger=QUALITY_TRIGGER, max_dev=MAX_NORMAL_DEVIATION):
    """Smooth a single vertex; returns True when it moved."""
    m = mesh.a
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    ball = np.empty(topo.MAX_BALL, dtype=np.int64)
    try:
        nb = claim_ball(m, v, 0, held, nheld, ball)
        if nb <= 0:
            return False
        return smooth_vertex_kernel(m, v, ball, nb, trigger, max_dev, SMOOTH_STEPS) > 0
    finally:
        release_all(m.claim, 0, held, nheld)
