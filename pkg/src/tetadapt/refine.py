"""Parallel point creation and direct insertion.

Phase A scans tetrahedra with over-long edges, proposes the centroid and
relocates it onto a boundary face or ridge edge whose metric diametral sphere
it encroaches.  Candidates closer than the filter radius to the tetrahedron's
vertices, or to candidates pending in the tetrahedron and its face
neighbours, are dropped; survivors are stored in the element's candidate slot
under short-lived spinlocks.  Phase B inserts the stored candidates (1-4,
boundary 1-3, or ridge shell 1-2 splits) inside claimed cavities.
"""
import math
import time

import numpy as np

from . import topo
from ._jit import njit
from .mesh import INTERIOR, RIDGE, SURFACE
from .metric import _k_edge_length, _k_exp, _k_inner, _k_mean_ratio, _k_quad
from .parallel import make_pools, next_bucket, run_workers
from .predicates import orient3d, orient3d_fast, solid_tet
from .stats import PassStats
from .topo import EDGES, FACES, claim_vertex, edge_shell, release_all

KIND_NONE, KIND_INTERIOR, KIND_SURFACE, KIND_RIDGE = 0, 1, 2, 3

ST_SCANNED, ST_CANDIDATES, ST_FILTERED, ST_INSERTED, ST_ABORTED, ST_CONTENDED = range(6)
NSTAT = 6

REFINE_THRESHOLD = math.sqrt(2.0)
FILTER_RADIUS = 1.0 / math.sqrt(2.0)
CHUNK = 256


# ------------------------------------------------------------- candidates


@njit
def needs_refinement_kernel(M, t, threshold, quality_floor):
    for k in range(6):
        a = M.tets[t, EDGES[k, 0]]
        b = M.tets[t, EDGES[k, 1]]
        if _k_edge_length(M.xyz[a], M.xyz[b], M.met[a], M.met[b]) > threshold:
            return True
    if quality_floor > 0.0:
        v = M.tets[t]
        q = _k_mean_ratio(M.xyz[v[0]], M.xyz[v[1]], M.xyz[v[2]], M.xyz[v[3]],
                          M.logm[v[0]], M.logm[v[1]], M.logm[v[2]], M.logm[v[3]])
        if q < quality_floor:
            return True
    return False


@njit
def _mean_metric(M, verts, n, out):
    lm = np.zeros(6)
    for i in range(n):
        for c in range(6):
            lm[c] += M.logm[verts[i], c]
    for c in range(6):
        lm[c] /= n
    return _k_exp(lm, out)


@njit
def encroaches_face(M, p, x, y, z):
    """``p`` inside the metric diametral sphere of triangle xyz (face-average metric)."""
    vs = np.empty(3, dtype=np.int64)
    vs[0] = x
    vs[1] = y
    vs[2] = z
    m = np.empty(6)
    if not _mean_metric(M, vs, 3, m):
        return False
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
    if not det > 0.0:
        return False
    s = 0.5 * (uu * vv - vv * uv) / det
    t = 0.5 * (vv * uu - uu * uv) / det
    ox = s * ux + t * vx
    oy = s * uy + t * vy
    oz = s * uz + t * vz
    r2 = _k_quad(m, ox, oy, oz)
    d2 = _k_quad(m, p[0] - X[0] - ox, p[1] - X[1] - oy, p[2] - X[2] - oz)
    return d2 < r2


@njit
def encroaches_edge(M, p, a, b):
    """``p`` inside the metric diametral sphere of segment ab (edge-average metric)."""
    vs = np.empty(2, dtype=np.int64)
    vs[0] = a
    vs[1] = b
    m = np.empty(6)
    if not _mean_metric(M, vs, 2, m):
        return False
    A = M.xyz[a]
    B = M.xyz[b]
    r2 = 0.25 * _k_quad(m, B[0] - A[0], B[1] - A[1], B[2] - A[2])
    d2 = _k_quad(m, p[0] - 0.5 * (A[0] + B[0]), p[1] - 0.5 * (A[1] + B[1]), p[2] - 0.5 * (A[2] + B[2]))
    return d2 < r2


@njit
def metric_midpoint_fraction(M, a, b):
    """Parameter along ab at half the metric length, for geometric size variation."""
    A = M.xyz[a]
    B = M.xyz[b]
    vx = B[0] - A[0]
    vy = B[1] - A[1]
    vz = B[2] - A[2]
    la = math.sqrt(_k_quad(M.met[a], vx, vy, vz))
    lb = math.sqrt(_k_quad(M.met[b], vx, vy, vz))
    if not (la > 0.0 and lb > 0.0):
        return 0.5
    r = la / lb
    lr = math.log(r)
    if abs(lr) < 1e-9:
        return 0.5
    return -math.log(0.5 * (1.0 + 1.0 / r)) / lr


@njit
def is_ridge_edge(M, t, a, b):
    """Boundary edge whose two boundary faces carry different markers."""
    if M.vcls[a] < RIDGE or M.vcls[b] < RIDGE:
        return False
    shell = np.empty(topo.MAX_SHELL, dtype=np.int64)
    ring = np.empty(topo.MAX_SHELL + 1, dtype=np.int64)
    cnt, is_open, mf, ml = edge_shell(M, a, b, t, shell, ring)
    return cnt > 0 and is_open and mf != ml


@njit
def barycentric(M, t, p, out):
    v = M.tets[t]
    x0 = M.xyz[v[0]]
    x1 = M.xyz[v[1]]
    x2 = M.xyz[v[2]]
    x3 = M.xyz[v[3]]
    vol = orient3d_fast(x0, x1, x2, x3)
    if not vol > 0.0:
        out[:] = 0.25
        return
    out[0] = orient3d_fast(p, x1, x2, x3) / vol
    out[1] = orient3d_fast(x0, p, x2, x3) / vol
    out[2] = orient3d_fast(x0, x1, p, x3) / vol
    out[3] = orient3d_fast(x0, x1, x2, p) / vol
    s = 0.0
    for i in range(4):
        if out[i] < 0.0:
            out[i] = 0.0
        s += out[i]
    if not s > 0.0:
        out[:] = 0.25
        return
    for i in range(4):
        out[i] /= s


@njit
def create_candidate(M, t, p, logp):
    """Candidate point for tetrahedron ``t``; returns (kind, entity).

    ``entity`` is the local face index for surface candidates and the
    local edge index for ridge candidates.
    """
    v = M.tets[t]
    for c in range(3):
        p[c] = 0.25 * (M.xyz[v[0], c] + M.xyz[v[1], c] + M.xyz[v[2], c] + M.xyz[v[3], c])
    kind = KIND_INTERIOR
    ent = -1
    for j in range(4):
        if M.adj[t, j] >= 0:
            continue
        x = v[FACES[j, 0]]
        y = v[FACES[j, 1]]
        z = v[FACES[j, 2]]
        if encroaches_face(M, p, x, y, z):
            for c in range(3):
                p[c] = (M.xyz[x, c] + M.xyz[y, c] + M.xyz[z, c]) / 3.0
            kind = KIND_SURFACE
            ent = j
            break
    for k in range(6):
        la = EDGES[k, 0]
        lb = EDGES[k, 1]
        if kind == KIND_SURFACE and (la == ent or lb == ent):
            continue  # only edges of the chosen face
        a = v[la]
        b = v[lb]
        if not is_ridge_edge(M, t, a, b):
            continue
        if encroaches_edge(M, p, a, b):
            f = metric_midpoint_fraction(M, a, b)
            for c in range(3):
                p[c] = (1.0 - f) * M.xyz[a, c] + f * M.xyz[b, c]
            kind = KIND_RIDGE
            ent = k
            break
    w = np.empty(4)
    barycentric(M, t, p, w)
    for c in range(6):
        logp[c] = w[0] * M.logm[v[0], c] + w[1] * M.logm[v[1], c] + w[2] * M.logm[v[2], c] + w[3] * M.logm[v[3], c]
    return kind, ent


@njit
def _too_close(M, p, mp, t, radius, check_vertices):
    if check_vertices:
        for j in range(4):
            v = M.tets[t, j]
            if _k_edge_length(p, M.xyz[v], mp, M.met[v]) < radius:
                return True
    if M.cand_kind[t] != KIND_NONE:
        mq = np.empty(6)
        if _k_exp(M.cand_logm[t], mq):
            if _k_edge_length(p, M.cand_xyz[t], mp, mq) < radius:
                return True
    return False


@njit
def filter_and_store(M, t, kind, ent, p, logp, radius, wid):
    """Proximity filter; on acceptance store the candidate in ``t``'s slot."""
    mp = np.empty(6)
    if not _k_exp(logp, mp):
        return False
    if _too_close(M, p, mp, t, radius, True):
        return False
    # lock t and its face neighbours in ascending order
    nb = np.empty(5, dtype=np.int64)
    nn = 0
    nb[nn] = t
    nn += 1
    for j in range(4):
        if M.adj[t, j] >= 0:
            nb[nn] = M.adj[t, j]
            nn += 1
    nb[:nn] = np.sort(nb[:nn])
    for i in range(nn):
        topo.spin_lock(M.tlock, nb[i], wid)
    ok = True
    for i in range(nn):
        if _too_close(M, p, mp, nb[i], radius, False):
            ok = False
            break
    if ok:
        for c in range(3):
            M.cand_xyz[t, c] = p[c]
        for c in range(6):
            M.cand_logm[t, c] = logp[c]
        M.cand_ent[t] = ent
        M.cand_kind[t] = kind
    for i in range(nn - 1, -1, -1):
        topo.spin_unlock(M.tlock, nb[i], wid)
    return ok


@njit
def _create_worker(M, items, counter, threshold, quality_floor, radius, stats, wid):
    p = np.empty(3)
    logp = np.empty(6)
    n = len(items)
    while True:
        lo, hi = next_bucket(counter, n, CHUNK)
        if lo >= n:
            break
        for i in range(lo, hi):
            t = items[i]
            if M.tets[t, 0] < 0:
                continue
            stats[wid, ST_SCANNED] += 1
            if not needs_refinement_kernel(M, t, threshold, quality_floor):
                continue
            kind, ent = create_candidate(M, t, p, logp)
            stats[wid, ST_CANDIDATES] += 1
            if not filter_and_store(M, t, kind, ent, p, logp, radius, wid):
                stats[wid, ST_FILTERED] += 1


# --------------------------------------------------------------- insertion


@njit
def insert_candidate(M, t, wid, held, nheld, vpool, vpool_n, tpool, tpool_n):
    """Insert the candidate stored in ``t``; returns vertex id, -1 abort, -2 contention."""
    v0 = M.tets[t, 0]
    if v0 < 0 or M.cand_kind[t] == KIND_NONE:
        return -1
    for j in range(4):
        if not claim_vertex(M.claim, M.tets[t, j], wid, held, nheld):
            return -2
    kind = M.cand_kind[t]
    if kind == KIND_NONE or M.tets[t, 0] < 0:
        return -1
    ent = M.cand_ent[t]
    pv = topo.pool_pop(vpool, vpool_n, wid)
    if pv < 0:
        return -2
    for c in range(3):
        M.xyz[pv, c] = M.cand_xyz[t, c]
    for c in range(6):
        M.logm[pv, c] = M.cand_logm[t, c]
    mp = np.empty(6)
    if not _k_exp(M.logm[pv], mp):
        topo.pool_push(vpool, vpool_n, wid, pv)
        return -1
    M.met[pv, :] = mp
    v = M.tets[t].copy()

    if kind == KIND_INTERIOR or kind == KIND_SURFACE:
        old = np.empty(1, dtype=np.int64)
        old[0] = t
        nold = 1
        new = np.empty((4, 4), dtype=np.int64)
        nn = 0
        for j in range(4):
            if kind == KIND_SURFACE and j == ent:
                continue
            for k in range(4):
                new[nn, k] = v[k]
            new[nn, j] = pv
            nn += 1
        cls = INTERIOR if kind == KIND_INTERIOR else SURFACE
        vref = 0 if kind == KIND_INTERIOR else -1 - M.adj[t, ent]
        if kind == KIND_SURFACE and M.adj[t, ent] >= 0:
            topo.pool_push(vpool, vpool_n, wid, pv)
            return -1
        refs = np.full(nn, M.tref[t], dtype=np.int64)
    else:
        a = v[EDGES[ent, 0]]
        b = v[EDGES[ent, 1]]
        shell = np.empty(topo.MAX_SHELL, dtype=np.int64)
        ring = np.empty(topo.MAX_SHELL + 1, dtype=np.int64)
        cnt, is_open, mf, ml = edge_shell(M, a, b, t, shell, ring)
        if cnt < 0 or not is_open or mf == ml:
            topo.pool_push(vpool, vpool_n, wid, pv)
            return -1
        for i in range(cnt + 1):
            if not claim_vertex(M.claim, ring[i], wid, held, nheld):
                topo.pool_push(vpool, vpool_n, wid, pv)
                return -2
        old = shell[:cnt].copy()
        nold = cnt
        new = np.empty((2 * cnt, 4), dtype=np.int64)
        refs = np.empty(2 * cnt, dtype=np.int64)
        nn = 0
        for i in range(cnt):
            s = shell[i]
            for rep in range(2):
                w = a if rep == 0 else b
                for k in range(4):
                    x = M.tets[s, k]
                    new[nn, k] = pv if x == w else x
                refs[nn] = M.tref[s]
                nn += 1
        cls = RIDGE
        vref = min(mf, ml)

    for k in range(nn):
        if not solid_tet(M.xyz[new[k, 0]], M.xyz[new[k, 1]], M.xyz[new[k, 2]], M.xyz[new[k, 3]]):
            topo.pool_push(vpool, vpool_n, wid, pv)
            return -1
    M.claim[pv] = wid
    held[nheld[0]] = pv
    nheld[0] += 1
    if not topo.replace_cavity(M, old, nold, new, refs, nn, tpool, tpool_n, wid):
        M.claim[pv] = topo.FREE
        nheld[0] -= 1
        topo.pool_push(vpool, vpool_n, wid, pv)
        return -2
    M.vcls[pv] = cls
    M.vref[pv] = vref
    return pv


@njit
def _insert_worker(M, items, counter, vpool, vpool_n, tpool, tpool_n, stats, wid):
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    n = len(items)
    while True:
        lo, hi = next_bucket(counter, n, CHUNK)
        if lo >= n:
            break
        for i in range(lo, hi):
            t = items[i]
            r = insert_candidate(M, t, wid, held, nheld, vpool, vpool_n, tpool, tpool_n)
            release_all(M.claim, wid, held, nheld)
            if r >= 0:
                stats[wid, ST_INSERTED] += 1
                M.cand_kind[t] = KIND_NONE
            elif r == -1:
                stats[wid, ST_ABORTED] += 1
                M.cand_kind[t] = KIND_NONE
            else:
                stats[wid, ST_CONTENDED] += 1


def _insert_round(mesh, items, workers, stats):
    a = mesh.a
    vpool, vpool_n = make_pools(mesh.free_slots()[0], workers, headroom=0)
    tpool, tpool_n = make_pools(mesh.free_slots()[1], workers)
    counter = np.zeros(1, dtype=np.int64)
    run_workers(_insert_worker, workers, a, items, counter, vpool, vpool_n, tpool, tpool_n, stats)


def refinement_pass(mesh, workers=1, threshold=REFINE_THRESHOLD, radius=FILTER_RADIUS,
                    quality_floor=0.0) -> PassStats:
    """One create-filter-insert round over all alive tetrahedra."""
    st = PassStats("refine")
    t0 = time.perf_counter()
    a = mesh.a
    a.cand_kind[:] = KIND_NONE
    items = mesh.alive_tets()
    stats = np.zeros((workers, NSTAT), dtype=np.int64)
    counter = np.zeros(1, dtype=np.int64)
    run_workers(_create_worker, workers, a, items, counter, threshold, quality_floor, radius, stats)
    cands = np.flatnonzero(a.cand_kind != KIND_NONE)
    if len(cands):
        mesh.ensure_capacity(len(cands), 8 * len(cands) + 1024)
        _insert_round(mesh, cands, workers, stats)
        left = np.flatnonzero(mesh.a.cand_kind != KIND_NONE)
        if len(left):
            _insert_round(mesh, left, 1, stats[:1])
    mesh.a.cand_kind[:] = KIND_NONE
    s = stats.sum(axis=0)
    st.sweeps = 1
    st.attempted = int(s[ST_CANDIDATES])
    st.applied = int(s[ST_INSERTED])
    st.rejected = int(s[ST_FILTERED] + s[ST_ABORTED])
    st.rolled_back = int(s[ST_CONTENDED])
    st.detail = {"scanned": int(s[ST_SCANNED]), "filtered": int(s[ST_FILTERED]),
                 "aborted": int(s[ST_ABORTED])}
    st.seconds = time.perf_counter() - t0
    return st


# ----------------------------------------------------------------- public


def needs_refinement(mesh, t, threshold=REFINE_THRESHOLD, quality_floor=0.0):
    """Whether tetrahedron ``t`` has an edge longer than ``threshold`` (metric units)."""
    return bool(needs_refinement_kernel(mesh.a, t, threshold, quality_floor))


def candidate_for(mesh, t):
    """Candidate point of ``t``: (position, log-metric, kind name, local entity)."""
    p = np.empty(3)
    logp = np.empty(6)
    kind, ent = create_candidate(mesh.a, t, p, logp)
    return p, logp, {1: "interior", 2: "surface", 3: "ridge"}[int(kind)], int(ent)


def store_candidate(mesh, t, p, logp, kind="interior", ent=-1, radius=FILTER_RADIUS, worker=0):
    """Run the proximity filter on a candidate and store it in ``t`` if accepted."""
    k = {"interior": 1, "surface": 2, "ridge": 3}[kind]
    return bool(filter_and_store(mesh.a, t, k, ent, np.asarray(p, dtype=np.float64),
                                 np.asarray(logp, dtype=np.float64), radius, worker))


def insert_point(mesh, t):
    """Insert the candidate stored in ``t``; returns the new vertex id or -1 on abort."""
    mesh.ensure_capacity(1, 64)
    vpool, vpool_n = make_pools(mesh.free_slots()[0], 1, headroom=0)
    tpool, tpool_n = make_pools(mesh.free_slots()[1], 1)
    held = np.empty(topo.MAX_HELD, dtype=np.int64)
    nheld = np.zeros(1, dtype=np.int64)
    r = insert_candidate(mesh.a, t, 0, held, nheld, vpool, vpool_n, tpool, tpool_n)
    release_all(mesh.a.claim, 0, held, nheld)
    if r >= 0:
        mesh.a.cand_kind[t] = KIND_NONE
    return int(r) if r >= 0 else -1
