"""Low-level topology kernels shared by every mesh operation.

All functions take the mesh as a ``MeshArrays`` named tuple.  Conventions:

* ``tets[t, 0] == -1`` marks a dead slot;
* ``adj[t, i]`` is the neighbour across the face opposite local vertex ``i``,
  or ``-1 - marker`` when that face lies on the boundary with ``marker``;
* face ``i`` of a positive tetrahedron, listed as ``FACES[i]``, has its
  right-hand normal pointing outward.

A worker may only modify tetrahedra whose four vertices it has claimed, and
must claim a vertex before walking its ball.  Because every operation that
creates or destroys a tetrahedron holds claims on all its vertices, a claimed
vertex's ball is frozen for the claimer.
"""
import numpy as np

from ._jit import cas, njit

FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], dtype=np.int64)
EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64)

FREE = -1
MAX_BALL = 512
MAX_SHELL = 64
MAX_HELD = 2048
KEY_BITS = 21
MAX_VERTICES = 1 << KEY_BITS

# ------------------------------------------------------------------ claims


@njit
def claim_vertex(claim, v, wid, held, nheld):
    """Try to claim ``v``; records it in ``held`` when newly acquired."""
    old = cas(claim, v, FREE, wid)
    if old == FREE:
        if nheld[0] >= held.shape[0]:
            cas(claim, v, wid, FREE)
            return False
        held[nheld[0]] = v
        nheld[0] += 1
        return True
    return old == wid


@njit
def release_all(claim, wid, held, nheld):
    for i in range(nheld[0]):
        cas(claim, held[i], wid, FREE)
    nheld[0] = 0


@njit
def claim_tet_vertices(M, t, wid, held, nheld):
    for j in range(4):
        v = M.tets[t, j]
        if v < 0:
            return False
        if not claim_vertex(M.claim, v, wid, held, nheld):
            return False
    return True


@njit
def fetch_add(counter, idx, inc):
    """Atomic fetch-and-add built on compare-and-swap."""
    while True:
        old = counter[idx]
        if cas(counter, idx, old, old + inc) == old:
            return old


@njit
def spin_lock(lock, idx, wid):
    while cas(lock, idx, FREE, wid) != FREE:
        pass


@njit
def spin_unlock(lock, idx, wid):
    cas(lock, idx, wid, FREE)


# --------------------------------------------------------------- utilities


@njit
def local_index(M, t, v):
    for j in range(4):
        if M.tets[t, j] == v:
            return j
    return -1


@njit
def tet_has(M, t, v):
    return M.tets[t, 0] == v or M.tets[t, 1] == v or M.tets[t, 2] == v or M.tets[t, 3] == v


@njit
def face_key(a, b, c):
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    return (a << (2 * KEY_BITS)) | (b << KEY_BITS) | c


@njit
def edge_key(a, b):
    if a > b:
        a, b = b, a
    return (a << KEY_BITS) | b


@njit
def perm_parity(i0, i1, i2, i3):
    """+1 for an even permutation of (0,1,2,3), -1 for odd."""
    p0, p1, p2, p3 = i0, i1, i2, i3
    inv = 0
    if p0 > p1:
        inv += 1
    if p0 > p2:
        inv += 1
    if p0 > p3:
        inv += 1
    if p1 > p2:
        inv += 1
    if p1 > p3:
        inv += 1
    if p2 > p3:
        inv += 1
    return 1 - 2 * (inv & 1)


@njit
def contains(arr, n, x):
    for i in range(n):
        if arr[i] == x:
            return True
    return False


# ------------------------------------------------------------------ walks


@njit
def vertex_ball(M, v, out):
    """Fill ``out`` with the tetrahedra incident to ``v``; returns the count.

    Returns -1 when ``out`` overflows and -2 when ``v`` has no valid seed.
    """
    t0 = M.vtet[v]
    if t0 < 0 or M.tets[t0, 0] < 0 or not tet_has(M, t0, v):
        return -2
    out[0] = t0
    n = 1
    i = 0
    while i < n:
        t = out[i]
        i += 1
        for j in range(4):
            if M.tets[t, j] == v:
                continue
            nb = M.adj[t, j]
            if nb < 0:
                continue
            if contains(out, n, nb):
                continue
            if n >= out.shape[0]:
                return -1
            out[n] = nb
            n += 1
    return n


@njit
def ball_vertices(M, v, ball, nball, out):
    """Distinct vertices adjacent to ``v`` over its ball; returns the count."""
    n = 0
    for i in range(nball):
        t = ball[i]
        for j in range(4):
            w = M.tets[t, j]
            if w != v and not contains(out, n, w):
                if n >= out.shape[0]:
                    return -1
                out[n] = w
                n += 1
    return n


@njit
def other_two(M, t, a, b):
    """The two vertices of ``t`` besides ``a`` and ``b``, ordered so (a, b, x, y) is positive."""
    ia = -1
    ib = -1
    for j in range(4):
        if M.tets[t, j] == a:
            ia = j
        elif M.tets[t, j] == b:
            ib = j
    ix = -1
    iy = -1
    for j in range(4):
        if j != ia and j != ib:
            if ix < 0:
                ix = j
            else:
                iy = j
    if perm_parity(ia, ib, ix, iy) < 0:
        ix, iy = iy, ix
    return M.tets[t, ix], M.tets[t, iy], ix, iy


@njit
def edge_shell(M, a, b, t0, shell, ring):
    """Ordered shell of edge ``ab`` starting from a tetrahedron ``t0`` holding it.

    On return tetrahedron ``shell[i]`` is (a, b, ring[i], ring[i+1]) up to
    an even permutation.  Returns ``(count, is_open, m_first, m_last)``:
    closed shells have ``count`` ring vertices, open (boundary) shells have
    ``count + 1`` and report the markers of boundary faces (a, b, ring[0])
    and (a, b, ring[count]).  ``count`` is -1 on overflow.
    """
    # walk backwards until the boundary or back to t0
    t = t0
    is_open = False
    for _ in range(MAX_SHELL + 2):
        x, y, ix, iy = other_two(M, t, a, b)
        nb = M.adj[t, iy]  # face (a, b, x) lies opposite y
        if nb < 0:
            is_open = True
            break
        t = nb
        if t == t0:
            break
    start = t
    m_first = -1
    m_last = -1
    n = 0
    t = start
    while True:
        if n >= shell.shape[0] or n + 1 >= ring.shape[0]:
            return -1, False, -1, -1
        x, y, ix, iy = other_two(M, t, a, b)
        shell[n] = t
        ring[n] = x
        if n == 0 and is_open:
            m_first = -1 - M.adj[t, iy]
        n += 1
        nb = M.adj[t, ix]  # face (a, b, y) lies opposite x
        if nb < 0:
            ring[n] = y
            m_last = -1 - nb
            break
        t = nb
        if t == start:
            break
    return n, is_open, m_first, m_last


@njit
def find_edge_tet(M, ball, nball, b):
    for i in range(nball):
        if tet_has(M, ball[i], b):
            return ball[i]
    return -1


# ------------------------------------------------------------- allocation


@njit
def pool_pop(pool, pool_n, wid):
    n = pool_n[wid]
    if n == 0:
        return -1
    pool_n[wid] = n - 1
    return pool[wid, n - 1]


@njit
def pool_push(pool, pool_n, wid, s):
    n = pool_n[wid]
    if n < pool.shape[1]:
        pool[wid, n] = s
        pool_n[wid] = n + 1


# --------------------------------------------------------- cavity rewrite


@njit
def _inherit_marker(fa, fb, fc, bfaces, bmark, nb):
    """Marker of the consumed boundary face sharing the most vertices (>= 2)."""
    best = 1
    mark = -1
    ambiguous = False
    for i in range(nb):
        s = 0
        for k in range(3):
            w = bfaces[i, k]
            if w == fa or w == fb or w == fc:
                s += 1
        if s > best:
            best = s
            mark = bmark[i]
            ambiguous = False
        elif s == best and s >= 2 and bmark[i] != mark:
            ambiguous = True
    if ambiguous:
        return -1
    return mark


@njit
def replace_cavity(M, old, nold, new, newref, nnew, tpool, tpool_n, wid):
    """Replace tetrahedra ``old[:nold]`` by ``new[:nnew]`` (vertex quadruples).

    The caller holds claims on every vertex involved and has verified the
    geometry.  Faces are matched by vertex triple: new against new
    (interior), then against the cavity's external faces.  A new face left
    unmatched, or an external face no longer covered, becomes boundary with
    the marker of the consumed boundary face it overlaps most.  Everything is
    validated before the first write; returns False (mesh untouched) on
    any inconsistency or when the worker pool has no free slots.
    """
    nf_new = 4 * nnew
    # external faces of the cavity
    ext_key = np.empty(4 * nold, dtype=np.int64)
    ext_nb = np.empty(4 * nold, dtype=np.int64)
    ext_loc = np.empty(4 * nold, dtype=np.int64)
    ext_tri = np.empty((4 * nold, 3), dtype=np.int64)
    bfaces = np.empty((4 * nold, 3), dtype=np.int64)
    bmark = np.empty(4 * nold, dtype=np.int64)
    n_ext = 0
    n_b = 0
    for i in range(nold):
        t = old[i]
        for j in range(4):
            nb = M.adj[t, j]
            if nb >= 0 and contains(old, nold, nb):
                continue
            fa = M.tets[t, FACES[j, 0]]
            fb = M.tets[t, FACES[j, 1]]
            fc = M.tets[t, FACES[j, 2]]
            ext_key[n_ext] = face_key(fa, fb, fc)
            ext_nb[n_ext] = nb
            ext_tri[n_ext, 0] = fa
            ext_tri[n_ext, 1] = fb
            ext_tri[n_ext, 2] = fc
            if nb >= 0:
                loc = -1
                for l in range(4):
                    if M.adj[nb, l] == t:
                        loc = l
                if loc < 0:
                    return False
                ext_loc[n_ext] = loc
            else:
                ext_loc[n_ext] = -1
                bfaces[n_b, 0] = fa
                bfaces[n_b, 1] = fb
                bfaces[n_b, 2] = fc
                bmark[n_b] = -1 - nb
                n_b += 1
            n_ext += 1

    ntot = nf_new + n_ext
    keys = np.empty(ntot, dtype=np.int64)
    for k in range(nnew):
        a0 = new[k, 0]
        a1 = new[k, 1]
        a2 = new[k, 2]
        a3 = new[k, 3]
        if a0 == a1 or a0 == a2 or a0 == a3 or a1 == a2 or a1 == a3 or a2 == a3:
            return False
        for j in range(4):
            keys[4 * k + j] = face_key(new[k, FACES[j, 0]], new[k, FACES[j, 1]], new[k, FACES[j, 2]])
    for e in range(n_ext):
        keys[nf_new + e] = ext_key[e]
    order = np.argsort(keys, kind="mergesort")

    # resolved adjacency of new faces (index into new list, or code)
    # link_new[f] >= 0: partner new face id; link_ext[f] >= 0: external entry id
    link_new = np.full(nf_new, -1, dtype=np.int64)
    link_ext = np.full(nf_new, -1, dtype=np.int64)
    new_bmark = np.full(nf_new, -1, dtype=np.int64)
    ext_used = np.zeros(n_ext, dtype=np.bool_)
    ext_newmark = np.full(n_ext, -1, dtype=np.int64)
    i = 0
    while i < ntot:
        j = i + 1
        while j < ntot and keys[order[j]] == keys[order[i]]:
            j += 1
        run = j - i
        if run > 2:
            return False
        if run == 2:
            f = order[i]
            g = order[i + 1]
            if f >= nf_new and g >= nf_new:
                return False
            if f >= nf_new:
                f, g = g, f
            if g < nf_new:
                link_new[f] = g
                link_new[g] = f
            else:
                link_ext[f] = g - nf_new
                ext_used[g - nf_new] = True
        else:
            f = order[i]
            if f < nf_new:
                k = f // 4
                jj = f % 4
                m = _inherit_marker(new[k, FACES[jj, 0]], new[k, FACES[jj, 1]], new[k, FACES[jj, 2]],
                                    bfaces, bmark, n_b)
                if m < 0:
                    return False
                new_bmark[f] = m
            else:
                e = f - nf_new
                if ext_nb[e] >= 0:
                    m = _inherit_marker(ext_tri[e, 0], ext_tri[e, 1], ext_tri[e, 2], bfaces, bmark, n_b)
                    if m < 0:
                        return False
                    ext_newmark[e] = m
        i = j

    # slots: reuse old ones first, then the worker pool
    slots = np.empty(nnew, dtype=np.int64)
    need = nnew - nold
    if need > tpool_n[wid]:
        return False
    for k in range(nnew):
        if k < nold:
            slots[k] = old[k]
        else:
            slots[k] = pool_pop(tpool, tpool_n, wid)

    # ---- commit
    for k in range(nnew):
        s = slots[k]
        for j in range(4):
            M.tets[s, j] = new[k, j]
        M.tref[s] = newref[k]
        M.cand_kind[s] = 0
        M.active[s] = 1
    for k in range(nnew):
        s = slots[k]
        for j in range(4):
            f = 4 * k + j
            if link_new[f] >= 0:
                M.adj[s, j] = slots[link_new[f] // 4]
            elif link_ext[f] >= 0:
                e = link_ext[f]
                nb = ext_nb[e]
                M.adj[s, j] = nb
                if nb >= 0:
                    M.adj[nb, ext_loc[e]] = s
                    M.active[nb] = 1
            else:
                M.adj[s, j] = -1 - new_bmark[f]
    for e in range(n_ext):
        if not ext_used[e] and ext_nb[e] >= 0:
            nb = ext_nb[e]
            M.adj[nb, ext_loc[e]] = -1 - ext_newmark[e]
            M.active[nb] = 1
    for k in range(nnew, nold):
        s = old[k]
        for j in range(4):
            M.tets[s, j] = -1
            M.adj[s, j] = -1
        M.cand_kind[s] = 0
        M.active[s] = 0
        pool_push(tpool, tpool_n, wid, s)
    for k in range(nnew):
        s = slots[k]
        for j in range(4):
            M.vtet[new[k, j]] = s
    return True
