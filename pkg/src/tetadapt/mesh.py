"""Tetrahedral mesh container, construction, validation and claim substrate."""
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import topo
from ._jit import cas, njit
from .metric import batch_log
from .predicates import orient3d

INTERIOR, SURFACE, RIDGE, CORNER = 0, 1, 2, 3
DEAD = -1

MeshArrays = namedtuple(
    "MeshArrays",
    ["xyz", "met", "logm", "vcls", "vref", "vtet", "claim",
     "tets", "adj", "tref", "active", "cand_kind", "cand_ent", "cand_xyz", "cand_logm", "tlock"],
)


class MeshError(ValueError):
    """Raised when input connectivity cannot form a valid mesh."""


@dataclass
class Cavity:
    """Ball of a vertex: incident tetrahedra, ring vertices and boundary faces."""

    center: int
    vertices: np.ndarray
    tets: np.ndarray
    surface_faces: list = field(default_factory=list)  # (tet, local face, marker)


def _alloc(nvcap, ntcap):
    return MeshArrays(
        xyz=np.zeros((nvcap, 3)),
        met=np.zeros((nvcap, 6)),
        logm=np.zeros((nvcap, 6)),
        vcls=np.full(nvcap, DEAD, dtype=np.int64),
        vref=np.zeros(nvcap, dtype=np.int64),
        vtet=np.full(nvcap, -1, dtype=np.int64),
        claim=np.full(nvcap, topo.FREE, dtype=np.int64),
        tets=np.full((ntcap, 4), -1, dtype=np.int64),
        adj=np.full((ntcap, 4), -1, dtype=np.int64),
        tref=np.zeros(ntcap, dtype=np.int64),
        active=np.zeros(ntcap, dtype=np.int8),
        cand_kind=np.zeros(ntcap, dtype=np.int64),
        cand_ent=np.zeros(ntcap, dtype=np.int64),
        cand_xyz=np.zeros((ntcap, 3)),
        cand_logm=np.zeros((ntcap, 6)),
        tlock=np.full(ntcap, topo.FREE, dtype=np.int64),
    )


class Mesh:
    """Element-based tetrahedral mesh with tombstoned slots.

    Vertex ``v`` is alive iff ``vcls[v] >= 0``; tetrahedron ``t`` is alive iff
    ``tets[t, 0] >= 0``.  Slots are recycled through per-worker pools during a
    pass and squeezed out by :meth:`compact` between passes.
    """

    def __init__(self, arrays: MeshArrays):
        self.a = arrays

    # -- sizes ------------------------------------------------------------
    @property
    def vertex_capacity(self):
        return len(self.a.xyz)

    @property
    def tet_capacity(self):
        return len(self.a.tets)

    def alive_vertices(self):
        return np.flatnonzero(self.a.vcls >= 0)

    def alive_tets(self):
        return np.flatnonzero(self.a.tets[:, 0] >= 0)

    @property
    def n_vertices(self):
        return int(np.count_nonzero(self.a.vcls >= 0))

    @property
    def n_tets(self):
        return int(np.count_nonzero(self.a.tets[:, 0] >= 0))

    def copy(self):
        return Mesh(MeshArrays(*[x.copy() for x in self.a]))

    # -- metric -------------------------------------------------------------
    def set_metric(self, metrics, logs=None):
        """Assign per-vertex metrics for the alive vertices (in index order)."""
        idx = self.alive_vertices()
        metrics = np.asarray(metrics, dtype=np.float64)
        if metrics.shape != (len(idx), 6):
            raise ValueError(f"expected ({len(idx)}, 6) metric array, got {metrics.shape}")
        self.a.met[idx] = metrics
        self.a.logm[idx] = batch_log(metrics) if logs is None else logs

    def metrics(self):
        return self.a.met[self.alive_vertices()]

    # -- derived boundary entities -----------------------------------------
    def surface_triangles(self):
        """Boundary faces as (n, 3) outward-oriented vertex triples and markers."""
        t, j = np.nonzero(self.a.adj < 0)
        alive = self.a.tets[t, 0] >= 0
        t, j = t[alive], j[alive]
        tri = self.a.tets[t[:, None], topo.FACES[j]]
        marks = -1 - self.a.adj[t, j]
        return tri, marks

    def ridge_edges(self):
        """Surface edges between two different markers, as (n, 2) and marker pairs."""
        tri, marks = self.surface_triangles()
        return _ridges_from_surface(tri, marks)

    # -- structural maintenance --------------------------------------------
    def ensure_capacity(self, free_vertices, free_tets):
        """Grow storage so that at least the requested free slots exist."""
        nv_free = self.vertex_capacity - self.n_vertices
        nt_free = self.tet_capacity - self.n_tets
        if nv_free >= free_vertices and nt_free >= free_tets:
            return
        nvcap = max(self.vertex_capacity, self.n_vertices + free_vertices)
        ntcap = max(self.tet_capacity, self.n_tets + free_tets)
        if nvcap > topo.MAX_VERTICES:
            raise MeshError(f"vertex capacity {nvcap} exceeds {topo.MAX_VERTICES}")
        new = _alloc(nvcap, ntcap)
        for name in MeshArrays._fields:
            src = getattr(self.a, name)
            getattr(new, name)[: len(src)] = src
        self.a = new

    def free_slots(self):
        """Dead vertex and tetrahedron slots, ascending."""
        return np.flatnonzero(self.a.vcls < 0), np.flatnonzero(self.a.tets[:, 0] < 0)

    def compact(self):
        """Squeeze out dead slots and renumber; returns (vertex map, tet map)."""
        a = self.a
        vi = self.alive_vertices()
        ti = self.alive_tets()
        vmap = np.full(len(a.xyz), -1, dtype=np.int64)
        vmap[vi] = np.arange(len(vi))
        tmap = np.full(len(a.tets), -1, dtype=np.int64)
        tmap[ti] = np.arange(len(ti))
        new = _alloc(max(len(vi), 1), max(len(ti), 1))
        new.xyz[: len(vi)] = a.xyz[vi]
        new.met[: len(vi)] = a.met[vi]
        new.logm[: len(vi)] = a.logm[vi]
        new.vcls[: len(vi)] = a.vcls[vi]
        new.vref[: len(vi)] = a.vref[vi]
        new.vtet[: len(vi)] = tmap[a.vtet[vi]]
        new.tets[: len(ti)] = vmap[a.tets[ti]]
        adj = a.adj[ti]
        new.adj[: len(ti)] = np.where(adj >= 0, tmap[np.maximum(adj, 0)], adj)
        new.tref[: len(ti)] = a.tref[ti]
        new.active[: len(ti)] = a.active[ti]
        self.a = new
        return vmap, tmap

    def set_active(self, value=1):
        self.a.active[:] = 0
        self.a.active[self.alive_tets()] = value

    def tables(self):
        """Compact (vertices, vertex refs, tets, tet refs, triangles, markers) tables."""
        m = self.copy()
        m.compact()
        nv, nt = m.n_vertices, m.n_tets
        tri, marks = m.surface_triangles()
        order = np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0], marks))
        return (m.a.xyz[:nv].copy(), m.a.vref[:nv].copy(), m.a.tets[:nt].copy(),
                m.a.tref[:nt].copy(), tri[order], marks[order])


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _face_keys(tri):
    s = np.sort(tri, axis=1)
    return (s[:, 0] << (2 * topo.KEY_BITS)) | (s[:, 1] << topo.KEY_BITS) | s[:, 2]


def _ridges_from_surface(tri, marks):
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    m = np.concatenate([marks, marks, marks])
    e = np.sort(e, axis=1)
    key = (e[:, 0] << topo.KEY_BITS) | e[:, 1]
    order = np.argsort(key, kind="stable")
    key, e, m = key[order], e[order], m[order]
    first = np.ones(len(key), dtype=bool)
    first[1:] = key[1:] != key[:-1]
    starts = np.flatnonzero(first)
    counts = np.diff(np.append(starts, len(key)))
    pair = starts[counts == 2]
    diff = m[pair] != m[pair + 1]
    sel = pair[diff]
    marks2 = np.sort(np.stack([m[sel], m[sel + 1]], axis=1), axis=1)
    return e[sel], marks2


def classify_vertices(nv, tri, marks):
    """Interior / surface / ridge / corner classification from the boundary.

    Corners are vertices with three or more incident markers or whose ridge
    valence differs from two (ridge end points).
    """
    cls = np.zeros(nv, dtype=np.int64)
    ref = np.zeros(nv, dtype=np.int64)
    if len(tri) == 0:
        return cls, ref
    cls[tri.ravel()] = SURFACE
    ref[tri.ravel()] = np.repeat(marks, 3)
    ridges, _ = _ridges_from_surface(tri, marks)
    rval = np.bincount(ridges.ravel(), minlength=nv) if len(ridges) else np.zeros(nv, dtype=np.int64)
    vm = np.unique(np.stack([tri.ravel(), np.repeat(marks, 3)], axis=1), axis=0)
    nmark = np.bincount(vm[:, 0], minlength=nv)
    cls[rval > 0] = RIDGE
    cls[(nmark >= 3) | ((rval > 0) & (rval != 2))] = CORNER
    return cls, ref


def build_mesh(vertices, tets, surface_triangles=None, surface_markers=None,
               vertex_refs=None, tet_refs=None, metrics=None) -> Mesh:
    """Build a mesh with adjacency and boundary classification.

    Parameters
    ----------
    vertices : (nv, 3) array
    tets : (nt, 4) int array; negatively oriented elements are flipped.
    surface_triangles : (ns, 3) int array, optional
        Boundary triangles; every boundary face must be listed.  When omitted
        all boundary faces receive marker 1.
    surface_markers : (ns,) int array, optional
    metrics : (nv, 6) array, optional
        Per-vertex metric coefficients; identity by default.

    Raises
    ------
    MeshError
        On out-of-range indices, degenerate or non-manifold elements, or
        boundary faces without a surface triangle.
    """
    xyz = np.ascontiguousarray(vertices, dtype=np.float64)
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    nv, nt = len(xyz), len(tets)
    if xyz.ndim != 2 or xyz.shape[1] != 3:
        raise MeshError("vertices must be an (n, 3) array")
    if nv >= topo.MAX_VERTICES:
        raise MeshError(f"too many vertices ({nv}); limit is {topo.MAX_VERTICES - 1}")
    bad = np.flatnonzero((tets < 0).any(axis=1) | (tets >= nv).any(axis=1))
    if len(bad):
        raise MeshError(f"tetrahedron {bad[0]} references a vertex index out of range")
    for t in range(nt):
        if len(set(tets[t].tolist())) != 4:
            raise MeshError(f"tetrahedron {t} repeats a vertex")
        o = orient3d(xyz[tets[t, 0]], xyz[tets[t, 1]], xyz[tets[t, 2]], xyz[tets[t, 3]])
        if o == 0.0:
            raise MeshError(f"tetrahedron {t} is degenerate (zero volume)")
        if o < 0.0:
            tets[t, [2, 3]] = tets[t, [3, 2]]

    # face matching
    faces = tets[:, topo.FACES].reshape(-1, 3)
    keys = _face_keys(faces)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    first = np.ones(len(sk), dtype=bool)
    first[1:] = sk[1:] != sk[:-1]
    starts = np.flatnonzero(first)
    counts = np.diff(np.append(starts, len(sk)))
    if np.any(counts > 2):
        f = order[starts[np.argmax(counts > 2)]]
        raise MeshError(f"face of tetrahedron {f // 4} is shared by more than two tetrahedra")
    adj = np.full((nt, 4), -1, dtype=np.int64)
    pairs = starts[counts == 2]
    f1, f2 = order[pairs], order[pairs + 1]
    adj[f1 // 4, f1 % 4] = f2 // 4
    adj[f2 // 4, f2 % 4] = f1 // 4
    bfaces = order[starts[counts == 1]]

    # boundary markers
    if surface_triangles is None:
        adj[bfaces // 4, bfaces % 4] = -2
    else:
        st = np.array(surface_triangles, dtype=np.int64).reshape(-1, 3)
        sm = (np.ones(len(st), dtype=np.int64) if surface_markers is None
              else np.asarray(surface_markers, dtype=np.int64))
        if len(st) and ((st < 0).any() or (st >= nv).any()):
            raise MeshError("surface triangle references a vertex index out of range")
        if np.any(sm < 0):
            raise MeshError("surface markers must be non-negative")
        lookup = dict(zip(_face_keys(st).tolist(), sm.tolist())) if len(st) else {}
        bkeys = keys[bfaces]
        for f, k in zip(bfaces.tolist(), bkeys.tolist()):
            if k not in lookup:
                raise MeshError(f"boundary face {f % 4} of tetrahedron {f // 4} has no surface triangle")
            adj[f // 4, f % 4] = -1 - lookup.pop(k)
        if lookup:
            raise MeshError(f"{len(lookup)} surface triangle(s) are not boundary faces of the mesh")

    a = _alloc(nv, nt)
    a.xyz[:] = xyz
    a.tets[:] = tets
    a.adj[:] = adj
    a.tref[:] = 0 if tet_refs is None else np.asarray(tet_refs, dtype=np.int64)
    a.active[:] = 1
    a.vtet[tets.ravel()] = np.repeat(np.arange(nt), 4)
    if np.any(a.vtet < 0):
        raise MeshError(f"vertex {int(np.argmax(a.vtet < 0))} is not referenced by any tetrahedron")
    mesh = Mesh(a)
    tri, marks = mesh.surface_triangles()
    cls, ref = classify_vertices(nv, tri, marks)
    a.vcls[:] = cls
    a.vref[:] = ref
    if vertex_refs is not None:
        vr = np.asarray(vertex_refs, dtype=np.int64)
        a.vref[cls == INTERIOR] = vr[cls == INTERIOR]
    if metrics is None:
        a.met[:] = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0]
        a.logm[:] = 0.0
    else:
        mesh.set_metric(metrics)
    return mesh


def cube_mesh(n=3, lo=0.0, hi=1.0):
    """Structured mesh of a cube: ``n`` cells per side, six Kuhn tetrahedra per cell.

    Boundary markers 1..6 are assigned to faces x=lo, x=hi, y=lo, y=hi,
    z=lo, z=hi.  ``n=3`` gives the 64-vertex benchmark starter mesh.
    """
    g = np.linspace(lo, hi, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    xyz = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    # the six paths from corner 000 to 111 through the unit cube
    paths = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for p in paths:
                    c = [i, j, k]
                    verts = [vid(*c)]
                    for axis in p:
                        c[axis] += 1
                        verts.append(vid(*c))
                    tets.append(verts)
    tets = np.array(tets, dtype=np.int64)
    # boundary triangles with markers
    faces = tets[:, topo.FACES].reshape(-1, 3)
    keys = _face_keys(faces)
    uniq, cnt = np.unique(keys, return_counts=True)
    bkeys = set(uniq[cnt == 1].tolist())
    tri, marks = [], []
    for f, k in zip(faces, keys.tolist()):
        if k not in bkeys:
            continue
        p = xyz[f]
        for axis in range(3):
            if np.all(p[:, axis] == lo):
                marks.append(2 * axis + 1)
                break
            if np.all(p[:, axis] == hi):
                marks.append(2 * axis + 2)
                break
        tri.append(f)
    return build_mesh(xyz, tets, np.array(tri), np.array(marks))


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def vertex_ball(mesh: Mesh, v: int) -> Cavity:
    """Incident tetrahedra, adjacent vertices and boundary faces of ``v`` (ascending)."""
    a = mesh.a
    if v < 0 or v >= mesh.vertex_capacity or a.vcls[v] < 0:
        raise MeshError(f"vertex {v} is not alive")
    buf = np.empty(topo.MAX_BALL, dtype=np.int64)
    n = topo.vertex_ball(a, v, buf)
    if n < 0:
        raise MeshError(f"ball of vertex {v} could not be traversed (code {n})")
    tets = np.sort(buf[:n])
    verts = np.unique(a.tets[tets])
    verts = verts[verts != v]
    sfaces = []
    for t in tets.tolist():
        for j in range(4):
            if a.tets[t, j] != v and a.adj[t, j] < 0:
                sfaces.append((t, j, int(-1 - a.adj[t, j])))
    return Cavity(int(v), verts, tets, sfaces)


def try_claim(mesh: Mesh, vertices, worker: int) -> bool:
    """Claim all ``vertices`` for ``worker`` in ascending order, or none of them."""
    vs = np.unique(np.asarray(vertices, dtype=np.int64))
    return bool(_try_claim(mesh.a.claim, vs, worker))


def release(mesh: Mesh, vertices, worker: int):
    vs = np.unique(np.asarray(vertices, dtype=np.int64))
    _release(mesh.a.claim, vs, worker)


@njit
def _try_claim(claim, vs, wid):
    for i in range(len(vs)):
        if cas(claim, vs[i], topo.FREE, wid) != topo.FREE:
            for k in range(i):
                cas(claim, vs[k], wid, topo.FREE)
            return False
    return True


@njit
def _release(claim, vs, wid):
    for i in range(len(vs)):
        cas(claim, vs[i], wid, topo.FREE)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@njit
def _orientation_signs(xyz, tets, ids):
    out = np.empty(len(ids))
    for i in range(len(ids)):
        t = ids[i]
        out[i] = orient3d(xyz[tets[t, 0]], xyz[tets[t, 1]], xyz[tets[t, 2]], xyz[tets[t, 3]])
    return out


def validate(mesh: Mesh, max_report=20):
    """Check every mesh invariant; returns a list of violation strings (empty if valid)."""
    a = mesh.a
    rep = []

    def add(msg):
        if len(rep) < max_report:
            rep.append(msg)

    ti = mesh.alive_tets()
    T = a.tets[ti]
    nvcap = mesh.vertex_capacity
    if len(ti) == 0:
        return ["mesh has no tetrahedra"]
    if np.any(T < 0) or np.any(T >= nvcap):
        add("tetrahedron references an out-of-range vertex")
        return rep
    dead_ref = a.vcls[T] < 0
    for t in ti[dead_ref.any(axis=1)][:5]:
        add(f"tetrahedron {t} references a dead vertex")
    s = np.sort(T, axis=1)
    for t in ti[(s[:, 1:] == s[:, :-1]).any(axis=1)][:5]:
        add(f"tetrahedron {t} repeats a vertex")
    o = _orientation_signs(a.xyz, a.tets, ti)
    for t in ti[o <= 0][:10]:
        add(f"tetrahedron {t} is not positively oriented")

    # adjacency symmetry and face agreement
    A = a.adj[ti]
    tt, jj = np.nonzero(A >= 0)
    src = ti[tt]
    nb = A[tt, jj]
    ok_nb = (nb < len(a.tets))
    ok_nb[ok_nb] &= a.tets[nb[ok_nb], 0] >= 0
    for t, j in zip(src[~ok_nb][:5], jj[~ok_nb][:5]):
        add(f"face {j} of tetrahedron {t} links to a dead or invalid neighbour")
    src, jj, nb = src[ok_nb], jj[ok_nb], nb[ok_nb]
    back = (a.adj[nb] == src[:, None]).sum(axis=1)
    for t, j in zip(src[back != 1][:5], jj[back != 1][:5]):
        add(f"face {j} of tetrahedron {t}: neighbour link is not symmetric")
    fk = _face_keys(a.tets[src[:, None], topo.FACES[jj]])
    nloc = np.argmax(a.adj[nb] == src[:, None], axis=1)
    fk2 = _face_keys(a.tets[nb[:, None], topo.FACES[nloc]])
    bad = (fk != fk2) & (back == 1)
    for t, j in zip(src[bad][:5], jj[bad][:5]):
        add(f"face {j} of tetrahedron {t} does not match its neighbour's face")

    # each face used once (boundary) or twice (interior)
    keys = _face_keys(T[:, topo.FACES].reshape(-1, 3))
    _, cnt = np.unique(keys, return_counts=True)
    if np.any(cnt > 2):
        add(f"{int(np.sum(cnt > 2))} face(s) shared by more than two tetrahedra")
    isb = (A < 0).ravel()
    kb = keys[isb]
    ki = keys[~isb]
    ub, cb = np.unique(kb, return_counts=True)
    if np.any(cb > 1):
        add("a boundary face appears more than once")
    if len(np.intersect1d(ub, ki)):
        add("a boundary face is also used as an interior face")

    # watertight surface
    tri, marks = mesh.surface_triangles()
    if len(tri):
        e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        ek = (e[:, 0] << topo.KEY_BITS) | e[:, 1]
        _, ec = np.unique(ek, return_counts=True)
        if np.any(ec != 2):
            add(f"surface is not watertight: {int(np.sum(ec != 2))} edge(s) not bounded by two triangles")
        # directed edges must pair up (consistent outward orientation)
        d = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        fwd = (d[:, 0] << topo.KEY_BITS) | d[:, 1]
        rev = (d[:, 1] << topo.KEY_BITS) | d[:, 0]
        if not np.array_equal(np.sort(fwd), np.sort(rev)):
            add("surface orientation is inconsistent")

        # a tangled (folded) mesh covers part of the domain twice: the element
        # volumes no longer add up to the volume enclosed by the surface
        c = a.xyz[T[0, 0]]
        p = a.xyz[T] - c
        vt = np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))
        q = a.xyz[tri] - c
        vs = np.einsum("ij,ij->i", q[:, 0], np.cross(q[:, 1], q[:, 2]))
        if abs(vt.sum() - vs.sum()) > 1e-9 * np.abs(vt).sum():
            add("element volumes do not add up to the enclosed volume (tangled mesh)")

    # vertex consistency
    vi = mesh.alive_vertices()
    used = np.zeros(nvcap, dtype=bool)
    used[T.ravel()] = True
    for v in vi[~used[vi]][:5]:
        add(f"vertex {v} is alive but not referenced by any tetrahedron")
    vt = a.vtet[vi]
    okt = (vt >= 0) & (vt < len(a.tets))
    okt[okt] &= (a.tets[vt[okt]] == vi[okt, None]).any(axis=1)
    for v in vi[~okt][:5]:
        add(f"vertex {v} has a stale incident-tetrahedron link")
    onsurf = np.zeros(nvcap, dtype=bool)
    if len(tri):
        onsurf[tri.ravel()] = True
    for v in vi[(a.vcls[vi] >= SURFACE) != onsurf[vi]][:5]:
        add(f"vertex {v} classification disagrees with surface incidence")
    if np.any(a.claim[vi] != topo.FREE):
        add(f"{int(np.sum(a.claim[vi] != topo.FREE))} vertex claim(s) not released")
    return rep
