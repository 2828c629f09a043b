"""Metric fields for adaptation.

Analytic benchmark functions, Hessian recovery by double L2 projection,
the multiscale (Lp) metric scaled to a target complexity, size gradation,
and linear transfer of vertex data between meshes.
"""
import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from ._jit import njit
from .mesh import INTERIOR
from .metric import (_k_cholesky, _k_edge_length, _k_eig, _k_inv3, _k_to_mat, _k_from_mat,
                     dual_volumes, from_matrix, metric_complexity, tet_volumes,
                     to_matrix)
from .stats import unique_edges

FIELDS = ("sinfun3", "tanh3", "sinatan3")

H_MIN = 1e-5
H_MAX = 1.0
GRADATION_SWEEPS = 20
COMPLEXITY_TOL = 0.01

# 4-point degree-2 rule on the reference tetrahedron
_QA = 0.5854101966249685
_QB = 0.1381966011250105
QUAD_WEIGHTS = np.array([
    [_QA, _QB, _QB, _QB],
    [_QB, _QA, _QB, _QB],
    [_QB, _QB, _QA, _QB],
    [_QB, _QB, _QB, _QA],
])


# ------------------------------------------------------------ analytic fields


def _sinfun3(x, y, z):
    xyz = (x - 0.4) * (y - 0.4) * (z - 0.4)
    s = np.sin(50.0 * xyz)
    return np.where(xyz <= -math.pi / 50.0, 0.1 * s, np.where(xyz <= 2.0 * math.pi / 50.0, s, 0.1 * s))


def _tanh3(x, y, z):
    return np.tanh((x + 1.3) ** 20 * (y - 0.3) ** 9 * z)


def _sinatan3(x, y, z):
    den = np.sin(5.0 * y) - 2.0 * x * z
    with np.errstate(divide="ignore", invalid="ignore"):
        at = np.arctan(0.1 / den)
    # 0.1 / +0 is +inf already; an exact zero counts as approached from above
    at = np.where(den == 0.0, 0.5 * math.pi, at)
    return 0.1 * np.sin(50.0 * x * z) + at


_FIELD_FUNCS = {"sinfun3": _sinfun3, "tanh3": _tanh3, "sinatan3": _sinatan3}


def eval_analytic_field(field, points):
    """Evaluate an analytic benchmark field.

    Parameters
    ----------
    field : {"sinfun3", "tanh3", "sinatan3"}
    points : array_like, shape (3,) or (n, 3)

    Returns
    -------
    float or ndarray
    """
    try:
        fn = _FIELD_FUNCS[field]
    except KeyError:
        raise ValueError(f"unknown field {field!r}; choose from {FIELDS}") from None
    p = np.asarray(points, dtype=np.float64)
    out = fn(p[..., 0], p[..., 1], p[..., 2])
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------- Hessian recovery


def _compact(mesh):
    m = mesh.copy()
    m.compact()
    nv, nt = m.n_vertices, m.n_tets
    return m, m.a.xyz[:nv], m.a.tets[:nt]


def _tet_gradients(xyz, tets, values):
    """Constant gradient of the P1 interpolant of ``values`` (nv, k) on each tet."""
    x0 = xyz[tets[:, 0]]
    D = np.stack([xyz[tets[:, 1]] - x0, xyz[tets[:, 2]] - x0, xyz[tets[:, 3]] - x0], axis=1)
    f0 = values[tets[:, 0]]
    rhs = np.stack([values[tets[:, 1]] - f0, values[tets[:, 2]] - f0, values[tets[:, 3]] - f0], axis=1)
    return np.linalg.solve(D, rhs)


def _project(tets, vol, per_tet, nv):
    """Volume-weighted average of per-tet quantities onto the vertices."""
    shape = per_tet.shape[1:]
    acc = np.zeros((nv,) + shape)
    w = np.zeros(nv)
    flat = per_tet * vol.reshape((-1,) + (1,) * len(shape))
    for k in range(4):
        np.add.at(acc, tets[:, k], flat)
        np.add.at(w, tets[:, k], vol)
    if np.any(w <= 0.0):
        raise ValueError("vertex with zero-volume incident set")
    return acc / w.reshape((-1,) + (1,) * len(shape))


def _boundary_gradients(xyz, tets, f, vertices):
    """Gradients at ``vertices`` from a least-squares quadratic fit over the 2-ring.

    The volume-weighted average of tet gradients is only first-order
    accurate on the boundary, which then spoils the next layer of Hessians.
    """
    edges = unique_edges(tets)
    n = len(xyz)
    A = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    A = A + A.T
    A2 = (A + A @ A).tocsr()
    out = np.zeros((len(vertices), 3))
    for k, v in enumerate(vertices):
        nb = A2.indices[A2.indptr[v]:A2.indptr[v + 1]]
        nb = nb[nb != v]
        d = xyz[nb] - xyz[v]
        X = np.column_stack([d, d * d, d[:, [0]] * d[:, [1]], d[:, [0]] * d[:, [2]], d[:, [1]] * d[:, [2]]])
        coef, *_ = np.linalg.lstsq(X, f[nb] - f[v], rcond=None)
        out[k] = coef[:3]
    return out


def reconstruct_hessian(mesh, scalars):
    """Recover per-vertex Hessians of a P1 field by double L2 projection.

    Gradients are projected to the vertices, differentiated again and
    projected once more.  On boundary vertices, where the projection is
    one-sided, the gradient comes from a local quadratic fit instead and
    the Hessian is copied from the nearest interior vertex.

    Returns
    -------
    ndarray, shape (n_vertices, 3, 3)
        Symmetric matrices in alive-vertex order.
    """
    m, xyz, tets = _compact(mesh)
    f = np.asarray(scalars, dtype=np.float64)
    nv = len(xyz)
    if f.shape != (nv,):
        raise ValueError(f"expected {nv} scalars, got shape {f.shape}")
    vol = np.abs(tet_volumes(xyz, tets))
    if np.any(vol <= 0.0):
        raise ValueError("degenerate tetrahedron in Hessian recovery")
    g_tet = _tet_gradients(xyz, tets, f[:, None])[..., 0]
    g_vert = _project(tets, vol, g_tet, nv)
    boundary = np.flatnonzero(m.a.vcls[:nv] != INTERIOR)
    if len(boundary):
        g_vert[boundary] = _boundary_gradients(xyz, tets, f, boundary)
    # rows: d/dx_j of gradient component i
    h_tet = np.transpose(_tet_gradients(xyz, tets, g_vert), (0, 2, 1))
    H = _project(tets, vol, h_tet, nv)
    H = 0.5 * (H + np.transpose(H, (0, 2, 1)))
    interior = np.flatnonzero(m.a.vcls[:nv] == INTERIOR)
    if len(interior) == 0:
        raise ValueError("Hessian recovery needs at least one interior vertex")
    if len(boundary):
        _, nearest = cKDTree(xyz[interior]).query(xyz[boundary])
        H[boundary] = H[interior[nearest]]
    return H


# ---------------------------------------------------------- multiscale metric


def build_multiscale_metric(hessians, mesh, complexity, p=2.0, h_min=H_MIN, h_max=H_MAX,
                            tol=COMPLEXITY_TOL):
    """Lp multiscale metric ``c det|H|^(-1/(2p+3)) |H|`` at a target complexity.

    Eigenvalues are clamped to ``[h_max**-2, h_min**-2]``; the global factor
    ``c`` is found by bisection so the clamped field's complexity lies within
    ``tol`` (relative) of ``complexity``.
    """
    if not complexity > 0:
        raise ValueError("target complexity must be positive")
    H = np.asarray(hessians, dtype=np.float64)
    if H.ndim == 2:
        H = to_matrix(H)
    if not np.all(np.isfinite(H)):
        raise ValueError("non-finite Hessian")
    _, xyz, tets = _compact(mesh)
    if len(H) != len(xyz):
        raise ValueError(f"expected {len(xyz)} Hessians, got {len(H)}")
    vol = dual_volumes(xyz, tets)
    w, V = np.linalg.eigh(0.5 * (H + np.transpose(H, (0, 2, 1))))
    lam = np.abs(w)
    top = lam.max()
    if top == 0.0:
        lam = np.ones_like(lam)
    else:
        lam = np.maximum(lam, 1e-12 * top)
    det = np.prod(lam, axis=1)
    base = lam * det[:, None] ** (-1.0 / (2.0 * p + 3.0))
    lo_e, hi_e = h_max ** -2, h_min ** -2

    def field(logc):
        return np.clip(math.exp(logc) * base, lo_e, hi_e)

    def comp(logc):
        return float(np.sum(np.sqrt(np.prod(field(logc), axis=1)) * vol))

    # bracket the factor, then bisect in log space
    c0 = math.log(complexity / max(comp(0.0), 1e-300)) * 2.0 / 3.0
    lo, hi = c0 - 2.0, c0 + 2.0
    while comp(lo) > complexity and lo > -600:
        lo -= 4.0
    while comp(hi) < complexity and hi < 600:
        hi += 4.0
    logc = 0.5 * (lo + hi)
    for _ in range(200):
        logc = 0.5 * (lo + hi)
        c = comp(logc)
        if abs(c - complexity) <= 0.1 * tol * complexity:
            break
        if c < complexity:
            lo = logc
        else:
            hi = logc
    ev = field(logc)
    M = np.einsum("nij,nj,nkj->nik", V, ev, V)
    return from_matrix(M)


# ------------------------------------------------------------------ gradation


@njit
def _grade_pair(mp, mq, pp, pq, log_beta, out):
    """Intersect ``mq`` with ``mp`` relaxed by the growth factor; False if unchanged."""
    ell = _k_edge_length(pp, pq, mp, mp)
    eta = 1.0 + ell * log_beta
    s = 1.0 / (eta * eta)
    L, ok = _k_cholesky(mq)
    if not ok:
        return False
    Li, det = _k_inv3(L)
    if det == 0.0:
        return False
    B = _k_to_mat(mp) * s
    A = Li @ B @ Li.T
    a6 = np.empty(6)
    _k_from_mat(A, a6)
    w, Q = _k_eig(a6)
    if w.max() <= 1.0 + 1e-12:
        return False
    for i in range(3):
        if w[i] < 1.0:
            w[i] = 1.0
    R = L @ Q
    G = R @ np.diag(w) @ R.T
    _k_from_mat(G, out)
    return True


@njit
def _gradation_sweeps(xyz, met, edges, log_beta, max_sweeps):
    tmp = np.empty(6)
    sweeps = 0
    for it in range(max_sweeps):
        changed = 0
        for k in range(edges.shape[0]):
            p = edges[k, 0]
            q = edges[k, 1]
            if _grade_pair(met[p], met[q], xyz[p], xyz[q], log_beta, tmp):
                met[q] = tmp
                changed += 1
            if _grade_pair(met[q], met[p], xyz[q], xyz[p], log_beta, tmp):
                met[p] = tmp
                changed += 1
        sweeps += 1
        if changed == 0:
            break
    return sweeps


def apply_gradation(mesh, metrics, beta=3.0, max_sweeps=GRADATION_SWEEPS):
    """Bound size growth along edges to ``h_q <= h_p (1 + l ln beta)``.

    Repeated edge sweeps intersect each end's metric with the other end's
    metric relaxed by ``(1 + l ln beta)**-2``, where ``l`` is the edge length
    in the source metric.  Sizes never grow; a converged field is returned
    unchanged by a second call.
    """
    if not beta > 1.0:
        raise ValueError("gradation beta must exceed 1")
    _, xyz, tets = _compact(mesh)
    met = np.array(metrics, dtype=np.float64, copy=True)
    if met.shape != (len(xyz), 6):
        raise ValueError(f"expected ({len(xyz)}, 6) metrics, got {met.shape}")
    edges = unique_edges(tets)
    _gradation_sweeps(xyz, met, edges, math.log(beta), max_sweeps)
    return met


def build_graded_metric(hessians, mesh, complexity, p=2.0, beta=3.0, rounds=6, tol=COMPLEXITY_TOL):
    """Multiscale metric followed by gradation, landing at ``complexity``.

    Gradation only shrinks sizes, so it raises the complexity, by several
    times on fields with sharp layers.  The target handed to
    :func:`build_multiscale_metric` is corrected by the observed ratio until
    the graded field is within ``tol`` of ``complexity`` (or ``rounds``
    corrections were made).
    """
    _, xyz, tets = _compact(mesh)
    target = float(complexity)
    for _ in range(rounds):
        M = apply_gradation(mesh, build_multiscale_metric(hessians, mesh, target, p), beta)
        c = metric_complexity(xyz, tets, M)
        if abs(c - complexity) <= tol * complexity:
            break
        target *= complexity / c
    return M


# -------------------------------------------------------------- interpolation


@njit
def _bary(xyz, tets, t, p, out):
    x0 = xyz[tets[t, 0]]
    x1 = xyz[tets[t, 1]]
    x2 = xyz[tets[t, 2]]
    x3 = xyz[tets[t, 3]]
    d = np.empty((3, 3))
    for c in range(3):
        d[c, 0] = x1[c] - x0[c]
        d[c, 1] = x2[c] - x0[c]
        d[c, 2] = x3[c] - x0[c]
    inv, det = _k_inv3(d)
    if det == 0.0:
        out[:] = -1.0
        return
    r = p - x0
    l1 = inv[0, 0] * r[0] + inv[0, 1] * r[1] + inv[0, 2] * r[2]
    l2 = inv[1, 0] * r[0] + inv[1, 1] * r[1] + inv[1, 2] * r[2]
    l3 = inv[2, 0] * r[0] + inv[2, 1] * r[1] + inv[2, 2] * r[2]
    out[0] = 1.0 - l1 - l2 - l3
    out[1] = l1
    out[2] = l2
    out[3] = l3


@njit
def _locate_all(xyz, tets, adj, points, tol, found, bary):
    """Walk to the tet holding each point; -1 where the walk fails."""
    b = np.empty(4)
    start = 0
    nt = tets.shape[0]
    for i in range(points.shape[0]):
        p = points[i]
        t = start
        found[i] = -1
        for step in range(4 * nt + 100):
            _bary(xyz, tets, t, p, b)
            j = np.argmin(b)
            if b[j] >= -tol:
                found[i] = t
                bary[i] = b
                start = t
                break
            nb = adj[t, j]
            if nb < 0:
                break
            t = nb
            if step > 2000:
                break


def _brute_locate(xyz, tets, p):
    x0 = xyz[tets[:, 0]]
    D = np.stack([xyz[tets[:, 1]] - x0, xyz[tets[:, 2]] - x0, xyz[tets[:, 3]] - x0], axis=2)
    l = np.linalg.solve(D, (p - x0)[:, :, None])[..., 0]
    b = np.column_stack([1.0 - l.sum(axis=1), l])
    score = b.min(axis=1)
    t = int(np.argmax(score))
    return t, b[t], float(score[t])


def interpolate_scalar(old_mesh, scalars, new_points, tol=1e-9):
    """Linear interpolation of vertex values of ``old_mesh`` at ``new_points``.

    Points are located by walking through face neighbours, falling back to
    a search over all tetrahedra.  Points outside the old domain by more
    than ``tol`` (barycentric) are clamped onto the nearest tetrahedron and
    counted in a warning.
    """
    m, xyz, tets = _compact(old_mesh)
    adj = m.a.adj[: len(tets)]
    f = np.asarray(scalars, dtype=np.float64)
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(new_points, dtype=np.float64)))
    found = np.full(len(pts), -1, dtype=np.int64)
    bary = np.zeros((len(pts), 4))
    _locate_all(xyz, tets, adj, pts, tol, found, bary)
    outside = 0
    for i in np.flatnonzero(found < 0):
        t, b, score = _brute_locate(xyz, tets, pts[i])
        if score < -tol:
            outside += 1
            b = np.clip(b, 0.0, None)
            b /= b.sum()
        found[i] = t
        bary[i] = b
    if outside:
        warnings.warn(f"{outside} point(s) outside the source mesh were clamped", RuntimeWarning,
                      stacklevel=2)
    return np.einsum("ij,ij->i", bary, f[tets[found]])


def interpolation_error(mesh, field, scalars=None, p=2.0):
    """Lp norm of (P1 interpolant - analytic field) by 4-point quadrature per tet.

    ``field`` is a benchmark field name or a vectorized callable on (n, 3)
    points.
    """
    _, xyz, tets = _compact(mesh)
    if callable(field):
        evaluate = field
    else:
        def evaluate(q):
            return eval_analytic_field(field, q)
    if scalars is None:
        scalars = evaluate(xyz)
    f = np.asarray(scalars, dtype=np.float64)
    vol = np.abs(tet_volumes(xyz, tets))
    corners = xyz[tets]
    fv = f[tets]
    total = 0.0
    for w in QUAD_WEIGHTS:
        q = np.einsum("k,nkc->nc", w, corners)
        diff = fv @ w - evaluate(q)
        total += np.sum(0.25 * vol * np.abs(diff) ** p)
    return float(total ** (1.0 / p))
