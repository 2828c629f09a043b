"""Riemannian metric algebra and metric-aware geometric predicates.

Tensors are stored as six lower-triangle coefficients in the order
``m11, m21, m22, m31, m32, m33``.  The ``_k``-prefixed functions are JIT
kernels operating on length-6 / length-3 arrays and report failure through
their return values; the public functions validate input and raise.
Vectorised ``batch_*`` helpers use plain NumPy and serve statistics and
metric-field construction over whole meshes.
"""
import math

import numpy as np

from ._jit import njit
from .predicates import orient3d_fast

# local vertex pairs of the six tetrahedron edges
EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64)
# for each edge, the two remaining local vertices in ascending order
EDGE_OPPOSITE = np.array([[2, 3], [1, 3], [1, 2], [0, 3], [0, 2], [0, 1]], dtype=np.int64)

MEAN_RATIO_SCALE = 36.0 / 3.0 ** (1.0 / 3.0)
LENGTH_SWITCH = 1e-3
CIRCUMCENTER_MAX_COND = 1e12
SPD_MIN_EIGENVALUE = 1e-30
EXP_MAX_EIGENVALUE = 700.0


class MetricDomainError(ValueError):
    """Raised for tensors that are not symmetric positive definite."""


class MetricRangeError(OverflowError):
    """Raised when a matrix exponential would overflow."""


class DegenerateSimplexError(ValueError):
    """Raised when a simplex is too degenerate for a metric predicate."""


# --------------------------------------------------------------------------
# JIT kernels
# --------------------------------------------------------------------------

@njit
def _k_to_mat(m):
    A = np.empty((3, 3))
    A[0, 0] = m[0]
    A[1, 0] = m[1]
    A[0, 1] = m[1]
    A[1, 1] = m[2]
    A[2, 0] = m[3]
    A[0, 2] = m[3]
    A[2, 1] = m[4]
    A[1, 2] = m[4]
    A[2, 2] = m[5]
    return A


@njit
def _k_from_mat(A, out):
    out[0] = A[0, 0]
    out[1] = 0.5 * (A[1, 0] + A[0, 1])
    out[2] = A[1, 1]
    out[3] = 0.5 * (A[2, 0] + A[0, 2])
    out[4] = 0.5 * (A[2, 1] + A[1, 2])
    out[5] = A[2, 2]


@njit
def _k_eig(m):
    """Cyclic Jacobi eigendecomposition of a symmetric 6-vector tensor.

    Returns eigenvalues ``w`` and column eigenvectors ``V`` with
    ``A = V diag(w) V^T`` to roughly machine precision.
    """
    a = _k_to_mat(m)
    V = np.eye(3)
    for _ in range(60):
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        diag = a[0, 0] * a[0, 0] + a[1, 1] * a[1, 1] + a[2, 2] * a[2, 2]
        if off == 0.0 or off <= 1e-34 * diag:
            break
        for pq in range(3):
            if pq == 0:
                p, q = 0, 1
            elif pq == 1:
                p, q = 0, 2
            else:
                p, q = 1, 2
            apq = a[p, q]
            if apq == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
            if theta < 0.0:
                t = -t
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            for k in range(3):
                akp = a[k, p]
                akq = a[k, q]
                a[k, p] = c * akp - s * akq
                a[k, q] = s * akp + c * akq
            for k in range(3):
                apk = a[p, k]
                aqk = a[q, k]
                a[p, k] = c * apk - s * aqk
                a[q, k] = s * apk + c * aqk
            a[p, q] = 0.0
            a[q, p] = 0.0
            for k in range(3):
                vkp = V[k, p]
                vkq = V[k, q]
                V[k, p] = c * vkp - s * vkq
                V[k, q] = s * vkp + c * vkq
    w = np.empty(3)
    w[0] = a[0, 0]
    w[1] = a[1, 1]
    w[2] = a[2, 2]
    return w, V


@njit
def _k_recompose(w, V, out):
    for r in range(3):
        for c in range(r + 1):
            s = 0.0
            for k in range(3):
                s += V[r, k] * w[k] * V[c, k]
            if r == 0:
                out[0] = s
            elif r == 1:
                out[1 + c] = s
            else:
                out[3 + c] = s


@njit
def _k_log(m, out):
    """Matrix logarithm; returns False when ``m`` is not SPD."""
    for i in range(6):
        if not np.isfinite(m[i]):
            return False
    w, V = _k_eig(m)
    for i in range(3):
        if w[i] <= SPD_MIN_EIGENVALUE:
            return False
        w[i] = math.log(w[i])
    _k_recompose(w, V, out)
    return True


@njit
def _k_exp(lm, out):
    """Matrix exponential; returns False on overflow or non-finite input."""
    for i in range(6):
        if not np.isfinite(lm[i]):
            return False
    w, V = _k_eig(lm)
    for i in range(3):
        if w[i] > EXP_MAX_EIGENVALUE:
            return False
        w[i] = math.exp(w[i])
    _k_recompose(w, V, out)
    return True


@njit
def _k_quad(m, vx, vy, vz):
    """v^T M v."""
    return (m[0] * vx * vx + m[2] * vy * vy + m[5] * vz * vz
            + 2.0 * (m[1] * vx * vy + m[3] * vx * vz + m[4] * vy * vz))


@njit
def _k_inner(m, ux, uy, uz, vx, vy, vz):
    """u^T M v."""
    return (m[0] * ux * vx + m[2] * uy * vy + m[5] * uz * vz
            + m[1] * (ux * vy + uy * vx) + m[3] * (ux * vz + uz * vx)
            + m[4] * (uy * vz + uz * vy))


@njit
def _k_det(m):
    return (m[0] * (m[2] * m[5] - m[4] * m[4])
            - m[1] * (m[1] * m[5] - m[4] * m[3])
            + m[3] * (m[1] * m[4] - m[2] * m[3]))


@njit
def _k_log_mean_length(la, lb):
    if abs(la - lb) > LENGTH_SWITCH:
        return (la - lb) / math.log(la / lb)
    return 0.5 * (la + lb)


@njit
def _k_edge_length(pa, pb, ma, mb):
    vx = pb[0] - pa[0]
    vy = pb[1] - pa[1]
    vz = pb[2] - pa[2]
    la = math.sqrt(max(_k_quad(ma, vx, vy, vz), 0.0))
    lb = math.sqrt(max(_k_quad(mb, vx, vy, vz), 0.0))
    return _k_log_mean_length(la, lb)


@njit
def _k_mean_ratio_metric(p0, p1, p2, p3, M):
    """Mean ratio of a tetrahedron in a constant metric ``M``."""
    vol = orient3d_fast(p0, p1, p2, p3) / 6.0
    if not vol > 0.0:
        return 0.0
    detm = _k_det(M)
    if not detm > 0.0:
        return 0.0
    s = 0.0
    s += _k_quad(M, p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2])
    s += _k_quad(M, p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2])
    s += _k_quad(M, p3[0] - p0[0], p3[1] - p0[1], p3[2] - p0[2])
    s += _k_quad(M, p2[0] - p1[0], p2[1] - p1[1], p2[2] - p1[2])
    s += _k_quad(M, p3[0] - p1[0], p3[1] - p1[1], p3[2] - p1[2])
    s += _k_quad(M, p3[0] - p2[0], p3[1] - p2[1], p3[2] - p2[2])
    if not s > 0.0:
        return 0.0
    return MEAN_RATIO_SCALE * (vol * math.sqrt(detm)) ** (2.0 / 3.0) / s


@njit
def _k_mean_ratio(p0, p1, p2, p3, l0, l1, l2, l3):
    """Mean ratio with the log-Euclidean metric mean at the centroid."""
    lm = np.empty(6)
    for i in range(6):
        lm[i] = 0.25 * (l0[i] + l1[i] + l2[i] + l3[i])
    M = np.empty(6)
    if not _k_exp(lm, M):
        return 0.0
    return _k_mean_ratio_metric(p0, p1, p2, p3, M)


@njit
def _k_inv3(A):
    """Inverse of a 3x3 matrix and its determinant (inverse undefined if det == 0)."""
    inv = np.empty((3, 3))
    inv[0, 0] = A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]
    inv[0, 1] = A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]
    inv[0, 2] = A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]
    inv[1, 0] = A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]
    inv[1, 1] = A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]
    inv[1, 2] = A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]
    inv[2, 0] = A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]
    inv[2, 1] = A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]
    inv[2, 2] = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    det = A[0, 0] * inv[0, 0] + A[0, 1] * inv[1, 0] + A[0, 2] * inv[2, 0]
    if det != 0.0:
        for i in range(3):
            for j in range(3):
                inv[i, j] /= det
    return inv, det


@njit
def _k_circumcenter(x1, x2, x3, x4, m, out):
    """Metric circumcenter offset ``O - x1``; returns False if ill-conditioned."""
    A = np.empty((3, 3))
    rhs = np.empty(3)
    for j in range(3):
        if j == 0:
            xj = x2
        elif j == 1:
            xj = x3
        else:
            xj = x4
        ex = xj[0] - x1[0]
        ey = xj[1] - x1[1]
        ez = xj[2] - x1[2]
        A[j, 0] = 2.0 * (m[0] * ex + m[1] * ey + m[3] * ez)
        A[j, 1] = 2.0 * (m[1] * ex + m[2] * ey + m[4] * ez)
        A[j, 2] = 2.0 * (m[3] * ex + m[4] * ey + m[5] * ez)
        rhs[j] = _k_quad(m, ex, ey, ez)
    inv, det = _k_inv3(A)
    if det == 0.0 or not np.isfinite(det):
        return False
    na = 0.0
    ni = 0.0
    for i in range(3):
        for j in range(3):
            na += A[i, j] * A[i, j]
            ni += inv[i, j] * inv[i, j]
    if math.sqrt(na * ni) > CIRCUMCENTER_MAX_COND:
        return False
    for i in range(3):
        out[i] = inv[i, 0] * rhs[0] + inv[i, 1] * rhs[1] + inv[i, 2] * rhs[2]
    return True


@njit
def _k_delaunay_measure(p, x1, x2, x3, x4, m):
    """Delaunay measure of ``p`` w.r.t. tetrahedron x1..x4 in metric ``m``; -1 if degenerate."""
    o = np.empty(3)
    if not _k_circumcenter(x1, x2, x3, x4, m, o):
        return -1.0
    r2 = _k_quad(m, o[0], o[1], o[2])
    if not r2 > 0.0:
        return -1.0
    d2 = _k_quad(m, p[0] - x1[0] - o[0], p[1] - x1[1] - o[1], p[2] - x1[2] - o[2])
    return math.sqrt(max(d2, 0.0) / r2)


@njit
def _k_delaunay_alphas(p, mp, x1, x2, x3, x4, m1, m2, m3, m4):
    """Measure in the point's own metric and the five-metric sum; (-1, -1) on failure."""
    ap = _k_delaunay_measure(p, x1, x2, x3, x4, mp)
    if ap < 0.0:
        return -1.0, -1.0
    total = ap
    for i in range(4):
        if i == 0:
            mi = m1
        elif i == 1:
            mi = m2
        elif i == 2:
            mi = m3
        else:
            mi = m4
        a = _k_delaunay_measure(p, x1, x2, x3, x4, mi)
        if a < 0.0:
            return -1.0, -1.0
        total += a
    return ap, total


@njit
def _k_edge_weight(p0, p1, p2, p3, m):
    """Largest inner-product edge weight of a tetrahedron; +inf if unusable.

    Edges follow ``EDGES``: for edge (p, q) with remaining vertices
    (r, s) in ascending local order, e_i = x_q - x_p, e_j = x_r - x_p,
    e_k = x_s - x_p.
    """
    vol = orient3d_fast(p0, p1, p2, p3) / 6.0
    detm = _k_det(m)
    if not (vol > 0.0 and detm > 0.0):
        return np.inf
    volm = vol * math.sqrt(detm)
    best = -np.inf
    for e in range(6):
        if e == 0:
            a, b, c, d = p0, p1, p2, p3
        elif e == 1:
            a, b, c, d = p0, p2, p1, p3
        elif e == 2:
            a, b, c, d = p0, p3, p1, p2
        elif e == 3:
            a, b, c, d = p1, p2, p0, p3
        elif e == 4:
            a, b, c, d = p1, p3, p0, p2
        else:
            a, b, c, d = p2, p3, p0, p1
        ix = b[0] - a[0]
        iy = b[1] - a[1]
        iz = b[2] - a[2]
        jx = c[0] - a[0]
        jy = c[1] - a[1]
        jz = c[2] - a[2]
        kx = d[0] - a[0]
        ky = d[1] - a[1]
        kz = d[2] - a[2]
        ij = _k_inner(m, ix, iy, iz, jx, jy, jz)
        ik = _k_inner(m, ix, iy, iz, kx, ky, kz)
        ii = _k_inner(m, ix, iy, iz, ix, iy, iz)
        jk = _k_inner(m, jx, jy, jz, kx, ky, kz)
        val = (ij * ik - ii * jk) / (6.0 * volm)
        if val > best:
            best = val
    return best


@njit
def _k_cholesky(m):
    """Lower Cholesky factor of a 6-vector tensor; (L, ok)."""
    L = np.zeros((3, 3))
    a00 = m[0]
    if not a00 > 0.0:
        return L, False
    L[0, 0] = math.sqrt(a00)
    L[1, 0] = m[1] / L[0, 0]
    L[2, 0] = m[3] / L[0, 0]
    a11 = m[2] - L[1, 0] * L[1, 0]
    if not a11 > 0.0:
        return L, False
    L[1, 1] = math.sqrt(a11)
    L[2, 1] = (m[4] - L[2, 0] * L[1, 0]) / L[1, 1]
    a22 = m[5] - L[2, 0] * L[2, 0] - L[2, 1] * L[2, 1]
    if not a22 > 0.0:
        return L, False
    L[2, 2] = math.sqrt(a22)
    return L, True


@njit
def _k_intersect(m1, m2, out):
    """Metric intersection by simultaneous reduction; False if ``m1`` is not SPD."""
    L, ok = _k_cholesky(m1)
    if not ok:
        return False
    Li, det = _k_inv3(L)
    if det == 0.0:
        return False
    B = _k_to_mat(m2)
    # A = L^-1 B L^-T
    T = Li @ B
    A = T @ Li.T
    a6 = np.empty(6)
    _k_from_mat(A, a6)
    w, Q = _k_eig(a6)
    for i in range(3):
        if w[i] < 1.0:
            w[i] = 1.0
    R = L @ Q
    for r in range(3):
        for c in range(r + 1):
            s = 0.0
            for k in range(3):
                s += R[r, k] * w[k] * R[c, k]
            if r == 0:
                out[0] = s
            elif r == 1:
                out[1 + c] = s
            else:
                out[3 + c] = s
    return True


@njit
def _k_interp_log(logs, weights, out_log, out_met):
    """Log-Euclidean interpolation: out_log = sum w_i logs_i, out_met = exp(out_log)."""
    for c in range(6):
        s = 0.0
        for i in range(logs.shape[0]):
            s += weights[i] * logs[i, c]
        out_log[c] = s
    return _k_exp(out_log, out_met)


# --------------------------------------------------------------------------
# public scalar API
# --------------------------------------------------------------------------

def as_tensor(m):
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (3, 3):
        m = np.array([m[0, 0], m[1, 0], m[1, 1], m[2, 0], m[2, 1], m[2, 2]])
    if m.shape != (6,):
        raise ValueError(f"expected 6 tensor coefficients, got shape {m.shape}")
    return m


def to_matrix(m):
    """Full 3x3 matrix from six coefficients (works on stacks too)."""
    m = np.asarray(m, dtype=np.float64)
    A = np.empty(m.shape[:-1] + (3, 3))
    A[..., 0, 0] = m[..., 0]
    A[..., 1, 0] = A[..., 0, 1] = m[..., 1]
    A[..., 1, 1] = m[..., 2]
    A[..., 2, 0] = A[..., 0, 2] = m[..., 3]
    A[..., 2, 1] = A[..., 1, 2] = m[..., 4]
    A[..., 2, 2] = m[..., 5]
    return A


def from_matrix(A):
    """Six coefficients from (stacks of) 3x3 matrices, symmetrising."""
    A = np.asarray(A, dtype=np.float64)
    return np.stack([A[..., 0, 0], 0.5 * (A[..., 1, 0] + A[..., 0, 1]), A[..., 1, 1],
                     0.5 * (A[..., 2, 0] + A[..., 0, 2]), 0.5 * (A[..., 2, 1] + A[..., 1, 2]),
                     A[..., 2, 2]], axis=-1)


def eigen(m):
    """Eigenvalues and column eigenvectors of a symmetric tensor."""
    return _k_eig(as_tensor(m))


def spd_log(m):
    """Matrix logarithm of an SPD tensor.

    Raises
    ------
    MetricDomainError
        If the tensor has a non-finite coefficient or an eigenvalue <= 1e-30.
    """
    m = as_tensor(m)
    if not np.all(np.isfinite(m)):
        raise MetricDomainError("metric has non-finite coefficients")
    w, _ = _k_eig(m)
    if w.min() <= SPD_MIN_EIGENVALUE:
        raise MetricDomainError(f"metric is not positive definite: eigenvalue {w.min():.6g}")
    out = np.empty(6)
    _k_log(m, out)
    return out


def spd_exp(lm):
    """Matrix exponential of a symmetric tensor.

    Raises
    ------
    MetricRangeError
        If an eigenvalue exceeds 700 (the exponential would overflow).
    """
    lm = as_tensor(lm)
    if not np.all(np.isfinite(lm)):
        raise MetricDomainError("log-metric has non-finite coefficients")
    w, _ = _k_eig(lm)
    if w.max() > EXP_MAX_EIGENVALUE:
        raise MetricRangeError(f"exponential overflows: eigenvalue {w.max():.6g} > {EXP_MAX_EIGENVALUE}")
    out = np.empty(6)
    _k_exp(lm, out)
    return out


def interpolate_metric(log_metrics, weights):
    """Log-Euclidean interpolation ``exp(sum_i w_i ln M_i)``.

    ``log_metrics`` holds matrix logarithms (one row of six per point) and
    ``weights`` barycentric coordinates summing to one.
    """
    logs = np.atleast_2d(np.asarray(log_metrics, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    if logs.shape[1] != 6 or logs.shape[0] != w.shape[0]:
        raise ValueError("need one log-metric row of six per weight")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return spd_exp(w @ logs)


def metric_length_constant(v, m):
    """Length of vector ``v`` in the constant metric ``m``."""
    v = np.asarray(v, dtype=np.float64)
    m = as_tensor(m)
    return math.sqrt(max(_k_quad(m, v[0], v[1], v[2]), 0.0))


def metric_edge_length(v, ma, mb):
    """Edge length from the two endpoint metrics (log-mean of the endpoint lengths)."""
    v = np.asarray(v, dtype=np.float64)
    return _k_edge_length(np.zeros(3), v, as_tensor(ma), as_tensor(mb))


def mean_ratio(points, log_metrics):
    """Mean ratio shape measure of a tetrahedron in [0, 1].

    The metric is the log-Euclidean mean of the four vertex metrics (the
    interpolated metric at the centroid).  Flat or inverted elements give 0.
    """
    p = np.asarray(points, dtype=np.float64)
    lm = np.asarray(log_metrics, dtype=np.float64)
    if lm.ndim == 1:
        lm = np.tile(lm, (4, 1))
    return float(_k_mean_ratio(p[0], p[1], p[2], p[3], lm[0], lm[1], lm[2], lm[3]))


def delaunay_measure(p, tet, m):
    """Ratio of metric distances from the metric circumcenter of ``tet``.

    Values below one mean ``p`` lies inside the metric circumsphere.

    Raises
    ------
    DegenerateSimplexError
        When the circumcenter system is singular or its condition number
        exceeds 1e12.
    """
    x = np.asarray(tet, dtype=np.float64)
    a = _k_delaunay_measure(np.asarray(p, dtype=np.float64), x[0], x[1], x[2], x[3], as_tensor(m))
    if a < 0.0:
        raise DegenerateSimplexError("circumcenter system is singular or ill-conditioned")
    return a


def metric_delaunay_check(p, mp, tet, metrics):
    """Five-metric Delaunay violation test; True when ``p`` is inside.

    A degenerate constituent predicate yields False (do not flip).
    """
    x = np.asarray(tet, dtype=np.float64)
    ms = np.asarray(metrics, dtype=np.float64)
    ap, total = _k_delaunay_alphas(np.asarray(p, dtype=np.float64), as_tensor(mp),
                                   x[0], x[1], x[2], x[3], ms[0], ms[1], ms[2], ms[3])
    if ap < 0.0:
        return False
    return bool(ap < 1.0 and total < 5.0)


def minmax_edge_weight(tet, m):
    """Largest metric edge-weight quantity of a tetrahedron (smaller is better).

    Raises
    ------
    DegenerateSimplexError
        For zero or negative metric volume.
    """
    x = np.asarray(tet, dtype=np.float64)
    q = _k_edge_weight(x[0], x[1], x[2], x[3], as_tensor(m))
    if not np.isfinite(q):
        raise DegenerateSimplexError("tetrahedron has no positive metric volume")
    return q


def intersect_metrics(m1, m2):
    """Metric intersection: the largest ellipsoid inside both unit balls."""
    m1 = as_tensor(m1)
    m2 = as_tensor(m2)
    for m in (m1, m2):
        w, _ = _k_eig(m)
        if not np.all(np.isfinite(m)) or w.min() <= SPD_MIN_EIGENVALUE:
            raise MetricDomainError(f"metric is not positive definite: eigenvalue {w.min():.6g}")
    out = np.empty(6)
    _k_intersect(m1, m2, out)
    return out


# --------------------------------------------------------------------------
# vectorised helpers
# --------------------------------------------------------------------------

def batch_log(metrics):
    """Matrix logarithm of a stack of tensors (n, 6)."""
    w, V = np.linalg.eigh(to_matrix(metrics))
    if np.any(w <= SPD_MIN_EIGENVALUE) or not np.all(np.isfinite(w)):
        bad = int(np.argmin(w.min(axis=1)))
        raise MetricDomainError(f"metric {bad} is not positive definite: eigenvalue {w[bad].min():.6g}")
    return from_matrix(np.einsum("nik,nk,njk->nij", V, np.log(w), V))


def batch_exp(logs):
    """Matrix exponential of a stack of symmetric tensors (n, 6)."""
    w, V = np.linalg.eigh(to_matrix(logs))
    if np.any(w > EXP_MAX_EIGENVALUE):
        raise MetricRangeError("exponential overflows")
    return from_matrix(np.einsum("nik,nk,njk->nij", V, np.exp(w), V))


def batch_quad(metrics, vectors):
    """v^T M v row by row."""
    m = metrics
    v = vectors
    return (m[:, 0] * v[:, 0] ** 2 + m[:, 2] * v[:, 1] ** 2 + m[:, 5] * v[:, 2] ** 2
            + 2.0 * (m[:, 1] * v[:, 0] * v[:, 1] + m[:, 3] * v[:, 0] * v[:, 2]
                     + m[:, 4] * v[:, 1] * v[:, 2]))


def batch_edge_lengths(xyz, metrics, edges):
    """Metric edge lengths for an (ne, 2) edge list."""
    v = xyz[edges[:, 1]] - xyz[edges[:, 0]]
    la = np.sqrt(np.maximum(batch_quad(metrics[edges[:, 0]], v), 0.0))
    lb = np.sqrt(np.maximum(batch_quad(metrics[edges[:, 1]], v), 0.0))
    out = 0.5 * (la + lb)
    far = np.abs(la - lb) > LENGTH_SWITCH
    out[far] = (la[far] - lb[far]) / np.log(la[far] / lb[far])
    return out


def tet_volumes(xyz, tets):
    p0 = xyz[tets[:, 0]]
    return np.einsum("ij,ij->i", np.cross(xyz[tets[:, 1]] - p0, xyz[tets[:, 2]] - p0),
                     xyz[tets[:, 3]] - p0) / 6.0


def batch_mean_ratio(xyz, logs, tets):
    """Mean ratio of every tetrahedron (vectorised)."""
    lm = logs[tets].mean(axis=1)
    M = batch_exp(lm)
    vol = tet_volumes(xyz, tets)
    detm = np.exp(lm[:, 0] + lm[:, 2] + lm[:, 5])
    s = np.zeros(len(tets))
    for a, b in EDGES:
        s += batch_quad(M, xyz[tets[:, b]] - xyz[tets[:, a]])
    q = np.zeros(len(tets))
    ok = (vol > 0.0) & (s > 0.0)
    q[ok] = MEAN_RATIO_SCALE * (vol[ok] * np.sqrt(detm[ok])) ** (2.0 / 3.0) / s[ok]
    return q


def dual_volumes(xyz, tets, n_vertices=None):
    """Lumped dual volume: a quarter of each incident tetrahedron."""
    n = len(xyz) if n_vertices is None else n_vertices
    vol = np.abs(tet_volumes(xyz, tets))
    out = np.zeros(n)
    np.add.at(out, tets.ravel(), np.repeat(vol / 4.0, 4))
    return out


def metric_complexity(xyz, tets, metrics):
    """Continuous vertex count ``sum_i sqrt(det M_i) V_i``."""
    metrics = np.asarray(metrics, dtype=np.float64)
    det = np.linalg.det(to_matrix(metrics))
    return float(np.sum(np.sqrt(np.maximum(det, 0.0)) * dual_volumes(xyz, tets, len(metrics))))
