"""Robust orientation predicate.

``orient3d`` evaluates the sign of det[b - a, c - a, d - a] with a static
error filter and falls back to exact floating-point expansion arithmetic
when the filter cannot certify the sign.  The expansion routines follow
the zero-eliminating variants of Shewchuk's predicates.  Points with tiny
coordinates are rescaled per axis before the exact stage, so the sign is
exact as long as no axis spans more than about 2**600 between its smallest
nonzero and largest magnitude.
"""
import math

import numpy as np

from ._jit import njit

EPSILON = 2.0 ** -53
SPLITTER = 2.0 ** 27 + 1.0
O3D_ERRBOUND_A = (7.0 + 56.0 * EPSILON) * EPSILON
# expansion terms stay clear of gradual underflow above this coordinate size
TINY_COORD = 2.0 ** -250
RESCALE_EXPONENT = 300


@njit
def _two_sum(a, b):
    x = a + b
    bvirt = x - a
    avirt = x - bvirt
    bround = b - bvirt
    around = a - avirt
    return x, around + bround


@njit
def _two_diff(a, b):
    x = a - b
    bvirt = a - x
    avirt = x + bvirt
    bround = bvirt - b
    around = a - avirt
    return x, around + bround


@njit
def _split(a):
    c = SPLITTER * a
    abig = c - a
    ahi = c - abig
    return ahi, a - ahi


@njit
def _two_product(a, b):
    x = a * b
    ahi, alo = _split(a)
    bhi, blo = _split(b)
    err1 = x - ahi * bhi
    err2 = err1 - alo * bhi
    err3 = err2 - ahi * blo
    return x, alo * blo - err3


@njit
def _grow_expansion(e, elen, b, h):
    q = b
    hlen = 0
    for i in range(elen):
        q, hh = _two_sum(q, e[i])
        if hh != 0.0:
            h[hlen] = hh
            hlen += 1
    if q != 0.0 or hlen == 0:
        h[hlen] = q
        hlen += 1
    return hlen


@njit
def _expansion_sum(e, elen, f, flen, h):
    """h = e + f; h must hold elen + flen entries."""
    buf = np.empty(elen + flen)
    for i in range(elen):
        h[i] = e[i]
    hlen = elen
    for j in range(flen):
        n = _grow_expansion(h, hlen, f[j], buf)
        for i in range(n):
            h[i] = buf[i]
        hlen = n
    return hlen


@njit
def _scale_expansion(e, elen, b, h):
    """h = b * e; h must hold 2 * elen entries."""
    q, hh = _two_product(e[0], b)
    hlen = 0
    if hh != 0.0:
        h[hlen] = hh
        hlen += 1
    for i in range(1, elen):
        p1, p0 = _two_product(e[i], b)
        s, hh = _two_sum(q, p0)
        if hh != 0.0:
            h[hlen] = hh
            hlen += 1
        q = p1 + s
        hh = s - (q - p1)
        if hh != 0.0:
            h[hlen] = hh
            hlen += 1
    if q != 0.0 or hlen == 0:
        h[hlen] = q
        hlen += 1
    return hlen


@njit
def _mul_expansion(e, elen, f, flen, h):
    """h = e * f; h must hold 2 * elen * flen entries."""
    tmp = np.empty(2 * elen)
    acc = np.zeros(2 * elen * flen + 1)
    acclen = 1
    for j in range(flen):
        n = _scale_expansion(e, elen, f[j], tmp)
        out = np.empty(acclen + n)
        acclen = _expansion_sum(acc, acclen, tmp, n, out)
        for i in range(acclen):
            acc[i] = out[i]
    for i in range(acclen):
        h[i] = acc[i]
    return acclen


@njit
def _minor_exact(p, q, r, s):
    """Exact expansion of p*q - r*s for 2-term expansions."""
    a = np.empty(8)
    b = np.empty(8)
    na = _mul_expansion(p, 2, q, 2, a)
    nb = _mul_expansion(r, 2, s, 2, b)
    for i in range(nb):
        b[i] = -b[i]
    out = np.empty(16)
    n = _expansion_sum(a, na, b, nb, out)
    return out, n


@njit
def orient3d_exact(pa, pb, pc, pd):
    """Exact sign-carrying value of det[b - a, c - a, d - a].

    Evaluated as -det[a - d, b - d, c - d] with expansion arithmetic; only
    the sign and rough magnitude of the result are meaningful.
    """
    adx = np.empty(2)
    ady = np.empty(2)
    adz = np.empty(2)
    bdx = np.empty(2)
    bdy = np.empty(2)
    bdz = np.empty(2)
    cdx = np.empty(2)
    cdy = np.empty(2)
    cdz = np.empty(2)
    # two_diff returns (hi, lo); expansions are stored low-order first
    adx[1], adx[0] = _two_diff(pa[0], pd[0])
    ady[1], ady[0] = _two_diff(pa[1], pd[1])
    adz[1], adz[0] = _two_diff(pa[2], pd[2])
    bdx[1], bdx[0] = _two_diff(pb[0], pd[0])
    bdy[1], bdy[0] = _two_diff(pb[1], pd[1])
    bdz[1], bdz[0] = _two_diff(pb[2], pd[2])
    cdx[1], cdx[0] = _two_diff(pc[0], pd[0])
    cdy[1], cdy[0] = _two_diff(pc[1], pd[1])
    cdz[1], cdz[0] = _two_diff(pc[2], pd[2])
    m1, n1 = _minor_exact(bdy, cdz, bdz, cdy)
    m2, n2 = _minor_exact(cdy, adz, cdz, ady)
    m3, n3 = _minor_exact(ady, bdz, adz, bdy)
    t1 = np.empty(4 * n1)
    t2 = np.empty(4 * n2)
    t3 = np.empty(4 * n3)
    k1 = _mul_expansion(m1, n1, adx, 2, t1)
    k2 = _mul_expansion(m2, n2, bdx, 2, t2)
    k3 = _mul_expansion(m3, n3, cdx, 2, t3)
    s12 = np.empty(k1 + k2)
    n12 = _expansion_sum(t1, k1, t2, k2, s12)
    total = np.empty(n12 + k3)
    n = _expansion_sum(s12, n12, t3, k3, total)
    return -total[n - 1]


@njit
def orient3d(pa, pb, pc, pd):
    """Signed value whose sign is exactly that of det[b - a, c - a, d - a].

    Positive when ``d`` lies on the side of plane ``abc`` toward which the
    right-handed normal of ``abc`` points, i.e. tetrahedron abcd is
    positively oriented.
    """
    adx = pa[0] - pd[0]
    bdx = pb[0] - pd[0]
    cdx = pc[0] - pd[0]
    ady = pa[1] - pd[1]
    bdy = pb[1] - pd[1]
    cdy = pc[1] - pd[1]
    adz = pa[2] - pd[2]
    bdz = pb[2] - pd[2]
    cdz = pc[2] - pd[2]
    bdxcdy = bdx * cdy
    cdxbdy = cdx * bdy
    cdxady = cdx * ady
    adxcdy = adx * cdy
    adxbdy = adx * bdy
    bdxady = bdx * ady
    # det[a-d, b-d, c-d] == -det[b-a, c-a, d-a]
    det = (adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady))
    permanent = ((abs(bdxcdy) + abs(cdxbdy)) * abs(adz)
                 + (abs(cdxady) + abs(adxcdy)) * abs(bdz)
                 + (abs(adxbdy) + abs(bdxady)) * abs(cdz))
    errbound = O3D_ERRBOUND_A * permanent
    if det > errbound or -det > errbound:
        return -det
    return _orient3d_exact_scaled(pa, pb, pc, pd)


@njit
def _orient3d_exact_scaled(pa, pb, pc, pd):
    """``orient3d_exact``, rerun on power-of-two scaled axes when coordinates are tiny.

    Products of tiny coordinates have subnormal rounding-error terms, which
    breaks the exactness of expansion arithmetic.  The determinant is linear
    in each coordinate axis, so scaling an axis by a power of two is exact
    and multiplies the result by the same power.  Each axis is scaled so its
    largest magnitude is near 2**300; exactness is lost only when the
    coordinates within the axes together span more than about 2**1800.
    """
    small = np.inf
    for p in (pa, pb, pc, pd):
        for c in range(3):
            v = abs(p[c])
            if 0.0 < v < small:
                small = v
    if not small < TINY_COORD:
        return orient3d_exact(pa, pb, pc, pd)
    scale = np.ones(3)
    ktot = 0
    for c in range(3):
        big = max(abs(pa[c]), abs(pb[c]), abs(pc[c]), abs(pd[c]))
        if big == 0.0:
            continue
        k = min(RESCALE_EXPONENT - math.frexp(big)[1], 1000)
        if k > 0:
            scale[c] = math.ldexp(1.0, k)
            ktot += k
    if ktot == 0:
        return orient3d_exact(pa, pb, pc, pd)
    r = orient3d_exact(pa * scale, pb * scale, pc * scale, pd * scale)
    v = math.ldexp(r, -ktot)
    if v == 0.0 and r != 0.0:
        v = math.copysign(5e-324, r)
    return v


@njit
def orient3d_fast(pa, pb, pc, pd):
    """Plain floating-point det[b - a, c - a, d - a] (six times the volume)."""
    bx = pb[0] - pa[0]
    by = pb[1] - pa[1]
    bz = pb[2] - pa[2]
    cx = pc[0] - pa[0]
    cy = pc[1] - pa[1]
    cz = pc[2] - pa[2]
    dx = pd[0] - pa[0]
    dy = pd[1] - pa[1]
    dz = pd[2] - pa[2]
    return bx * (cy * dz - cz * dy) - by * (cx * dz - cz * dx) + bz * (cx * dy - cy * dx)


# Relative volume below which a positively oriented tet is treated as flat.
FLAT_TOL = 1e-10


@njit
def solid_tet(pa, pb, pc, pd):
    """True when abcd is positively oriented and not numerically flat.

    The volume is compared against ``FLAT_TOL`` times the cube of the
    longest edge, so slivers that would make barycentric or circumsphere
    computations blow up are refused even though their exact sign is
    positive.
    """
    if not orient3d(pa, pb, pc, pd) > 0.0:
        return False
    h = 0.0
    pts = (pa, pb, pc, pd)
    for i in range(4):
        for j in range(i + 1, 4):
            d = 0.0
            for c in range(3):
                d += (pts[i][c] - pts[j][c]) ** 2
            if d > h:
                h = d
    return orient3d_fast(pa, pb, pc, pd) > FLAT_TOL * h ** 1.5


def orientation(a, b, c, d):
    """Sign (-1, 0, +1) of the orientation of tetrahedron abcd."""
    val = orient3d(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
                   np.asarray(c, dtype=np.float64), np.asarray(d, dtype=np.float64))
    return int(np.sign(val))
