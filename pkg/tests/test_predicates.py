from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tetadapt.predicates import orient3d, orient3d_exact, orient3d_fast, orientation, solid_tet


def exact_sign(a, b, c, d):
    """Sign of det[b - a, c - a, d - a] in rational arithmetic."""
    A = [Fraction(x) for x in a]
    rows = [[Fraction(p[i]) - A[i] for i in range(3)] for p in (b, c, d)]
    det = (rows[0][0] * (rows[1][1] * rows[2][2] - rows[1][2] * rows[2][1])
           - rows[0][1] * (rows[1][0] * rows[2][2] - rows[1][2] * rows[2][0])
           + rows[0][2] * (rows[1][0] * rows[2][1] - rows[1][1] * rows[2][0]))
    return (det > 0) - (det < 0)


def near_coplanar(rng, n):
    """Points d close to the plane of abc, many exactly on it in rationals."""
    out = []
    for _ in range(n):
        a, b, c = rng.uniform(-1, 1, (3, 3))
        s, t = rng.uniform(-2, 2, 2)
        d = a + s * (b - a) + t * (c - a)
        kind = rng.integers(3)
        if kind == 1:
            d = d + rng.normal(size=3) * 1e-15
        elif kind == 2:
            d = np.nextafter(d, d + rng.choice([-1.0, 1.0], 3))
        out.append((a, b, c, d))
    return out


def test_regular_orientation_sign():
    a, b, c, d = np.eye(4, 3)[[3, 0, 1, 2]]
    assert orient3d(a, b, c, d) > 0
    assert orient3d(a, c, b, d) < 0
    assert orientation(a, b, c, d) == 1


def test_orient3d_matches_rational_oracle_near_degenerate():
    rng = np.random.default_rng(42)
    cases = near_coplanar(rng, 10_000)
    mismatches = 0
    fast_wrong = 0
    for a, b, c, d in cases:
        ref = exact_sign(a, b, c, d)
        got = np.sign(orient3d(a, b, c, d))
        mismatches += int(got != ref)
        fast_wrong += int(np.sign(orient3d_fast(a, b, c, d)) != ref)
    assert mismatches == 0
    # the set is hard enough to fool plain floating point
    assert fast_wrong > 0


def test_exact_path_alone_matches_oracle():
    rng = np.random.default_rng(7)
    for a, b, c, d in near_coplanar(rng, 500):
        assert np.sign(orient3d_exact(a, b, c, d)) == exact_sign(a, b, c, d)


def test_coplanar_integer_points_give_zero():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([1.0, 0.0, 0.0])
    c = np.array([0.0, 1.0, 0.0])
    d = np.array([3.0, 7.0, 0.0])
    assert orient3d(a, b, c, d) == 0.0
    assert orientation(a, b, c, d) == 0


# zero or magnitudes in [1e-150, 1e3]: the range over which exactness is promised
magnitude = st.floats(1e-150, 1e3)
coord = st.one_of(st.just(0.0), magnitude, magnitude.map(lambda x: -x), st.sampled_from([0.5, 1.0, -1.0]))
point = st.tuples(coord, coord, coord)


@settings(max_examples=300, deadline=None)
@given(point, point, point, point)
def test_orient3d_antisymmetric_and_exact(a, b, c, d):
    a, b, c, d = (np.array(p) for p in (a, b, c, d))
    s = np.sign(orient3d(a, b, c, d))
    assert s == exact_sign(a, b, c, d)
    assert np.sign(orient3d(b, a, c, d)) == -s
    assert np.sign(orient3d(a, b, d, c)) == -s


@pytest.mark.parametrize("a, b, c, d", [
    ((0.0, 1.0, 1.5), (1.375, 1.0635918953058394e-283, 0.0), (0.0, 0.0, -2.251354545037187e-12),
     (1.375, 1.0635918953058394e-283, 0.0)),
    ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 2.40299564489976e-271)),
    ((0.0, 0.0, 8.184490951060059e-201), (0.0, 1.0, 0.0), (4.9471313921038614e-201, 0.0, 0.0),
     (4.9471313921038614e-201, 2.3398420481095882e-244, 0.0)),
])
def test_orient3d_tiny_coordinates(a, b, c, d):
    # subnormal error terms would otherwise leak into the exact stage
    a, b, c, d = (np.array(p) for p in (a, b, c, d))
    for q in ((a, b, c, d), (a, b, d, c), (b, a, c, d)):
        assert np.sign(orient3d(*q)) == exact_sign(*q)


def test_solid_tet_rejects_slivers():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([1.0, 0.0, 0.0])
    c = np.array([0.0, 1.0, 0.0])
    assert solid_tet(a, b, c, np.array([0.2, 0.2, 1.0]))
    assert not solid_tet(a, b, c, np.array([0.2, 0.2, 1e-14]))
    assert not solid_tet(a, c, b, np.array([0.2, 0.2, 1.0]))


@pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
def test_solid_tet_is_scale_invariant(scale):
    p = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, 0.5]], dtype=float) * scale
    assert solid_tet(*p)
