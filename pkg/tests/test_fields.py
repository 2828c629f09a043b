import math
import warnings

import mpmath
import numpy as np
import pytest

from tetadapt.fields import (apply_gradation, build_graded_metric, build_multiscale_metric,
                             eval_analytic_field, interpolate_scalar, interpolation_error,
                             reconstruct_hessian)
from tetadapt.mesh import INTERIOR, build_mesh, cube_mesh
from tetadapt.metric import metric_complexity, to_matrix

from conftest import perturbed_cube, uniform_metric


def tables(mesh):
    nv, nt = mesh.n_vertices, mesh.n_tets
    return mesh.a.xyz[:nv], mesh.a.tets[:nt]


# ---------------------------------------------------------------- fields


def test_field_examples():
    assert eval_analytic_field("sinfun3", [0.4, 0.4, 0.4]) == 0.0
    assert eval_analytic_field("tanh3", [0.0, 0.3, 1.0]) == 0.0
    mpmath.mp.dps = 40
    ref = mpmath.mpf("0.1") * mpmath.sin(50) + mpmath.atan(mpmath.mpf("0.1") / (mpmath.sin(0) - 2))
    assert eval_analytic_field("sinatan3", [1.0, 0.0, 1.0]) == pytest.approx(float(ref), abs=1e-15)
    assert float(ref) == pytest.approx(-0.07620, abs=5e-6)


def test_sinfun3_branches():
    # xyz product below -pi/50, in the middle band, and above 2 pi/50
    pts = np.array([[0.0, 0.0, 0.8], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0]])
    prod = np.prod(pts - 0.4, axis=1)
    want = np.where((prod > -math.pi / 50) & (prod <= 2 * math.pi / 50), 1.0, 0.1) * np.sin(50 * prod)
    np.testing.assert_allclose(eval_analytic_field("sinfun3", pts), want, rtol=1e-15)


def test_sinatan3_singular_convention():
    # sin(5y) = 2xz exactly at y = 0, x = 0
    assert eval_analytic_field("sinatan3", [0.0, 0.0, 0.5]) == pytest.approx(math.pi / 2)


def test_unknown_field():
    with pytest.raises(ValueError):
        eval_analytic_field("nope", [0, 0, 0])


# ------------------------------------------------------------- Hessian


def test_hessian_of_affine_and_constant_fields():
    m = perturbed_cube(4, 0.3, seed=2)
    x, _ = tables(m)
    for f in (np.full(len(x), 3.0), 1.0 + 2 * x[:, 0] - x[:, 1] + 0.5 * x[:, 2]):
        H = reconstruct_hessian(m, f)
        assert np.abs(H).max() < 1e-10
        np.testing.assert_allclose(H, np.transpose(H, (0, 2, 1)))


def test_hessian_of_x_squared_on_structured_cube():
    m = cube_mesh(8)
    x, _ = tables(m)
    H = reconstruct_hessian(m, x[:, 0] ** 2)
    interior = m.a.vcls[: len(x)] == INTERIOR
    err = np.abs(H[interior] - np.diag([2.0, 0, 0])).max(axis=(1, 2))
    assert err.max() <= 0.15 * 2.0


def test_hessian_of_quadratic_on_jittered_mesh():
    m = perturbed_cube(8, 0.2, seed=4)
    x, _ = tables(m)
    f = x[:, 0] ** 2 + 3 * x[:, 1] * x[:, 2]
    ref = np.array([[2.0, 0, 0], [0, 0, 3], [0, 3, 0]])
    H = reconstruct_hessian(m, f)
    interior = m.a.vcls[: len(x)] == INTERIOR
    rel = np.linalg.norm(H[interior] - ref, axis=(1, 2)) / np.linalg.norm(ref)
    assert np.median(rel) < 0.15


def test_hessian_shape_errors(cube3):
    with pytest.raises(ValueError):
        reconstruct_hessian(cube3, np.zeros(3))


# ---------------------------------------------------------- multiscale metric


def test_uniform_hessian_gives_uniform_metric():
    m = cube_mesh(4)
    x, t = tables(m)
    H = np.tile(np.diag([4.0, 1.0, 0.25]), (len(x), 1, 1))
    M = build_multiscale_metric(H, m, 1000)
    assert metric_complexity(x, t, M) == pytest.approx(1000, rel=0.01)
    np.testing.assert_allclose(M, np.tile(M[0], (len(x), 1)), rtol=1e-12)
    # anisotropy follows the Hessian
    assert M[0, 0] / M[0, 2] == pytest.approx(4.0, rel=1e-9)
    assert M[0, 2] / M[0, 5] == pytest.approx(4.0, rel=1e-9)


def test_zero_hessian_hits_target():
    m = cube_mesh(4)
    x, t = tables(m)
    M = build_multiscale_metric(np.zeros((len(x), 3, 3)), m, 500)
    assert metric_complexity(x, t, M) == pytest.approx(500, rel=0.01)
    w = np.linalg.eigvalsh(to_matrix(M))
    np.testing.assert_allclose(w, w[0, 0], rtol=1e-12)


def test_doubling_complexity_doubles_density():
    m = perturbed_cube(4, 0.3, seed=5)
    x, t = tables(m)
    H = reconstruct_hessian(m, np.sin(3 * x[:, 0]) * np.exp(x[:, 1]) + x[:, 2] ** 3)
    M1 = build_multiscale_metric(H, m, 1000, tol=1e-4)
    M2 = build_multiscale_metric(H, m, 2000, tol=1e-4)
    d1 = np.sqrt(np.linalg.det(to_matrix(M1)))
    d2 = np.sqrt(np.linalg.det(to_matrix(M2)))
    np.testing.assert_allclose(d2 / d1, 2.0, rtol=1e-3)


def test_metric_is_spd_and_clamped():
    m = perturbed_cube(4, 0.3, seed=6)
    x, t = tables(m)
    H = reconstruct_hessian(m, eval_analytic_field("tanh3", x))
    M = build_multiscale_metric(H, m, 3000, h_min=0.01, h_max=0.5)
    w = np.linalg.eigvalsh(to_matrix(M))
    assert w.min() >= 0.5 ** -2 * (1 - 1e-9)
    assert w.max() <= 0.01 ** -2 * (1 + 1e-9)
    assert metric_complexity(x, t, M) == pytest.approx(3000, rel=0.01)


def test_multiscale_rejects_bad_input(cube3):
    with pytest.raises(ValueError):
        build_multiscale_metric(np.zeros((64, 3, 3)), cube3, 0)
    H = np.zeros((64, 3, 3))
    H[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        build_multiscale_metric(H, cube3, 100)


# ----------------------------------------------------------------- gradation


def corner_tet():
    return build_mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float), [[0, 1, 2, 3]])


def test_gradation_single_edge_closed_form():
    m = corner_tet()
    h = np.array([1.0, 100.0, 100.0, 100.0])
    M = np.array([[s ** -2, 0, s ** -2, 0, 0, s ** -2] for s in h])
    G = apply_gradation(m, M, beta=1.5)
    sizes = 1.0 / np.sqrt(G[:, 0])
    assert sizes[0] == pytest.approx(1.0)
    np.testing.assert_allclose(sizes[1:], 1.0 + math.log(1.5), rtol=1e-12)


def test_gradation_uniform_unchanged_and_idempotent():
    m = perturbed_cube(4, 0.3, seed=7)
    x, t = tables(m)
    U = uniform_metric(len(x), 0.2)
    np.testing.assert_array_equal(apply_gradation(m, U, 3.0), U)
    H = reconstruct_hessian(m, eval_analytic_field("sinfun3", x))
    M = build_multiscale_metric(H, m, 2000)
    G = apply_gradation(m, M, 2.0, max_sweeps=200)
    np.testing.assert_array_equal(apply_gradation(m, G, 2.0), G)
    # sizes never grow: G - M is positive semi-definite
    d = np.linalg.eigvalsh(to_matrix(G) - to_matrix(M))
    assert d.min() >= -1e-9 * np.abs(G).max()


def test_graded_metric_hits_complexity():
    m = perturbed_cube(5, 0.3, seed=8)
    x, t = tables(m)
    H = reconstruct_hessian(m, eval_analytic_field("tanh3", x))
    M = build_graded_metric(H, m, 1000, beta=3.0)
    assert metric_complexity(x, t, M) == pytest.approx(1000, rel=0.01)
    np.testing.assert_array_equal(apply_gradation(m, M, 3.0, 200), apply_gradation(m, apply_gradation(m, M, 3.0, 200), 3.0))


def test_gradation_rejects_beta():
    with pytest.raises(ValueError):
        apply_gradation(corner_tet(), uniform_metric(4, 1.0), 1.0)


# ------------------------------------------------------------- interpolation


def test_interpolation_identical_and_linear():
    old = perturbed_cube(4, 0.3, seed=9)
    x, _ = tables(old)
    rng = np.random.default_rng(0)
    f = rng.normal(size=len(x))
    np.testing.assert_allclose(interpolate_scalar(old, f, x), f, atol=1e-12)
    lin = lambda p: 0.3 - p[:, 0] + 2 * p[:, 1] + 5 * p[:, 2]
    pts = rng.uniform(0, 1, (300, 3))
    np.testing.assert_allclose(interpolate_scalar(old, lin(x), pts), lin(pts), atol=1e-12)


def test_interpolation_outside_warns():
    old = cube_mesh(3)
    x, _ = tables(old)
    with pytest.warns(RuntimeWarning, match="clamped"):
        v = interpolate_scalar(old, x[:, 0], [[1.5, 0.5, 0.5]])
    assert v[0] == pytest.approx(1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        interpolate_scalar(old, x[:, 0], [[1.0 + 1e-12, 0.5, 0.5]])


def test_error_of_linear_field_vanishes(cube3):
    lin = lambda p: 1 + p[:, 0] - 2 * p[:, 2]
    assert interpolation_error(cube3, lin) <= 1e-12
    assert interpolation_error(cube3, "sinfun3") >= 0


@pytest.mark.parametrize("field,lo,hi", [("sinatan3", 0.3, 0.5), ("tanh3", 0.5, 0.7),
                                         ("sinfun3", 0.6, 0.8)])
def test_second_order_on_a_smooth_subcube(field, lo, hi):
    coarse = interpolation_error(cube_mesh(6, lo, hi), field)
    fine = interpolation_error(cube_mesh(12, lo, hi), field)
    assert coarse / fine == pytest.approx(4.0, rel=0.2)
