import csv

import numpy as np
import pytest

from tetadapt.mesh import cube_mesh, validate
from tetadapt.metric import metric_complexity
from tetadapt.pipeline import (ANALYTIC_COLUMNS, SPEEDUP_COLUMNS, ValidationError, adapt,
                               convergence_slope, level_summary, run_analytic_benchmark,
                               run_speedup_benchmark, scale_to_complexity)
from tetadapt.stats import AdaptConfig

from conftest import uniform_metric


def anisotropic(mesh):
    x = mesh.a.xyz[: mesh.n_vertices]
    hz = 0.03 + 0.2 * np.abs(x[:, 2] - 0.5)
    return np.column_stack([np.full(len(x), 1 / 0.15 ** 2), np.zeros(len(x)),
                            np.full(len(x), 1 / 0.15 ** 2), np.zeros(len(x)), np.zeros(len(x)), hz ** -2])


def test_adapt_uniform_metric(cube3):
    M = uniform_metric(64, 0.08)
    C = metric_complexity(cube3.a.xyz[:64], cube3.a.tets[:162], M)
    out, st = adapt(cube3, M, check=True)
    assert validate(out) == []
    assert 0.5 * C <= out.n_vertices <= 2 * C
    assert st.unit_fraction >= 0.7
    assert st.min_quality > 0
    assert st.n_vertices == out.n_vertices and st.n_tets == out.n_tets
    assert {"collapse", "refine", "reconnect", "smooth"} <= set(st.time_by_module())
    assert st.totals("refine").applied > 0
    # the input is left untouched
    assert cube3.n_vertices == 64 and validate(cube3) == []


def test_adapt_anisotropic_layer(cube3):
    # the starter mesh does not sample the layer; one resampling resolves it
    out, _ = adapt(cube3, anisotropic(cube3), check=True)
    out, st = adapt(out, anisotropic(out), check=True)
    assert validate(out) == []
    assert st.unit_fraction >= 0.7
    # interior density follows 1/hz: a share of 0.35 in the slab |z - 0.5| < 0.1
    # (0.2 for a uniform mesh)
    inner = out.a.vcls[: out.n_vertices] == 0
    z = out.a.xyz[: out.n_vertices, 2][inner]
    assert np.mean(np.abs(z - 0.5) < 0.1) == pytest.approx(0.35, abs=0.04)


def test_adapt_output_metric_matches_vertices(cube3):
    out, _ = adapt(cube3, uniform_metric(64, 0.2))
    np.testing.assert_allclose(out.metrics(), uniform_metric(out.n_vertices, 0.2), rtol=1e-12)


def test_adapt_rejects_invalid_input(cube3):
    bad = cube3.copy()
    bad.a.tets[0, [2, 3]] = bad.a.tets[0, [3, 2]]
    with pytest.raises(ValidationError):
        adapt(bad, uniform_metric(64, 0.2))


@pytest.mark.parametrize("workers", [2, 4, 8])
def test_adapt_valid_at_worker_counts(cube3, workers):
    out, _ = adapt(cube3, anisotropic(cube3), AdaptConfig(workers=workers), check=True)
    assert validate(out) == []


def test_passes_can_be_disabled(cube3):
    _, st = adapt(cube3, uniform_metric(64, 0.2), AdaptConfig(smoothing=False, collapse=False))
    names = {p.name for p in st.passes}
    assert "smooth" not in names and "collapse" not in names


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(collapse_threshold=2.0)
    with pytest.raises(ValueError):
        AdaptConfig(workers=0)
    with pytest.raises(ValueError):
        AdaptConfig(gradation=1.0)


def test_scale_to_complexity(cube3):
    M = scale_to_complexity(cube3, uniform_metric(64, 0.3), 777.0)
    assert metric_complexity(cube3.a.xyz[:64], cube3.a.tets[:162], M) == pytest.approx(777.0)


def test_level_summary_and_slope():
    rows = []
    for level, n in enumerate([1000, 2000, 4000, 8000]):
        for it in range(1, 11):
            rows.append(dict(level=level, complexity=n, iteration=it, n_vertices=2 * n,
                             n_tets=0, error=(2 * n) ** (-2 / 3) * (5.0 if it < 6 else 1.0)))
    s = level_summary(rows)
    assert [r["n_vertices"] for r in s] == [2000, 4000, 8000, 16000]
    assert convergence_slope(s) == pytest.approx(-2.0)


def test_small_analytic_benchmark(tmp_path):
    path = tmp_path / "a.csv"
    rows = run_analytic_benchmark("sinfun3", (150, 300), iterations=2, csv_path=path)
    assert len(rows) == 4
    with open(path) as fh:
        rd = list(csv.DictReader(fh))
    assert list(rd[0]) == ANALYTIC_COLUMNS
    assert [int(r["iteration"]) for r in rd] == [1, 2, 1, 2]
    assert all(float(r["error"]) > 0 for r in rd)
    assert rows[-1]["n_vertices"] > rows[0]["n_vertices"]


def test_analytic_benchmark_zero_iterations():
    rows = run_analytic_benchmark("tanh3", (100, 200), iterations=0)
    assert [r["n_vertices"] for r in rows] == [64, 64]
    with pytest.raises(ValueError):
        run_analytic_benchmark("tanh3", (200, 100), iterations=0)


def test_small_speedup_benchmark(tmp_path, cube3):
    path = tmp_path / "s.csv"
    rows = run_speedup_benchmark(cube3, uniform_metric(64, 0.2), (1, 2), repetitions=1, csv_path=path)
    assert len(rows) == 2 * 5
    with open(path) as fh:
        assert list(csv.DictReader(fh).fieldnames) == SPEEDUP_COLUMNS
    base = [r for r in rows if r["workers"] == 1]
    assert all(r["speedup"] == 1.0 for r in base if r["seconds"] > 0)
    assert all(r["valid"] == 1 for r in rows)
    with pytest.raises(ValueError):
        run_speedup_benchmark(cube3, uniform_metric(64, 0.2), (2, 4))


def test_unit_mesh_under_its_own_metric_is_nearly_unchanged(cube3):
    first, _ = adapt(cube3, uniform_metric(64, 0.15))
    again, st = adapt(first, first.metrics())
    assert again.n_vertices == pytest.approx(first.n_vertices, rel=0.05)
    assert st.unit_fraction >= 0.7


def test_eight_times_smaller_size_tracks_complexity(cube3):
    h = (1.0 / 3.0) / 8.0
    M = uniform_metric(64, h)
    C = metric_complexity(cube3.a.xyz[:64], cube3.a.tets[:162], M)
    out, st = adapt(cube3, M)
    assert C / 2 <= out.n_vertices <= 2 * C
    assert validate(out) == []


def test_stats_are_consistent(cube3):
    out, st = adapt(cube3, anisotropic(cube3))
    for p in st.passes:
        assert p.applied <= p.attempted, p
    assert sum(st.quality_hist) == out.n_tets
    from tetadapt.stats import mesh_statistics
    assert sum(st.length_hist) == mesh_statistics(out)["n_edges"]


def test_benchmark_rows_carry_mesh_quality():
    seen = []
    rows = run_analytic_benchmark("sinatan3", (200,), iterations=1, check=True,
                                  on_step=lambda r, m: seen.append((r, m.n_vertices)))
    assert seen[0][1] == rows[0]["n_vertices"]
    assert 0 < rows[0]["min_quality"] <= 1
    assert 0 <= rows[0]["unit_fraction"] <= 1
