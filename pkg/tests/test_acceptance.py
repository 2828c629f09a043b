"""Acceptance criteria, each reported as one PASS/FAIL line at the end of the run.

The analytic benchmarks (three fields, four complexity levels, ten
adaptations per level) and the large speedup job dominate the runtime.
"""
import os

import numpy as np
import pytest

from tetadapt.fields import FIELDS
from tetadapt.io import write_mesh, write_sol
from tetadapt.mesh import cube_mesh, validate
from tetadapt.metric import DegenerateSimplexError, delaunay_measure, minmax_edge_weight
from tetadapt.pipeline import (adapt, analytic_metric, convergence_slope, level_summary,
                               run_analytic_benchmark, run_speedup_benchmark, scale_to_complexity)
from tetadapt.stats import AdaptConfig

from conftest import record, uniform_metric
from test_metric import edge_weight_by_normals, insphere_inside, random_spd

pytestmark = pytest.mark.slow

SCHEDULE = (1000, 2000, 4000, 8000)
ITERATIONS = 10
SLOPE, SLOPE_TOL = -2.0, 0.5
UNIT_SHARE = 0.70
SIZE_FACTOR = 2.0
SPEEDUP_TETS = 500_000
SPEEDUP_WORKERS = 8
SPEEDUP_REPS = 5
OUT_DIR = os.environ.get("TETADAPT_ACCEPTANCE_DIR")


@pytest.fixture(scope="session")
def analytic(tmp_path_factory):
    """Benchmark rows per field, plus the sinfun3 mesh entering the last level-4000 iteration."""
    out = tmp_path_factory.mktemp("analytic") if OUT_DIR is None else OUT_DIR
    rows, keep = {}, {}

    def grab(field):
        def on_step(row, mesh):
            if field == "sinfun3" and row["complexity"] == 4000 and row["iteration"] == ITERATIONS - 1:
                keep["sinfun3-4000"] = mesh.copy()
        return on_step

    for field in FIELDS:
        rows[field] = run_analytic_benchmark(field, SCHEDULE, ITERATIONS, AdaptConfig(), check=True,
                                             csv_path=os.path.join(out, f"analytic_{field}.csv"),
                                             on_step=grab(field))
    return rows, keep


# ------------------------------------------------------------------ 1


@pytest.mark.parametrize("field", FIELDS)
def test_criterion_1_convergence_order(analytic, field):
    summary = level_summary(analytic[0][field])
    slope = convergence_slope(summary)
    pts = ", ".join(f"{s['n_vertices']:.0f}:{s['error']:.3e}" for s in summary)
    ok = abs(slope - SLOPE) <= SLOPE_TOL
    record(f"1 {field}", ok, f"slope {slope:.3f} (target {SLOPE} +- {SLOPE_TOL}); vertices:error {pts}")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_2_unit_mesh(analytic):
    finals = [r for field in FIELDS for r in analytic[0][field] if r["iteration"] == ITERATIONS]
    unit = min(r["unit_fraction"] for r in finals)
    qmin = min(r["min_quality"] for r in finals)
    ok = unit >= UNIT_SHARE and qmin > 0
    record(2, ok, f"lowest unit-edge share {unit:.3f} (>= {UNIT_SHARE}), lowest min mean ratio {qmin:.3g} "
                  f"over {len(finals)} final meshes")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_3_validity_at_worker_counts(analytic):
    # every benchmark adaptation above ran with per-pass validation
    mesh = analytic[1]["sinfun3-4000"]
    cfg = AdaptConfig()
    M = analytic_metric(mesh, "sinfun3", 4000, cfg)
    problems = []
    for W in (1, 2, 4, 8):
        try:
            out, _ = adapt(mesh, M, AdaptConfig(workers=W), check=True)
            problems += validate(out)
        except Exception as exc:  # a failed pass check raises
            problems.append(f"W={W}: {exc}")
    n_runs = sum(len(v) for v in analytic[0].values())
    ok = not problems
    record(3, ok, f"{n_runs} benchmark adaptations and 4 worker counts validated after every pass"
                  + ("" if ok else f"; {problems[:3]}"))
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_4_oracle_equivalence():
    rng = np.random.default_rng(2024)
    identity = np.array([1.0, 0, 1, 0, 0, 1])
    agree = checked = 0
    while checked < 1000:
        x = rng.uniform(-1, 1, (4, 3))
        if abs(np.linalg.det(x[1:] - x[0])) < 1e-3:
            continue
        e = rng.uniform(-1.2, 1.2, 3)
        try:
            alpha = delaunay_measure(e, x, identity)
        except DegenerateSimplexError:
            continue
        if abs(alpha - 1.0) <= 1e-6:
            continue
        checked += 1
        agree += (alpha < 1.0) == insphere_inside(*x, e)
    worst = 0.0
    done = 0
    while done < 500:
        x = rng.uniform(-1, 1, (4, 3))
        if np.linalg.det(x[1:] - x[0]) < 0:
            x = x[[0, 2, 1, 3]]
        if abs(np.linalg.det(x[1:] - x[0])) < 1e-2:
            continue
        m = random_spd(rng, 1.0)
        ref = edge_weight_by_normals(x, m)
        worst = max(worst, abs(minmax_edge_weight(x, m) - ref) / max(abs(ref), 1e-12))
        done += 1
    ok = agree == checked and worst <= 1e-9
    record(4, ok, f"insphere agreement {agree}/{checked}; edge-weight max relative deviation {worst:.2e} "
                  f"on {done} tets (<= 1e-9)")
    assert ok


# ------------------------------------------------------------------ 5


def test_criterion_5_complexity_control(analytic):
    rows = [r for field in FIELDS for r in analytic[0][field]]
    ratio = np.array([r["n_vertices"] / r["complexity"] for r in rows])
    ok = bool(np.all((ratio >= 1 / SIZE_FACTOR) & (ratio <= SIZE_FACTOR)))
    worst = max(rows, key=lambda r: max(r["n_vertices"] / r["complexity"],
                                        r["complexity"] / r["n_vertices"]))
    per_level = {N: float(np.max([r["n_vertices"] / N for r in rows if r["complexity"] == N]))
                 for N in SCHEDULE}
    record(5, ok, f"vertices/complexity in [{ratio.min():.2f}, {ratio.max():.2f}] (bound x{SIZE_FACTOR}); "
                  f"max per level {', '.join(f'{k}:{v:.2f}' for k, v in per_level.items())}; "
                  f"worst level {worst['level']} iteration {worst['iteration']}")
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_6_parallel_scaling(tmp_path_factory):
    mesh = cube_mesh(3)
    # about 10.5 tetrahedra per unit complexity for a uniform unit mesh
    M = scale_to_complexity(mesh, uniform_metric(mesh.n_vertices, 1.0), 1.1 * SPEEDUP_TETS / 10.5)
    out = tmp_path_factory.mktemp("speedup")
    rows = run_speedup_benchmark(mesh, M, (1, SPEEDUP_WORKERS), SPEEDUP_REPS,
                                 csv_path=os.path.join(OUT_DIR or out, "speedup.csv"))
    at = {r["module"]: r for r in rows if r["workers"] == SPEEDUP_WORKERS}
    size = min(r["n_tets"] for r in rows)
    valid = all(r["valid"] for r in rows)
    total, recon = at["total"]["speedup"], at["reconnect"]["speedup"]
    ok = total >= 3.5 and recon >= 4.0 and size >= SPEEDUP_TETS and valid
    record(6, ok, f"{SPEEDUP_WORKERS} workers on {size} tets ({os.cpu_count()} cpu): end-to-end "
                  f"{total:.2f}x (>= 3.5), reconnection {recon:.2f}x (>= 4.0), outputs valid: {valid}")
    assert ok


# ------------------------------------------------------------------ 7


def test_criterion_7_operation_suite(analytic):
    mesh = analytic[1]["sinfun3-4000"]
    cfg = AdaptConfig()
    M = analytic_metric(mesh, "sinfun3", 4000, cfg)
    _, full = adapt(mesh, M, cfg)
    _, reduced = adapt(mesh, M, AdaptConfig(smoothing=False, collapse=False))
    ok = reduced.min_quality < full.min_quality
    record(7, ok, f"min mean ratio full {full.min_quality:.4f} vs without smoothing+collapse "
                  f"{reduced.min_quality:.4f} (must be strictly lower)")
    assert ok


# ------------------------------------------------------------------ 8


def test_criterion_8_determinism(tmp_path):
    blobs = []
    for k in range(3):
        meshes = []
        run_analytic_benchmark("sinfun3", (1000,), 3, AdaptConfig(workers=1, seed=7),
                               on_step=lambda r, m: meshes.append(m))
        write_mesh(tmp_path / f"run{k}.mesh", meshes[-1])
        write_sol(tmp_path / f"run{k}.sol", meshes[-1].metrics())
        blobs.append((tmp_path / f"run{k}.mesh").read_bytes() + (tmp_path / f"run{k}.sol").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    record(8, ok, f"3 single-worker runs with seed 7: output files {'identical' if ok else 'differ'} "
                  f"({len(blobs[0])} bytes)")
    assert ok
