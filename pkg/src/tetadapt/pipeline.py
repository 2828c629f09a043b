"""Adaptation driver and benchmark harnesses.

:func:`adapt` runs the pass sequence on one mesh/metric pair:

1. collapse of short edges,
2. point creation, insertion and local reconnection, repeated until an
   insertion round adds fewer than 1% new vertices,
3. a second collapse,
4. quality improvement by reconnection and smoothing.

The benchmark drivers repeat it inside an analytic-field adaptation loop
or time it at several worker counts.
"""
import csv
import time

import numpy as np

from . import coarsen, reconnect, refine
from .fields import build_graded_metric, eval_analytic_field, interpolation_error, reconstruct_hessian
from .mesh import MeshError, cube_mesh, validate
from .metric import metric_complexity
from .stats import AdaptConfig, AdaptStats, mesh_statistics

ANALYTIC_COLUMNS = ["level", "complexity", "iteration", "n_vertices", "n_tets", "error",
                    "unit_fraction", "min_quality"]
SPEEDUP_COLUMNS = ["workers", "module", "seconds", "speedup", "efficiency", "valid", "n_tets"]
SPEEDUP_MODULES = ["total", "collapse", "refine", "reconnect", "smooth"]

INSERT_STOP_FRACTION = 0.01


class ValidationError(MeshError):
    """A pass left the mesh invalid; ``report`` holds the validator output."""

    def __init__(self, where, report):
        self.report = report
        super().__init__(f"invalid mesh after {where}: " + "; ".join(report[:5]))


def _check(mesh, where, enabled):
    if enabled:
        rep = validate(mesh)
        if rep:
            raise ValidationError(where, rep)


def adapt(mesh, metrics, config=None, check=False, log=None):
    """Adapt ``mesh`` to per-vertex ``metrics``.

    Parameters
    ----------
    mesh : Mesh
        Valid input mesh; it is not modified.
    metrics : (n_vertices, 6) array
        SPD metric per alive vertex (m11 m21 m22 m31 m32 m33).
    config : AdaptConfig, optional
    check : bool
        Validate after every pass and raise :class:`ValidationError` on the
        first failure.
    log : callable, optional
        Called with each finished :class:`PassStats`.

    Returns
    -------
    (Mesh, AdaptStats)
        The compacted adapted mesh and the pass log with final statistics.
    """
    cfg = config or AdaptConfig()
    rep = validate(mesh)
    if rep:
        raise ValidationError("input", rep)
    m = mesh.copy()
    m.set_metric(metrics)
    m.set_active(1)
    stats = AdaptStats()
    W = cfg.workers

    def record(p):
        stats.add(p)
        if log is not None:
            log(p)
        _check(m, p.name, check)

    def collapse():
        if cfg.collapse:
            record(coarsen.collapse_pass(m, W, cfg.collapse_threshold, cfg.collapse_sweeps,
                                         seed=cfg.seed))
            m.compact()
            m.set_active(1)
            record(reconnect.reconnection_pass(m, W, max_sweeps=cfg.reconnect_sweeps,
                                               bucket=cfg.bucket_size))

    collapse()
    for _ in range(cfg.max_refine_rounds):
        nv = m.n_vertices
        p = refine.refinement_pass(m, W, cfg.refine_threshold, quality_floor=cfg.quality_floor)
        record(p)
        record(reconnect.reconnection_pass(m, W, max_sweeps=cfg.reconnect_sweeps,
                                           bucket=cfg.bucket_size))
        m.compact()
        if p.applied < INSERT_STOP_FRACTION * nv:
            break
    collapse()
    m.set_active(1)
    record(reconnect.reconnection_pass(m, W, max_sweeps=cfg.reconnect_sweeps, bucket=cfg.bucket_size))
    if cfg.smoothing:
        record(coarsen.smoothing_pass(m, W, cfg.smooth_sweeps, cfg.quality_trigger))
        m.set_active(1)
        record(reconnect.reconnection_pass(m, W, max_sweeps=cfg.reconnect_sweeps,
                                           bucket=cfg.bucket_size))
    m.compact()
    st = mesh_statistics(m)
    stats.n_vertices = st["n_vertices"]
    stats.n_tets = st["n_tets"]
    stats.length_hist = st["length_hist"]
    stats.quality_hist = st["quality_hist"]
    stats.min_quality = st["min_quality"]
    stats.unit_fraction = st["unit_fraction"]
    return m, stats


# ----------------------------------------------------------------- analytic


def analytic_metric(mesh, field, complexity, config):
    """Sample the field, recover Hessians and build the graded metric at ``complexity``."""
    xyz = mesh.a.xyz[mesh.alive_vertices()]
    f = eval_analytic_field(field, xyz)
    H = reconstruct_hessian(mesh, f)
    return build_graded_metric(H, mesh, complexity, config.norm, config.gradation)


def analytic_step(mesh, field, complexity, config, check=False):
    """One adaptive iteration: sample, recover Hessian, build and grade metric, adapt."""
    return adapt(mesh, analytic_metric(mesh, field, complexity, config), config, check=check)


def run_analytic_benchmark(field, schedule=(1000, 2000, 4000, 8000), iterations=10, config=None,
                           mesh=None, csv_path=None, log=None, check=False, on_step=None):
    """Adaptation loop on an analytic field over a complexity schedule.

    Starts from the 64-vertex cube unless ``mesh`` is given.  Each row of
    the result is one iteration (``iteration`` 0 with no adaptation when
    ``iterations`` is 0) with the L2 interpolation error of the field and
    the unit-edge fraction and minimum quality of the adapted mesh.

    Parameters
    ----------
    check : bool
        Validate the mesh after every pass of every adaptation.
    on_step : callable, optional
        Called as ``on_step(row, mesh)`` with each adapted mesh.

    Returns
    -------
    list of dict
        Rows keyed by :data:`ANALYTIC_COLUMNS`; also written to ``csv_path``.
    """
    cfg = config or AdaptConfig()
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("complexity schedule must be increasing")
    m = mesh.copy() if mesh is not None else cube_mesh(3)
    rows = []
    for level, N in enumerate(schedule):
        if iterations == 0:
            st = mesh_statistics(m)
            rows.append(dict(level=level, complexity=N, iteration=0, n_vertices=m.n_vertices,
                             n_tets=m.n_tets, error=interpolation_error(m, field),
                             unit_fraction=st["unit_fraction"], min_quality=st["min_quality"]))
        for it in range(iterations):
            m, st = analytic_step(m, field, N, cfg, check)
            row = dict(level=level, complexity=N, iteration=it + 1, n_vertices=m.n_vertices,
                       n_tets=m.n_tets, error=interpolation_error(m, field),
                       unit_fraction=st.unit_fraction, min_quality=st.min_quality)
            rows.append(row)
            if log is not None:
                log(row)
            if on_step is not None:
                on_step(row, m)
    if csv_path is not None:
        write_csv(csv_path, ANALYTIC_COLUMNS, rows)
    return rows


def level_summary(rows, last=5):
    """Per level: mean vertex count and geometric-mean error of the last iterations."""
    out = []
    for level in sorted({r["level"] for r in rows}):
        sel = [r for r in rows if r["level"] == level][-last:]
        out.append(dict(level=level, complexity=sel[0]["complexity"],
                        n_vertices=float(np.mean([r["n_vertices"] for r in sel])),
                        error=float(np.exp(np.mean([np.log(r["error"]) for r in sel])))))
    return out


def convergence_slope(summary):
    """Least-squares slope of log(error) against log(n_vertices ** (1/3))."""
    x = np.log(np.array([s["n_vertices"] for s in summary]) ** (1.0 / 3.0))
    y = np.log(np.array([s["error"] for s in summary]))
    return float(np.polyfit(x, y, 1)[0])


# ------------------------------------------------------------------ speedup


def run_speedup_benchmark(mesh, metrics, worker_counts=(1, 2, 4, 8), repetitions=5, config=None,
                          csv_path=None):
    """Per-module wall times of :func:`adapt` at several worker counts.

    Times are geometric means over ``repetitions`` runs; speedups and
    efficiencies are relative to one worker.  Every timed output is
    validated; ``n_tets`` is the size of the last output at that count.
    """
    if 1 not in worker_counts:
        raise ValueError("worker counts must include 1")
    base = config or AdaptConfig()
    times = {}
    valid = {}
    sizes = {}
    for W in worker_counts:
        cfg = AdaptConfig(**{**base.to_dict(), "workers": W})
        samples = {k: [] for k in SPEEDUP_MODULES}
        ok = True
        for _ in range(repetitions):
            t0 = time.perf_counter()
            out, st = adapt(mesh, metrics, cfg)
            total = time.perf_counter() - t0
            by = st.time_by_module()
            samples["total"].append(total)
            for k in SPEEDUP_MODULES[1:]:
                samples[k].append(by.get(k, 0.0))
            ok = ok and not validate(out)
        times[W] = {k: _geomean(v) for k, v in samples.items()}
        valid[W] = ok
        sizes[W] = st.n_tets
    rows = []
    for W in worker_counts:
        for k in SPEEDUP_MODULES:
            t = times[W][k]
            t1 = times[1][k]
            sp = t1 / t if t > 0 else float("nan")
            rows.append(dict(workers=W, module=k, seconds=t, speedup=sp, efficiency=sp / W,
                             valid=int(valid[W]), n_tets=sizes[W]))
    if csv_path is not None:
        write_csv(csv_path, SPEEDUP_COLUMNS, rows)
    return rows


def _geomean(values):
    v = np.asarray(values, dtype=np.float64)
    v = np.maximum(v, 1e-12)
    return float(np.exp(np.mean(np.log(v))))


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def scale_to_complexity(mesh, metrics, complexity):
    """Uniformly rescale a metric field to the requested complexity."""
    m = mesh.copy()
    m.compact()
    nv, nt = m.n_vertices, m.n_tets
    c = metric_complexity(m.a.xyz[:nv], m.a.tets[:nt], metrics)
    if not c > 0:
        raise ValueError("metric has zero complexity")
    return np.asarray(metrics, dtype=np.float64) * (complexity / c) ** (2.0 / 3.0)
