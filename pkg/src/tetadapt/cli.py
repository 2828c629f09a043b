"""Command line interface: ``tetadapt {adapt,bench,validate,stats}``."""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .fields import FIELDS, apply_gradation
from .io import ParseError, read_mesh, read_sol, write_mesh, write_sol
from .mesh import MeshError, cube_mesh, validate
from .pipeline import (adapt, convergence_slope, level_summary, run_analytic_benchmark,
                       run_speedup_benchmark, scale_to_complexity)
from .stats import AdaptConfig, mesh_statistics


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _config(args, **extra):
    kw = {"workers": args.threads, "seed": args.seed}
    if getattr(args, "gradation", None) is not None:
        kw["gradation"] = args.gradation
    kw.update(extra)
    return AdaptConfig(**kw)


def cmd_adapt(args):
    mesh = read_mesh(args.mesh)
    metrics = read_sol(args.metric, mesh.n_vertices)
    if metrics.ndim != 2:
        print("error: the metric file must hold a tensor field", file=sys.stderr)
        return 2
    if args.complexity is not None:
        metrics = scale_to_complexity(mesh, metrics, args.complexity)
    if args.gradation is not None:
        metrics = apply_gradation(mesh, metrics, args.gradation)
    out, st = adapt(mesh, metrics, _config(args))
    write_mesh(args.out, out)
    write_sol(Path(args.out).with_suffix(".sol"), out.metrics())
    rep = validate(out)
    print(f"vertices {st.n_vertices}  tets {st.n_tets}  min quality {st.min_quality:.4g}  "
          f"unit edges {100 * st.unit_fraction:.1f}%")
    for name, sec in st.time_by_module().items():
        print(f"  {name:10s} {sec:8.3f} s")
    for line in rep:
        print("invalid:", line, file=sys.stderr)
    return 0 if not rep else 1


def cmd_bench_analytic(args):
    cfg = _config(args)

    def log(r):
        print(f"level {r['level']} N={r['complexity']} it={r['iteration']:2d} "
              f"nv={r['n_vertices']} err={r['error']:.4e}", flush=True)

    rows = run_analytic_benchmark(args.field, tuple(_floats(args.levels)), args.iterations, cfg,
                                  csv_path=args.out, log=None if args.quiet else log)
    if args.iterations > 0 and len({r["level"] for r in rows}) > 1:
        print(f"convergence slope {convergence_slope(level_summary(rows)):.3f}")
    return 0


def cmd_bench_speedup(args):
    mesh = read_mesh(args.mesh) if args.mesh else cube_mesh(args.cube)
    if args.metric:
        metrics = read_sol(args.metric, mesh.n_vertices)
    else:
        metrics = np.tile([1.0, 0.0, 1.0, 0.0, 0.0, 1.0], (mesh.n_vertices, 1))
    if args.complexity is not None:
        metrics = scale_to_complexity(mesh, metrics, args.complexity)
    rows = run_speedup_benchmark(mesh, metrics, tuple(_ints(args.workers)), args.repetitions,
                                 _config(args), csv_path=args.out)
    for r in rows:
        print(f"W={r['workers']:2d} {r['module']:10s} {r['seconds']:9.3f} s  "
              f"speedup {r['speedup']:5.2f}  efficiency {r['efficiency']:5.2f}")
    return 0 if all(r["valid"] for r in rows) else 1


def cmd_validate(args):
    mesh = read_mesh(args.mesh)
    rep = validate(mesh)
    if rep:
        for line in rep:
            print(line)
        return 1
    print(f"valid: {mesh.n_vertices} vertices, {mesh.n_tets} tetrahedra")
    return 0


def cmd_stats(args):
    mesh = read_mesh(args.mesh)
    if args.metric:
        mesh.set_metric(read_sol(args.metric, mesh.n_vertices))
    print(json.dumps(mesh_statistics(mesh), indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tetadapt", description="Anisotropic tetrahedral mesh adaptation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
        sp.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("adapt", help="adapt a mesh to a metric field")
    a.add_argument("--mesh", required=True)
    a.add_argument("--metric", required=True, help=".sol file with one tensor per vertex")
    a.add_argument("--out", required=True, help="output .mesh (metric written next to it as .sol)")
    a.add_argument("--complexity", type=float, help="rescale the metric to this complexity")
    a.add_argument("--gradation", type=float, help="apply size gradation with this factor")
    common(a)
    a.set_defaults(func=cmd_adapt)

    b = sub.add_parser("bench", help="benchmarks")
    bsub = b.add_subparsers(dest="bench", required=True)
    ba = bsub.add_parser("analytic", help="adaptation loop on an analytic field")
    ba.add_argument("--field", choices=FIELDS, required=True)
    ba.add_argument("--levels", default="1000,2000,4000,8000", help="comma separated complexities")
    ba.add_argument("--iterations", type=int, default=10, help="adaptations per level")
    ba.add_argument("--gradation", type=float, default=3.0)
    ba.add_argument("--out", help="CSV output")
    ba.add_argument("--quiet", action="store_true")
    common(ba)
    ba.set_defaults(func=cmd_bench_analytic)

    bs = bsub.add_parser("speedup", help="time adapt at several worker counts")
    bs.add_argument("--mesh", help="input mesh (default: structured cube)")
    bs.add_argument("--cube", type=int, default=10, help="cells per side of the default cube")
    bs.add_argument("--metric", help="metric .sol (default: identity)")
    bs.add_argument("--complexity", type=float, help="rescale the metric to this complexity")
    bs.add_argument("--workers", default="1,2,4,8", help="comma separated worker counts")
    bs.add_argument("--repetitions", type=int, default=5)
    bs.add_argument("--out", help="CSV output")
    common(bs)
    bs.set_defaults(func=cmd_bench_speedup)

    v = sub.add_parser("validate", help="check a mesh for validity")
    v.add_argument("mesh")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", help="print mesh statistics as JSON")
    s.add_argument("mesh")
    s.add_argument("--metric", help="metric .sol for length/quality statistics")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
