"""Command-line entry point: ``hdl <command> [options]``.

Exit codes: 0 success (or certified sweep), 2 solver failure, 3 degeneration,
4 configuration or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import io
from .circle import BarycenterError, circle_map_from_spec, douady_earle
from .config import ConfigError, RunConfig, format_grid, parse_config, parse_grid
from .continuation import (DEGENERATED, FAILED, ContinuationReport, run_boundary_continuation,
                           run_metric_continuation)
from .diagnostics import map_report
from .grid import DiskGrid, PinchingBounds, gaussian_curvature
from .harmonic import DiskMap, HarmonicSolveError, solve_harmonic
from .metric import MetricField, MetricSolveError, curvature_from_spec, solve_prescribed_curvature

log = logging.getLogger("hdl")

EXIT_OK, EXIT_SOLVER, EXIT_DEGENERATE, EXIT_CONFIG = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def emit_plot_data(obj, path) -> None:
    """CSV for plotting: a node field ``(grid, values)`` or a continuation report."""
    if isinstance(obj, ContinuationReport):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "j", "sup_mu", "w_margin", "dist_h0", "dJ"])
            for r in obj.records:
                w.writerow([repr(v) for v in (r.t, r.jacobian_inf, r.sup_mu, r.w_margin, r.dist_h0, r.dJ)])
        return
    if isinstance(obj, MetricField):
        obj = (obj.grid, obj.u)
    elif isinstance(obj, DiskMap):
        obj = (obj.grid, obj.values)
    grid, values = obj
    io.write_field_csv(path, grid, values)


def _metric_from_spec(spec: str, grid: DiskGrid, tol: float) -> MetricField:
    """A curvature spec is solved; a field file is taken as the stored ``u``."""
    path = Path(spec)
    if path.is_file():
        fgrid, u = io.read_field(path)
        if not fgrid.compatible(grid):
            raise ConfigError(f"{spec}: metric grid {format_grid(fgrid)} does not match {format_grid(grid)}")
        u = np.asarray(u, dtype=float)
        if np.ptp(u) == 0:
            k = np.full(grid.shape, -np.exp(-2 * u.flat[0]))
        else:
            k = gaussian_curvature(grid, u)
            k[-1] = k[-2]
        return MetricField(grid, u, k, PinchingBounds.from_curvature(k), float("nan"))
    k = curvature_from_spec(spec, grid)
    if np.ptp(k) == 0 and k.flat[0] == -1.0:
        return MetricField.hyperbolic(grid)
    return solve_prescribed_curvature(k, grid, tol)


def cmd_solve_metric(cfg: RunConfig, args) -> int:
    k = curvature_from_spec(cfg.curvature, cfg.grid)
    m = solve_prescribed_curvature(k, cfg.grid, cfg.metric_tol)
    if cfg.out:
        io.write_field(cfg.out, cfg.grid, m.u)
    if cfg.plot_data:
        emit_plot_data(m, cfg.plot_data)
    top = {"grid": format_grid(cfg.grid), "curvature": cfg.curvature, "a": m.bounds.a, "b": m.bounds.b,
           "residual": m.residual_norm, "iterations": m.iterations,
           "u_min": float(np.min(m.u)), "u_max": float(np.max(m.u))}
    _emit(cfg, top)
    return EXIT_OK


def cmd_solve_map(cfg: RunConfig, args) -> int:
    target = _metric_from_spec(args.target or cfg.curvature, cfg.grid, cfg.metric_tol)
    phi = circle_map_from_spec(cfg.boundary)
    init = cfg.init
    if init not in ("douady-earle", "identity"):
        init = io.read_disk_map(init, target)
    h = solve_harmonic(target, phi, cfg.grid, init=init, tol=cfg.map_tol)
    if cfg.out:
        io.write_disk_map(cfg.out, h)
    if cfg.plot_data:
        emit_plot_data(h, cfg.plot_data)
    _emit(cfg, {"grid": format_grid(cfg.grid), "boundary": cfg.boundary, "residual": h.residual_norm,
                "iterations": h.iterations, "energy": h.energy, "projections": h.projections})
    return EXIT_OK


def cmd_extend(cfg: RunConfig, args) -> int:
    phi = circle_map_from_spec(args.map or cfg.boundary)
    vals = douady_earle(phi, cfg.grid.z)
    if cfg.out:
        io.write_field(cfg.out, cfg.grid, vals)
    if cfg.plot_data:
        emit_plot_data((cfg.grid, vals), cfg.plot_data)
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, args) -> int:
    h = io.read_disk_map(args.map)
    if args.target:
        h = DiskMap(h.grid, h.values, h.boundary, _metric_from_spec(args.target, h.grid, cfg.metric_tol))
    rep = map_report(h, bochner=args.bochner, qi_pairs=args.qi_pairs, trace_ring=args.trace_ring,
                     seed=cfg.seed)
    _emit(cfg, {"map": args.map, **rep.as_dict()})
    return EXIT_OK


def _sweep_exit(report: ContinuationReport) -> int:
    if report.verdict == FAILED:
        return EXIT_SOLVER
    if report.verdict == DEGENERATED:
        return EXIT_DEGENERATE
    return EXIT_OK


def _finish_sweep(cfg, report):
    text = report.to_text()
    if cfg.report:
        Path(cfg.report).write_text(text)
    else:
        sys.stdout.write(text)
    if cfg.plot_data:
        emit_plot_data(report, cfg.plot_data)
    return _sweep_exit(report)


def cmd_sweep(cfg: RunConfig, args) -> int:
    K = curvature_from_spec(cfg.curvature, cfg.grid)
    phi = circle_map_from_spec(cfg.boundary)
    report = run_metric_continuation(K, phi, cfg.steps, cfg.grid, cfg.metric_tol, cfg.map_tol, cfg.budget,
                                     labels={"curvature": cfg.curvature, "boundary": cfg.boundary})
    return _finish_sweep(cfg, report)


def cmd_sweep_boundary(cfg: RunConfig, args) -> int:
    phi = circle_map_from_spec(cfg.boundary)
    report = run_boundary_continuation(phi, cfg.steps, cfg.grid, cfg.map_tol, cfg.budget,
                                       labels={"boundary": cfg.boundary})
    return _finish_sweep(cfg, report)


def _emit(cfg, top):
    text = io.format_report(top)
    if cfg.report:
        Path(cfg.report).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hdl", description="Pinched conformal metrics, harmonic maps and continuity sweeps.")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--verbose", "-v", action="count", default=0)
    p.add_argument("--threads", type=int, help="BLAS/LAPACK threads (default: $HDL_THREADS)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *names):
        opts = {
            "grid": dict(help="<n_r>x<n_theta>@<r_max>"),
            "curvature": dict(help="constant:<v> | radial-bump:<depth>,<width> | field file"),
            "boundary": dict(help="identity | rotation:<c> | sine:<A> | mobius:<a>,<b>,<c>,<d> | "
                                  "piecewise:<t>:<p>,... | circle map file"),
            "tol": dict(type=float),
            "steps": dict(type=int),
            "out": dict(),
            "report": dict(),
            "plot-data": dict(help="CSV for plotting"),
            "seed": dict(type=int),
            "budget": dict(type=float, help="continuity budget for sup|J_t - J_s|"),
        }
        for n in names:
            sp.add_argument(f"--{n}", **opts[n])

    s = sub.add_parser("solve-metric", help="solve the prescribed curvature equation")
    common(s, "curvature", "grid", "tol", "out", "report", "plot-data")
    s.set_defaults(func=cmd_solve_metric, tol_key="metric_tol")

    s = sub.add_parser("solve-map", help="solve for the harmonic map with given rim data")
    s.add_argument("--target", help="metric field file or curvature spec (default: config curvature)")
    s.add_argument("--init", help="douady-earle | identity | disk map file")
    common(s, "boundary", "grid", "tol", "out", "report", "plot-data")
    s.set_defaults(func=cmd_solve_map, tol_key="map_tol")

    s = sub.add_parser("extend", help="Douady-Earle extension over all nodes")
    s.add_argument("--map", help="circle map spec")
    common(s, "grid", "out", "plot-data")
    s.set_defaults(func=cmd_extend)

    s = sub.add_parser("diagnose", help="diagnostics of a stored disk map")
    s.add_argument("--map", required=True, help="disk map file")
    s.add_argument("--target", help="metric field file or curvature spec (default: hyperbolic)")
    s.add_argument("--bochner", action="store_true")
    s.add_argument("--qi-pairs", type=int, default=2000)
    s.add_argument("--trace-ring", type=float, default=0.9)
    common(s, "report", "seed")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("sweep", help="metric continuity method")
    common(s, "curvature", "boundary", "steps", "grid", "report", "plot-data", "budget")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("sweep-boundary", help="boundary continuity method")
    common(s, "boundary", "steps", "grid", "report", "plot-data", "budget")
    s.set_defaults(func=cmd_sweep_boundary)
    return p


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
    changes = {}
    for key in ("curvature", "boundary", "steps", "out", "report", "seed", "budget", "init"):
        changes[key] = getattr(args, key, None)
    changes["plot_data"] = getattr(args, "plot_data", None)
    if getattr(args, "grid", None):
        changes["grid"] = parse_grid(args.grid)
    if getattr(args, "tol", None) is not None:
        changes[args.tol_key] = args.tol
    return cfg.updated(**changes)


def _thread_limit(n):
    if n is None:
        env = os.environ.get("HDL_THREADS")
        n = int(env) if env else None
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        with _thread_limit(args.threads):
            return args.func(cfg, args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"hdl: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MetricSolveError, HarmonicSolveError, BarycenterError) as exc:
        print(f"hdl: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
