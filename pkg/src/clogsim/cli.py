"""Command-line entry point: ``clogsim {tabulate,simulate,cellsolve,presets}``."""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from .cellmesh import triangulate_perforated_cell, write_mesh
from .cellsolve import effective_tensor, interpolate_p1, solve_cell
from .coefftab import build_table, read_table, write_table
from .errors import ClogsimError, SolverError, ValidationError
from .macrosolve import (build_macro_mesh, frame_name, initial_sigma_field, run, write_snapshot,
                         write_summary)
from .microgeometry import Bean, Circle, Ellipse, eval_initial_curve, offset_curve

log = logging.getLogger("clogsim")

PRESET_NOTES = {
    "cardioid": "3 species on a cardioid, inflow of monomers, T = 3",
    "lshape": "same model on an L-shaped domain, T = 1.2",
    "lshape-nonuniform": "L-shape with a banded initial offset field",
    "circle": "cell study, circle R = 0.2",
    "ellipse30": "cell study, ellipse 0.01/0.001 at 30 deg",
    "ellipse45": "cell study, ellipse 0.01/0.001 at 45 deg",
    "ellipse135": "cell study, ellipse 0.01/0.001 at 135 deg (macro presets)",
    "ellipse150": "cell study, ellipse 0.1/0.01 at 150 deg",
    "bean": "cell study, bean curve R_c = 0.001",
}


def _load_config(args):
    if args.config and args.preset:
        raise ValidationError("use either --config or --preset")
    if args.config:
        cfg = cfgmod.load(args.config, os.environ)
    elif args.preset:
        cfg = cfgmod.with_env(cfgmod.preset(args.preset), os.environ)
    else:
        raise ValidationError("a --config or --preset is required")
    if args.out:
        cfg = replace(cfg, out=args.out)
    if getattr(args, "tensor_phi_prefactor", None):
        cfg = replace(cfg, table=replace(cfg.table, phi_prefactor=args.tensor_phi_prefactor == "on"))
    if getattr(args, "pgm", False):
        cfg = replace(cfg, pgm=True)
    return cfg


def _tabulate(cfg, threads):
    t = cfg.table
    table = build_table(cfg.shape, M=t.M, epsilon=t.epsilon, h=t.h,
                        phi_prefactor=t.phi_prefactor, workers=threads)
    path = cfg.table_path()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    write_table(table, path)
    print(f"wrote {path}: {len(table)} entries, sigma in [{table.sigmas[0]:.6g}, {table.sigma_max:.6g}]")
    if table.truncated_at is not None:
        print(f"table truncated: entry at sigma={table.truncated_at:.6g} failed")
    return table


def cmd_tabulate(args):
    cfg = _load_config(args)
    _tabulate(cfg, args.threads)
    return 0


def write_pgm(path, mesh, values, size=256):
    """Rasterise a nodal field to a binary graymap; pixels outside the mesh are black."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    span = float(max(hi - lo))
    n = size
    xs = lo[0] + (np.arange(n) + 0.5) * span / n
    ys = lo[1] + (np.arange(n)[::-1] + 0.5) * span / n
    X, Y = np.meshgrid(xs, ys)
    vals = interpolate_p1(mesh, values, np.column_stack([X.ravel(), Y.ravel()]))
    finite = np.isfinite(vals)
    vmin, vmax = float(np.min(values)), float(np.max(values))
    scale = (vals - vmin) / (vmax - vmin) if vmax > vmin else np.zeros_like(vals)
    img = np.where(finite, 1 + np.round(254 * np.nan_to_num(scale)), 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {n}\n255\n".encode())
        fh.write(img.reshape(n, n).tobytes())


def cmd_simulate(args):
    cfg = _load_config(args)
    if cfg.params is None or cfg.domain is None:
        raise ValidationError(f"scenario {cfg.name!r} has no macro model or domain")
    if args.tabulate_first:
        table = _tabulate(cfg, args.threads)
    else:
        path = cfg.table_path()
        if not os.path.exists(path):
            raise ValidationError(f"coefficient table {path} missing; run tabulate or pass --tabulate-first")
        table = read_table(path, shape=cfg.shape, epsilon=cfg.table.epsilon, h=cfg.table.h)
    mesh = build_macro_mesh(cfg.domain)
    sigma0 = initial_sigma_field(mesh, cfg.initial_sigma, table)
    os.makedirs(cfg.out, exist_ok=True)
    print(f"{cfg.name}: {mesh.n_vertices} vertices, {int(round(cfg.params.T / cfg.params.dt))} steps")
    try:
        result = run(mesh, cfg.params, table, sigma0=sigma0)
    except SolverError as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return 2
    for snap in result.snapshots:
        name = frame_name(snap.t)
        write_snapshot(os.path.join(cfg.out, name), mesh, snap)
        if cfg.pgm:
            write_pgm(os.path.join(cfg.out, name[:-4] + "_sigma.pgm"), mesh, snap.sigma)
    write_summary(os.path.join(cfg.out, "summary.csv"), result.header, result.summary)
    final = result.summary[-1]
    print(f"done: t={final[0]:.4g}, clogged fraction {final[1]:.4f}, {len(result.snapshots)} frames")
    return 0


def _shape_from_args(args):
    if args.preset:
        cfg = cfgmod.preset(args.preset)
        if args.h is None:
            args.h = cfg.table.h
        return cfg.shape
    kind = args.shape
    if kind == "none":
        return None
    if kind == "circle":
        return Circle(args.R_c)
    if kind == "bean":
        return Bean(args.R_c)
    return Ellipse(args.R_a, args.R_b, math.radians(args.theta_deg))


def cmd_cellsolve(args):
    shape = _shape_from_args(args)
    if args.h is None:
        args.h = 0.02
    holes = []
    if shape is not None:
        base = eval_initial_curve(shape)
        holes = [offset_curve(base, args.sigma)]
    mesh = triangulate_perforated_cell(holes, args.h)
    sol = solve_cell(mesh)
    tensor = effective_tensor(mesh, sol, args.d, args.tensor_phi_prefactor != "off")
    out = args.out or "out/cell"
    os.makedirs(out, exist_ok=True)
    write_mesh(mesh, os.path.join(out, "mesh.txt"))
    with open(os.path.join(out, "w.csv"), "w") as fh:
        fh.write("x,y,w1,w2\n")
        for (x, y), w1, w2 in zip(mesh.vertices, sol.w[0], sol.w[1]):
            fh.write(",".join(repr(float(c)) for c in (x, y, w1, w2)) + "\n")
    D = tensor.D
    print(f"phi = {tensor.phi:.10g}")
    print(f"D = [[{D[0, 0]:.10g}, {D[0, 1]:.10g}],")
    print(f"     [{D[1, 0]:.10g}, {D[1, 1]:.10g}]]")
    print(f"min eigenvalue = {tensor.c_D:.10g}, residual = {sol.residual_norm:.3e}")
    return 0


def cmd_presets(args):
    if args.show:
        print(cfgmod.dumps(cfgmod.preset(args.show)), end="")
        return 0
    for name in sorted(cfgmod.PRESETS):
        print(f"{name:18s} {PRESET_NOTES.get(name, '')}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="clogsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario INI file")
        sp.add_argument("--preset", help="named scenario, see `clogsim presets`")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for tabulation")
        sp.add_argument("--tensor-phi-prefactor", choices=("on", "off"), default=None)

    sp = sub.add_parser("tabulate", help="build the coefficient table CSV")
    common(sp)
    sp.set_defaults(func=cmd_tabulate)

    sp = sub.add_parser("simulate", help="run a macro scenario")
    common(sp)
    sp.add_argument("--tabulate-first", action="store_true", help="build the table before running")
    sp.add_argument("--pgm", action="store_true", help="also write sigma frames as PGM images")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("cellsolve", help="solve the cell problems for one shape")
    sp.add_argument("--preset", help="take the shape from a preset")
    sp.add_argument("--shape", choices=("none", "circle", "ellipse", "bean"), default="circle")
    sp.add_argument("--R-c", dest="R_c", type=float, default=0.2)
    sp.add_argument("--R-a", dest="R_a", type=float, default=0.1)
    sp.add_argument("--R-b", dest="R_b", type=float, default=0.01)
    sp.add_argument("--theta-deg", type=float, default=0.0)
    sp.add_argument("--sigma", type=float, default=0.0)
    sp.add_argument("--h", type=float, default=None, help="cell mesh size (default 0.02)")
    sp.add_argument("--d", type=float, default=1.0)
    sp.add_argument("--out", help="output directory for mesh.txt and w.csv")
    sp.add_argument("--tensor-phi-prefactor", choices=("on", "off"), default="on")
    sp.set_defaults(func=cmd_cellsolve)

    sp = sub.add_parser("presets", help="list named scenarios")
    sp.add_argument("--show", metavar="NAME", help="print a preset as INI")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except ClogsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
