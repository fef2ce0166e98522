"""Command-line interface.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .chart import (
    DEFAULT_CAP,
    ChartParams,
    DFEWMAChart,
    read_baseline_csv,
    run_length_simulation,
    worker_count,
    write_report_csv,
)
from .eigen import EigenSolverError
from .geometry import GeometryError, VoxelGrid, load_triangle_mesh, load_voxel_grid, write_off, write_voxgrid
from .partgen import GenerationError, NoiseModel
from .scenarios import FAMILIES, GeneratedScenario, ScenarioSpec, bank_scenario
from .spectra import (
    SpectrumConfig,
    classical_mds,
    compute_spectrum,
    read_spectrum_csv,
    write_mds_csv,
    write_spectrum_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
VOXEL_SUFFIXES = (".vox", ".voxgrid")

log = logging.getLogger("lbspec")


class UsageError(Exception):
    pass


def load_part(path):
    path = Path(path)
    if path.suffix.lower() in VOXEL_SUFFIXES:
        return load_voxel_grid(path)
    if path.suffix.lower() == ".off":
        return load_triangle_mesh(path)
    raise UsageError(f"{path}: unknown part format (use .off, .vox or .voxgrid)")


def _config(args, part) -> SpectrumConfig:
    bc = args.bc or ("dirichlet" if isinstance(part, VoxelGrid) else "neumann")
    return SpectrumConfig(args.order, bc, args.k, args.tol)


def _noise(args) -> NoiseModel:
    if args.noise == "none":
        return NoiseModel("none")
    if args.noise == "correlated":
        return NoiseModel("correlated", sigma1=args.sigma1, sigma2=args.sigma2, r=tuple(args.r))
    return NoiseModel("isotropic", sigma=args.sigma)


def _spec(args) -> ScenarioSpec:
    return ScenarioSpec(
        family=args.family,
        delta=args.delta,
        rx=args.rx,
        max_noise=args.max_noise,
        noise=_noise(args),
        order=getattr(args, "order", "linear"),
        bc=getattr(args, "bc", None),
        k=getattr(args, "k", 15),
        vertices=args.vertices,
        hole_cap=args.hole_cap,
    )


# --- commands ---------------------------------------------------------------


def cmd_spectrum(args) -> int:
    part = load_part(args.input)
    cfg = _config(args, part)
    spec = compute_spectrum(part, cfg, seed=args.seed)
    if args.out:
        write_spectrum_csv(spec.eigenvalues, args.out)
    for i, v in enumerate(spec.eigenvalues, start=1):
        print(f"{i:4d}  {v:.17g}")
    print(f"max residual {spec.residuals.max():.3e} (tol {cfg.tol:g}); clamped {spec.n_clamped}")
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = _spec(args)
    voxel = spec.family == "voxel-hole"
    suffix = ".vox" if voxel else ".off"
    out = Path(args.out) if args.out else Path(f"{spec.family}{suffix}")
    paths = [out] if args.count == 1 else [
        out.with_name(f"{out.stem}_{i:04d}{out.suffix or suffix}") for i in range(args.count)
    ]
    for i, path in enumerate(paths):
        rng = np.random.default_rng(args.seed if args.count == 1 else [args.seed, i])
        part = spec.make_part(rng)
        (write_voxgrid if voxel else write_off)(part, path)
        print(path)
    return EXIT_OK


def _stream_spectrum(path, args, p):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_spectrum_csv(path)
    part = load_part(path)
    cfg = _config(argparse.Namespace(**{**vars(args), "k": max(args.k, p)}), part)
    return compute_spectrum(part, cfg, seed=args.seed).eigenvalues


def cmd_chart(args) -> int:
    base = read_baseline_csv(args.baseline)
    p = args.p or base.shape[1]
    if base.shape[1] < p:
        raise UsageError(f"baseline has {base.shape[1]} values per row, p={p} requested")
    params = ChartParams(
        m0=len(base), w_min=args.wmin, w_max=args.wmax, lam=args.lam, alpha=args.alpha,
        p=p, permutations=args.permutations,
    )
    chart = DFEWMAChart(base, params, seed=args.seed)
    rows = []
    for path in args.stream:
        x = _stream_spectrum(path, args, p)
        if len(x) < p:
            raise UsageError(f"{path}: spectrum has {len(x)} values, baseline uses p={p}")
        r = chart.step(x[:p])
        rows.append((Path(path).name, r.statistic, r.p_value, int(r.signal)))
        print(f"{Path(path).name}: T_n={r.statistic:.6g} p={r.p_value:.4g}{'  SIGNAL' if r.signal else ''}")
        if r.signal and not args.continue_:
            break
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["part", "T_n", "p_value", "signal"])
            for name, t, pv, s in rows:
                w.writerow([name, f"{t:.17g}", f"{pv:.17g}", s])
    return EXIT_OK


def cmd_simulate_rl(args) -> int:
    spec = _spec(args)
    params = ChartParams(
        m0=args.m0, w_min=args.wmin, w_max=args.wmax, lam=args.lam, alpha=args.alpha,
        p=args.k, permutations=args.permutations,
    )
    workers = worker_count()
    if args.bank:
        scenario = bank_scenario(spec, args.bank, args.oc_bank, seed=args.seed, workers=workers)
    else:
        scenario = GeneratedScenario(spec)
    res = run_length_simulation(scenario, params, args.reps, seed=args.seed, cap=args.cap, workers=workers)
    print(f"{res.scenario}: ARL {res.arl:.4g}  SDRL {res.sdrl:.4g}  reps {res.reps}  censored {res.censored}")
    if args.out:
        write_report_csv([res], args.out)
    return EXIT_OK


def cmd_mds(args) -> int:
    if args.matrix:
        X = read_baseline_csv(args.matrix)
        ids = [str(i + 1) for i in range(len(X))]
    else:
        vecs = [read_spectrum_csv(p) for p in args.inputs]
        lengths = {len(v) for v in vecs}
        if len(lengths) != 1:
            raise UsageError(f"spectra have differing lengths {sorted(lengths)}")
        X = np.array(vecs)
        ids = [Path(p).stem for p in args.inputs]
    coords = classical_mds(X, args.dim)
    out = args.out or "mds.csv"
    write_mds_csv(coords, ids, out)
    print(f"wrote {len(coords)} rows to {out}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _add_spectrum_flags(p, k=15):
    p.add_argument("--order", default="linear", choices=["linear", "quadratic", "cubic"])
    p.add_argument("--bc", choices=["dirichlet", "neumann", "closed"],
                   help="default: neumann for meshes, dirichlet for voxel grids")
    p.add_argument("--k", type=int, default=k, help="number of eigenvalues")
    p.add_argument("--tol", type=float, default=1e-8)


def _add_scenario_flags(p):
    p.add_argument("--family", default="barrel", choices=FAMILIES)
    p.add_argument("--delta", type=float, default=0.0, help="barrel defect amplitude")
    p.add_argument("--rx", type=float, default=8.0, help="voxel hole semi-axis (voxels)")
    p.add_argument("--max-noise", type=int, default=None, help="voxel boundary flips per kind")
    p.add_argument("--vertices", type=int, default=2562, help="sphere vertex target")
    p.add_argument("--hole-cap", type=float, default=None, help="polar cap angle removed from a sphere (degrees)")
    p.add_argument("--noise", default=None, choices=["none", "isotropic", "correlated"],
                   help="coordinate noise for meshes (default: none for spheres, else isotropic)")
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--sigma1", type=float, default=0.0)
    p.add_argument("--sigma2", type=float, default=0.05)
    p.add_argument("--r", type=float, nargs=3, default=(2.6, 2.6, 16.7), metavar=("RX", "RY", "RZ"))
    p.add_argument("--seed", type=int, default=0)


def _add_chart_flags(p, alpha):
    p.add_argument("--alpha", type=float, default=alpha)
    p.add_argument("--lam", type=float, default=0.01)
    p.add_argument("--wmin", type=int, default=1)
    p.add_argument("--wmax", type=int, default=10)
    p.add_argument("--permutations", type=int, default=2000)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lbspec", description="Laplace-Beltrami spectra of parts and spectral SPC.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="compute the leading spectrum of a part")
    p.add_argument("--input", required=True, help=".off mesh or .vox voxel grid")
    _add_spectrum_flags(p)
    p.add_argument("--seed", type=int, default=0, help="starting-vector seed")
    p.add_argument("--out", help="spectrum CSV")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("generate", help="write synthetic parts")
    _add_scenario_flags(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", help="output file; with --count a numbered suffix is added")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("chart", help="monitor streamed spectra against a baseline")
    p.add_argument("--baseline", required=True, help="CSV, one Phase-I spectrum per row")
    p.add_argument("--stream", nargs="+", required=True, help="spectrum CSVs or part files, in order")
    p.add_argument("--p", type=int, default=None, help="eigenvalues monitored (default: baseline width)")
    _add_chart_flags(p, 0.005)
    _add_spectrum_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--continue", dest="continue_", action="store_true", help="keep going after a signal")
    p.add_argument("--out", help="decisions CSV")
    p.set_defaults(func=cmd_chart)

    p = sub.add_parser("simulate-rl", help="Monte Carlo run-length estimate")
    _add_scenario_flags(p)
    _add_spectrum_flags(p)
    _add_chart_flags(p, 0.005)
    p.add_argument("--m0", type=int, default=100)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--bank", type=int, default=300,
                   help="in-control spectrum pool size; 0 generates every part on demand")
    p.add_argument("--oc-bank", type=int, default=60, help="defective spectrum pool size")
    p.add_argument("--out", help="report CSV")
    p.set_defaults(func=cmd_simulate_rl)

    p = sub.add_parser("mds", help="classical MDS coordinates of spectra")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--inputs", nargs="+", help="spectrum CSVs")
    g.add_argument("--matrix", help="CSV with one spectrum per row")
    p.add_argument("--dim", type=int, default=3, choices=[2, 3])
    p.add_argument("--out", help="coordinates CSV (default mds.csv)")
    p.set_defaults(func=cmd_mds)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "noise", "unset") is None:
        # spheres are unit size, so the 0.05 default noise would swamp them
        args.noise = "none" if args.family == "sphere" else "isotropic"
    try:
        return args.func(args)
    except EigenSolverError as exc:
        msg = str(exc)
        if exc.residuals is not None and len(exc.residuals):
            msg += f"; achieved residuals max {np.max(exc.residuals):.3e}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, GeometryError, GenerationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
