"""The `gammaz` command: tensor, scan, verify, dissipate.

Exit codes: 0 ok, 1 verification failure, 2 usage or config error,
3 mathematical degeneracy (singular frame, unsatisfiable shift constraint).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import bochner as bo
from . import bound
from . import dynamics as dy
from . import exprdsl
from . import structure as st
from .jets import DomainError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2, 3
VERIFY_TOL = 1e-8

log = logging.getLogger("gammaz")


class UsageError(Exception):
    pass


# config ------------------------------------------------------------------------


def load_config(path: str) -> Dict[str, Any]:
    """YAML (or JSON, a subset) mapping; see README for the keys."""
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping at the top level")
    return data


def _parse_param(tok: str) -> Tuple[str, Any]:
    if "=" not in tok:
        raise UsageError(f"--param expects name=value, got {tok!r}")
    k, v = tok.split("=", 1)
    k, v = k.strip(), v.strip()
    if not k:
        raise UsageError(f"--param expects name=value, got {tok!r}")
    try:
        return k, float(v)
    except ValueError:
        return k, v


def _transpose(M, rows: int, cols: int, what: str) -> List[List[str]]:
    # config matrices are (n+m) x n (columns are the vector fields)
    if M is None:
        M = []
    if not isinstance(M, list) or any(not isinstance(r, list) for r in M):
        raise UsageError(f"{what} must be a list of rows")
    if cols == 0:
        return []
    if len(M) != rows or any(len(r) != cols for r in M):
        raise UsageError(f"{what} must be {rows}x{cols}")
    return [[str(M[i][j]) for i in range(rows)] for j in range(cols)]


def structure_from(args) -> Tuple[st.SubRiemannianStructure, str]:
    """Build the structure from --config plus flag overrides.  Returns (s, lambda mode)."""
    cfg: Dict[str, Any] = load_config(args.config) if args.config else {}
    params: Dict[str, Any] = dict(cfg.get("params") or {})
    for tok in args.param or []:
        k, v = _parse_param(tok)
        params[k] = v
    V = args.V if args.V is not None else cfg.get("V")
    if V is None:
        raise UsageError("a potential is required (--V or 'V' in the config)")
    name = args.preset or cfg.get("preset")
    mode = args.mode or cfg.get("lambda_mode") or "least_squares"
    if mode not in ("least_squares", "preset"):
        raise UsageError(f"unknown lambda mode {mode!r}")
    try:
        if name:
            s = st.preset(str(name), str(V), params)
        else:
            coords = cfg.get("coords")
            if not coords:
                raise UsageError("config needs 'coords' (or a preset)")
            coords = [str(c) for c in coords]
            N = len(coords)
            a = cfg.get("a") or []
            n = int(cfg["n"]) if "n" in cfg else (len(a[0]) if a and isinstance(a[0], list) else 0)
            m = int(cfg.get("m", N - n))
            if n + m != N:
                raise UsageError(f"n + m = {n + m} does not match {N} coordinates")
            aT = _transpose(cfg.get("a"), N, n, "a")
            zT = _transpose(cfg.get("z"), N, m, "z")
            s = st.build(
                coords, aT, zT, str(V), str(cfg.get("log_vol", "0")), params,
                name=str(cfg.get("name", "custom")),
            )
    except KeyError as exc:
        raise UsageError(str(exc.args[0]) if exc.args else str(exc)) from exc
    except (exprdsl.ExprSyntaxError, exprdsl.UnknownIdentifier) as exc:
        raise UsageError(f"expression error: {exc}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return s, mode


def _floats(text: str, what: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse {what} {text!r}") from exc


def parse_region(text: str, dim: int) -> List[Tuple[float, float]]:
    toks = text.split(",")
    if len(toks) != dim:
        raise UsageError(f"region has {len(toks)} axes, structure has {dim}")
    out = []
    for t in toks:
        parts = t.rsplit(":", 1) if t.count(":") == 1 else None
        if not parts:
            raise UsageError(f"region axis {t!r} must be lo:hi")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise UsageError(f"region axis {t!r} must be lo:hi") from exc
        if hi < lo:
            raise UsageError(f"region axis {t!r} has hi < lo")
        out.append((lo, hi))
    return out


def parse_grid(text: str, dim: int) -> List[int]:
    toks = text.split(",")
    if len(toks) != dim:
        raise UsageError(f"grid has {len(toks)} entries, structure has {dim}")
    try:
        g = [int(t) for t in toks]
    except ValueError as exc:
        raise UsageError(f"cannot parse grid {text!r}") from exc
    if any(k < 1 for k in g):
        raise UsageError("grid sizes must be positive")
    return g


def _point(text: str, dim: int) -> np.ndarray:
    p = _floats(text, "point")
    if len(p) != dim:
        raise UsageError(f"point has {len(p)} coordinates, structure has {dim}")
    return np.array(p)


def _emit(obj, as_json: bool, text: str) -> None:
    if as_json:
        sys.stdout.write(json.dumps(obj, sort_keys=True, allow_nan=True) + "\n")
    else:
        sys.stdout.write(text)


def _fmt_matrix(name: str, M: np.ndarray) -> str:
    rows = ["  [" + ", ".join(f"{v: .10g}" for v in r) + "]" for r in np.atleast_2d(M)]
    return f"{name} =\n" + "\n".join(rows) + "\n"


# commands ----------------------------------------------------------------------


def cmd_tensor(args) -> int:
    s, mode = structure_from(args)
    x = _point(args.point, s.dim)
    cm = bo.extract_A(s, x[None, :], mode)
    A = cm.A[0]
    lam = bound.lambda_min(A)
    out = {
        "structure": s.name,
        "coords": list(s.coords),
        "point": x.tolist(),
        "mode": mode,
        "A": A.tolist(),
        "RG_ab": cm.RG_ab[0].tolist(),
        "R_zb": cm.R_zb[0].tolist(),
        "R_rho": cm.R_rho[0].tolist(),
        "lambda_min": lam,
        "lambda_residual": float(np.max(cm.lam.residual)),
    }
    text = (
        f"structure {s.name} at ({', '.join(f'{c}={v:g}' for c, v in zip(s.coords, x))}), shift mode {mode}\n"
        + _fmt_matrix("A", A)
        + _fmt_matrix("R^G_ab", cm.RG_ab[0])
        + _fmt_matrix("R_zb", cm.R_zb[0])
        + _fmt_matrix("R_rho", cm.R_rho[0])
        + f"lambda_min(A) = {lam:.12g}\n"
    )
    _emit(out, args.json, text)
    return EXIT_OK


def cmd_scan(args) -> int:
    s, mode = structure_from(args)
    region = parse_region(args.region, s.dim)
    grid = parse_grid(args.grid, s.dim)
    try:
        res = bound.scan_region(s, region, grid, mode, keep_A=True, threads=max(1, args.threads))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.out:
        bound.write_scan_csv(res, args.out, with_A=not args.no_A)
    summ = res.summary()
    summ["structure"] = s.name
    summ["mode"] = mode
    if args.out:
        summ["csv"] = args.out
    if args.json:
        _emit(summ, True, "")
    else:
        sys.stdout.write(json.dumps(summ, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    s, mode = structure_from(args)
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    rng = np.random.default_rng(args.seed)
    region = parse_region(args.region, s.dim) if args.region else [(-1.0, 1.0)] * s.dim
    lo = np.array([a for a, _ in region])
    hi = np.array([b for _, b in region])
    pts = lo + (hi - lo) * rng.random((args.trials, s.dim))
    fj = bo.random_cubics(rng, pts)
    pe = st.evaluate(s, pts, order=2)
    chk = bo.bochner_terms(pe, fj, mode, s, check=False)
    r = chk.residual
    k = int(np.nanargmax(r)) if np.any(np.isfinite(r)) else 0
    worst = float(r[k]) if np.isfinite(r[k]) else math.inf
    ok = bool(np.all(np.isfinite(r)) and worst <= VERIFY_TOL)
    fr = bo.frame_from_eval(pe)
    lam = bo.solve_lambda(fr, mode, s, check=False)
    out = {
        "structure": s.name,
        "mode": mode,
        "trials": args.trials,
        "seed": args.seed,
        "max_residual": worst,
        "worst_point": pts[k].tolist(),
        "worst_lhs": float(chk.lhs[k]),
        "worst_rhs": float(chk.rhs[k]),
        "lambda_residual_max": float(np.max(lam.residual)),
        "invariant_measure_residual": st.check_invariant_measure(s, pts),
        "tolerance": VERIFY_TOL,
        "ok": ok,
    }
    text = (
        f"structure {s.name}, {args.trials} trials (seed {args.seed}), shift mode {mode}\n"
        f"max residual {worst:.3e} at {pts[k].tolist()}\n"
        f"  lhs {chk.lhs[k]:.12g}  rhs {chk.rhs[k]:.12g}\n"
        f"shift constraint residual {out['lambda_residual_max']:.3e}\n"
        f"invariant measure residual {out['invariant_measure_residual']:.3e}\n"
        f"{'PASS' if ok else 'FAIL'} (tolerance {VERIFY_TOL:g})\n"
    )
    _emit(out, args.json, text)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_dissipate(args) -> int:
    s, mode = structure_from(args)
    if not args.t_end > 0:
        raise UsageError(f"--t-end must be positive, got {args.t_end}")
    box = parse_region(args.box, s.dim)
    if any(hi <= lo for lo, hi in box):
        raise UsageError("every box axis needs lo < hi")
    cells = parse_grid(args.cells, s.dim)
    if args.dt == "auto":
        dt: Any = "auto"
    else:
        try:
            dt = float(args.dt)
        except ValueError as exc:
            raise UsageError(f"--dt must be 'auto' or a number, got {args.dt!r}") from exc
        if not dt > 0:
            raise UsageError("--dt must be positive")
    try:
        rho_expr = exprdsl.parse(args.rho0, s.coords, s.params)
    except (exprdsl.ExprSyntaxError, exprdsl.UnknownIdentifier) as exc:
        raise UsageError(f"--rho0: {exc}") from exc
    try:
        rho0 = dy.from_function(box, cells, lambda c: exprdsl.eval_jet(rho_expr, c, 0).v)
        final, diag = dy.fp_run(s, rho0, args.t_end, dt, samples=args.samples)
    except dy.BadInitial as exc:
        raise UsageError(f"--rho0: {exc}") from exc
    if args.kappa is not None:
        kappa = float(args.kappa)
    else:
        centers = dy.cell_centers(box, cells).reshape(-1, s.dim)
        cm = bo.extract_A_frame(bo.build_frame(s, centers), mode, s, allow_singular=True)
        kappa = float(np.nanmin(bound.lambda_min(cm.A)))
    rep = dy.verify_dissipation(diag, kappa)
    if args.out:
        diag.write_csv(args.out)
    if args.snapshot:
        final.save(args.snapshot)
    mass_drift = abs(diag.mass[-1] - diag.mass[0]) / diag.mass[0]
    out = rep.to_dict()
    out.update(
        structure=s.name,
        steps=diag.steps,
        dt=diag.dt,
        samples=len(diag.t),
        kl_initial=diag.kl[0],
        kl_final=diag.kl[-1],
        fisher_az_initial=diag.fisher_az[0],
        mass_drift=mass_drift,
        clip_events=diag.clip_events,
        clipped_cells=diag.clipped_cells,
        max_step_kl_increase=diag.max_step_kl_increase,
    )
    if args.out:
        out["csv"] = args.out
    if args.json:
        _emit(out, True, "")
    else:
        sys.stdout.write(json.dumps(out, sort_keys=True, indent=2) + "\n")
    return EXIT_OK if rep.ok else EXIT_FAIL


# parser --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="structure config file (YAML or JSON)")
    p.add_argument("--preset", help=f"built-in structure: {', '.join(st.PRESETS)}")
    p.add_argument("--V", help="potential V as an expression")
    p.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="named parameter; the value may be an expression (repeatable)")
    p.add_argument("--mode", choices=("least_squares", "preset"), help="how the shift vectors are chosen")
    p.add_argument("--json", action="store_true", help="print a single JSON document")
    p.add_argument("-d", "--d", dest="finite_d", default=None,
                   help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gammaz", description="Gamma-z curvature tensors and CD(kappa, inf) bounds.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tensor", help="curvature matrix A and its parts at one point")
    _common(p)
    p.add_argument("--point", required=True, help="comma-separated coordinates")
    p.set_defaults(func=cmd_tensor)

    p = sub.add_parser("scan", help="lambda_min(A) over a grid")
    _common(p)
    p.add_argument("--region", required=True, help='per-axis lo:hi, e.g. "-1:1,-1:1,0:0"')
    p.add_argument("--grid", required=True, help="nodes per axis, e.g. 81,81,1")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--no-A", action="store_true", help="omit the A columns from the CSV")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("verify", help="check the Bochner identity at random points")
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region", help="sampling box, default [-1,1] per axis")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dissipate", help="Fokker-Planck run with entropy diagnostics")
    _common(p)
    p.add_argument("--box", required=True, help='per-axis lo:hi, e.g. "-6:6"')
    p.add_argument("--cells", required=True, help="cells per axis, e.g. 512")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dt", default="auto")
    p.add_argument("--rho0", default="1", help="initial density (unnormalized expression)")
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--kappa", type=float, help="override the curvature bound (default: min over cell centres)")
    p.add_argument("--out", help="diagnostics CSV path")
    p.add_argument("--snapshot", help="final density (binary + .json sidecar)")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the run is deterministic")
    p.set_defaults(func=cmd_dissipate)
    return ap


_VALUED = ("--point", "--region", "--grid", "--box", "--cells", "--V", "--rho0", "--param", "--kappa", "--t-end", "--dt")


def _glue(argv: Sequence[str]) -> List[str]:
    # argparse would read "-0.2:0.2,..." as an option; glue such values to their flag
    out: List[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUED:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    argv = _glue(sys.argv[1:] if argv is None else list(argv))
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    if getattr(args, "finite_d", None) is not None:
        sys.stderr.write(
            "gammaz: finite-dimensional CD(kappa, d) is not evaluated; the trace term has no "
            "definition in this setting. Only CD(kappa, inf) is supported, so drop the d flag.\n"
        )
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"gammaz: {exc}\n")
        return EXIT_USAGE
    except (bo.SingularFrame, bo.AssumptionUnsatisfied, DomainError, bound.NonpositiveKappa) as exc:
        sys.stderr.write(f"gammaz: degenerate: {type(exc).__name__}: {exc}\n")
        return EXIT_DEGENERATE
    except dy.Unstable as exc:
        sys.stderr.write(f"gammaz: degenerate: {exc}\n")
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
