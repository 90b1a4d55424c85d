"""Batch front end: simulate/ingest -> validate -> synthesize -> verify.

All randomness sits behind ``--seed``; reruns with identical flags produce
byte-identical output files.  Exit code 0 means every requested stage
succeeded; infeasible syntheses and failed audits exit nonzero and never
emit certificate files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import experiment, verify
from .basis import BasisSpec, make_basis, validate_basis
from .experiment import (
    BUILTIN_SYSTEMS,
    DataFormatError,
    GroundTruth,
    NoNoise,
    ProportionalNoise,
    UniformNoise,
)
from .sdpsolve import SolveOptions, solve
from .soscompile import Method, SynthesisProblem, build, compile
from .verify import Certificate, extract, lyapunov_audit, simulate_ring

log = logging.getLogger("polystab")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_AUDIT_FAILED = 3


def _setup_logging():
    level = os.environ.get("POLY_STAB_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.split(",") if tok])


def _parse_degree_range(text: str, what: str) -> tuple[int, int]:
    # "deg:1-3" or "deg:1"
    if not text.startswith("deg:"):
        raise ValueError(f"{what} must look like deg:1-3, got {text!r}")
    body = text[4:]
    if "-" in body:
        lo, hi = body.split("-", 1)
        return int(lo), int(hi)
    return 1, int(body)


def _parse_noise(text: str):
    if text == "none":
        return NoNoise()
    kind, _, arg = text.partition(":")
    if kind == "prop":
        return ProportionalNoise(float(arg))
    if kind == "uniform":
        return UniformNoise(float(arg))
    raise ValueError(f"unknown noise model {text!r} (prop:<g> | uniform:<d> | none)")


def _parse_input(text: str):
    if text == "sin":
        return lambda t: np.array([np.sin(t)])
    if text == "zero":
        return lambda t: np.array([0.0])
    kind, _, arg = text.partition(":")
    if kind == "const":
        val = float(arg)
        return lambda t: np.array([val])
    raise ValueError(f"unknown input signal {text!r} (sin | zero | const:<v>)")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return cfg


def _merged(args: argparse.Namespace, cfg: dict, key: str, default=None):
    """Flag value if given on the command line, else config file, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    return cfg.get(key, default)


def _basis_from_args(system: GroundTruth, basis_text: str, zhat_text: str) -> BasisSpec:
    dmin, dmax = _parse_degree_range(basis_text, "--basis")
    _, dmax_hat = _parse_degree_range(zhat_text, "--zhat")
    return make_basis(n=system.n, m=system.m, dmax=dmax, dmin=dmin, dmax_hat=dmax_hat)


def _emit(path: Path):
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    name = _merged(args, cfg, "system", "vanderpol")
    if name not in BUILTIN_SYSTEMS:
        log.error("unknown system %r (choices: %s)", name, ", ".join(BUILTIN_SYSTEMS))
        return EXIT_ERROR
    gt = BUILTIN_SYSTEMS[name]()
    spec = _basis_from_args(gt, _merged(args, cfg, "basis", "deg:1-3"),
                            _merged(args, cfg, "zhat", "deg:1"))
    diag = validate_basis(spec)
    if not diag.passed:
        log.error("basis validation failed:\n%s", diag)
        return EXIT_ERROR

    x0 = _parse_floats(str(_merged(args, cfg, "x0", "0.1")))
    ds = experiment.simulate_experiment(
        gt, spec, x0=x0,
        input_signal=_parse_input(_merged(args, cfg, "input", "sin")),
        t0=float(_merged(args, cfg, "t0", 0.0)),
        tau=float(_merged(args, cfg, "tau", 0.5)),
        T=int(_merged(args, cfg, "T", 12)),
        noise=_parse_noise(_merged(args, cfg, "noise", "none")),
        seed=int(_merged(args, cfg, "seed", 0)),
    )

    bound = _merged(args, cfg, "bound", None)
    if bound and bound != "none":
        kind, _, arg = bound.partition(":")
        if kind == "snr":
            ds = experiment.make_noise_bound(ds, "snr", float(arg))
        elif kind == "zero" or (kind == "snr" and not arg):
            ds = experiment.make_noise_bound(ds, "absolute", np.zeros((gt.n, 1)))
        elif kind == "file":
            with open(arg) as fh:
                ds = experiment.make_noise_bound(ds, "absolute", json.load(fh)["RD"])
        else:
            log.error("unknown bound %r (snr:<g> | zero | file:<json> | none)", bound)
            return EXIT_ERROR
    elif bound == "none":
        pass

    rich = experiment.validate_richness(ds, spec)
    print(rich)

    out = Path(_merged(args, cfg, "out", f"{name}.csv"))
    experiment.export_dataset(ds, out)
    _emit(out)
    _emit(Path(str(out) + ".bounds.json"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------

METHOD_NAMES = {m.value: m for m in Method}
ALL_METHODS = ["remark1", "thm2", "cor1", "lsq"]


def run_synthesis(ds, spec, method: Method, *, deg_y=2, deg_eps1=2, deg_eps2=2,
                  rho=1e-3, delta=1e-6, eps1_shift="const",
                  solver="auto", tol=1e-8, max_iter=500, objective=None):
    """Build, compile, solve and extract one method; returns a result record."""
    t0 = time.perf_counter()
    problem = SynthesisProblem(method=method, spec=spec, data=ds, deg_YK=deg_y,
                               deg_eps1=deg_eps1, deg_eps2=deg_eps2,
                               delta=delta, rho=rho, eps1_shift=eps1_shift)
    program = build(problem)
    inst = compile(program, objective=objective)
    report = solve(inst, SolveOptions(solver=solver, tol_feas=tol, max_iter=max_iter))
    wall = time.perf_counter() - t0
    cert = extract(program, report) if report.is_feasible else None
    return {"method": method, "program": program, "instance": inst,
            "report": report, "certificate": cert, "wall_time": wall}


def cmd_synthesize(args) -> int:
    cfg = _load_config(args.config)
    sysname = _merged(args, cfg, "system", "vanderpol")
    if sysname not in BUILTIN_SYSTEMS:
        log.error("unknown system %r", sysname)
        return EXIT_ERROR
    gt = BUILTIN_SYSTEMS[sysname]()
    spec = _basis_from_args(gt, _merged(args, cfg, "basis", "deg:1-3"),
                            _merged(args, cfg, "zhat", "deg:1"))
    try:
        ds = experiment.ingest(args.data, spec)
    except DataFormatError as exc:
        log.error("%s", exc)
        return EXIT_ERROR

    rb = _merged(args, cfg, "rb", None)
    if rb:
        if rb == "eye":
            ds = experiment.set_input_bound(ds, np.eye(gt.n))
        elif rb.startswith("file:"):
            with open(rb[5:]) as fh:
                ds = experiment.set_input_bound(ds, json.load(fh)["RB"])
        else:
            log.error("unknown --rb %r (eye | file:<json>)", rb)
            return EXIT_ERROR

    method_arg = _merged(args, cfg, "method", "all")
    if method_arg == "all":
        names = list(ALL_METHODS)
        if ds.RB is not None:
            names.insert(0, "thm1")
    else:
        names = [tok.strip() for tok in method_arg.split(",")]
    bad = [nm for nm in names if nm not in METHOD_NAMES]
    if bad:
        log.error("unknown method(s) %s", bad)
        return EXIT_ERROR

    rich = experiment.validate_richness(ds, spec)
    print(rich)

    knobs = dict(
        deg_y=int(_merged(args, cfg, "deg-y", 2)),
        deg_eps1=int(_merged(args, cfg, "deg-eps1", 2)),
        deg_eps2=int(_merged(args, cfg, "deg-eps2", 2)),
        rho=float(_merged(args, cfg, "rho", 1e-3)),
        delta=float(_merged(args, cfg, "delta", 1e-6)),
        eps1_shift=_merged(args, cfg, "eps1-shift", "const"),
        solver=_merged(args, cfg, "solver", "auto"),
        tol=float(_merged(args, cfg, "tol", 1e-8)),
        max_iter=int(_merged(args, cfg, "max-iter", 500)),
    )

    def one(name):
        return name, run_synthesis(ds, spec, METHOD_NAMES[name], **knobs)

    results = {}
    if args.parallel and len(names) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=min(4, len(names))) as pool:
            for name, res in pool.map(one, names):
                results[name] = res
    else:
        for name in names:
            results[name] = one(name)[1]

    prefix = Path(_merged(args, cfg, "out", "synth"))
    certs, timings, var_counts, iters, failures = [], {}, {}, {}, []
    for name in names:
        res = results[name]
        rep = res["report"]
        timings[name] = res["wall_time"]
        var_counts[name] = res["instance"].nv
        iters[name] = rep.iterations
        print(f"{name}: {rep.status} ({rep.iterations} iters, {res['wall_time']:.2f}s, "
              f"{res['instance'].nv} decision vars)")
        if res["certificate"] is not None:
            certs.append(res["certificate"])
            cert_path = Path(f"{prefix}_{name}.cert.json")
            with open(cert_path, "w") as fh:
                json.dump(res["certificate"].to_dict(), fh, indent=1, sort_keys=True)
            _emit(cert_path)
        else:
            failures.append(name)
            log.error("%s: no certificate emitted (%s) %s", name, rep.status, rep.message)

    if certs:
        comparison = verify.report(certs, timings=timings, var_counts=var_counts,
                                   iterations=iters)
        report_path = Path(f"{prefix}_report.txt")
        report_path.write_text(comparison.render() + "\n")
        print(comparison.render())
        _emit(report_path)

    return EXIT_OK if not failures else EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    with open(args.certificate) as fh:
        cert = Certificate.from_dict(json.load(fh))

    sysname = _merged(args, cfg, "system", "vanderpol")
    if sysname not in BUILTIN_SYSTEMS:
        log.error("unknown system %r", sysname)
        return EXIT_ERROR
    gt = BUILTIN_SYSTEMS[sysname]()

    box = float(_merged(args, cfg, "box", 3.0))
    nsamples = int(_merged(args, cfg, "nsamples", 10_000))
    t_end = float(_merged(args, cfg, "t-end", 20.0))
    dt = float(_merged(args, cfg, "dt", 1e-3))
    n_ics = int(_merged(args, cfg, "ics", 10))

    audit = lyapunov_audit(cert, gt, box=box, nsamples=nsamples)
    print(audit)

    prefix = Path(_merged(args, cfg, "out", Path(args.certificate).stem))
    converged = True
    try:
        trajectories = simulate_ring(cert, gt, box=box, count=n_ics, t_end=t_end, dt=dt)
    except experiment.DivergenceError as exc:
        log.error("closed-loop simulation diverged: %s", exc)
        return EXIT_AUDIT_FAILED
    for i, traj in enumerate(trajectories):
        path = traj.write_csv(Path(f"{prefix}_traj_{i}.csv"))
        _emit(path)
        final = traj.final_norm()
        if final > 1e-3:
            converged = False
            log.error("trajectory %d: |x(%g)| = %.3e > 1e-3", i, t_end, final)
    print(f"trajectories converged: {'yes' if converged else 'NO'}")

    if not audit.passed or not converged:
        return EXIT_AUDIT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poly-stab",
        description="Data-driven stabilization of polynomial systems via SOS programs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an open-loop experiment, write data CSV")
    sim.add_argument("--system", help="built-in system name")
    sim.add_argument("--x0", help="comma-separated initial state")
    sim.add_argument("--input", help="input signal: sin | zero | const:<v>")
    sim.add_argument("--t0", type=float)
    sim.add_argument("--tau", type=float)
    sim.add_argument("--T", type=int)
    sim.add_argument("--noise", help="prop:<g> | uniform:<d> | none")
    sim.add_argument("--bound", help="snr:<g> | zero | file:<json> | none")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--basis", help="drift monomials, e.g. deg:1-3")
    sim.add_argument("--zhat", help="Lyapunov stack degree, e.g. deg:1")
    sim.add_argument("--config", help="YAML config file; flags override")
    sim.add_argument("-o", "--out", help="output CSV path")
    sim.set_defaults(func=cmd_simulate)

    syn = sub.add_parser("synthesize", help="run synthesis methods on a data file")
    syn.add_argument("data", help="experiment CSV (with .bounds.json sidecar)")
    syn.add_argument("--system", help="built-in system (for basis dimensions)")
    syn.add_argument("--basis", help="e.g. deg:1-3")
    syn.add_argument("--zhat", help="e.g. deg:1")
    syn.add_argument("--method", help="thm1|remark1|thm2|cor1|lsq|all (comma list ok)")
    syn.add_argument("--deg-y", dest="deg_y", type=int)
    syn.add_argument("--deg-eps1", dest="deg_eps1", type=int)
    syn.add_argument("--deg-eps2", dest="deg_eps2", type=int)
    syn.add_argument("--rho", type=float)
    syn.add_argument("--delta", type=float)
    syn.add_argument("--eps1-shift", dest="eps1_shift", choices=["const", "quadratic"])
    syn.add_argument("--rb", help="input-matrix bound: eye | file:<json>")
    syn.add_argument("--solver")
    syn.add_argument("--tol", type=float)
    syn.add_argument("--max-iter", dest="max_iter", type=int)
    syn.add_argument("--parallel", action="store_true")
    syn.add_argument("--config")
    syn.add_argument("-o", "--out", help="output prefix")
    syn.set_defaults(func=cmd_synthesize)

    ver = sub.add_parser("verify", help="audit a certificate against the true system")
    ver.add_argument("certificate", help="certificate JSON")
    ver.add_argument("--system")
    ver.add_argument("--box", type=float)
    ver.add_argument("--nsamples", type=int)
    ver.add_argument("--t-end", dest="t_end", type=float)
    ver.add_argument("--dt", type=float)
    ver.add_argument("--ics", type=int)
    ver.add_argument("--config")
    ver.add_argument("-o", "--out", help="output prefix")
    ver.set_defaults(func=cmd_verify)

    return parser


def _join_negative_values(argv: list[str]) -> list[str]:
    """Turn ``--x0 -0.1,0.1`` into ``--x0=-0.1,0.1`` so argparse accepts it."""
    out = []
    skip = False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok == "--x0" and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            skip = True
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(_join_negative_values(list(argv)))
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
