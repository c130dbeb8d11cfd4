"""Command-line interface.

Exit codes: 0 success, 1 usage or parse error, 2 synthesis infeasible
(singular rates, trace leaks, failed frame tracking), 3 verification failed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .eigenflow import frame_flow
from .errors import (
    DegenerateTrackingFailure,
    GridMismatch,
    InfeasibleTrace,
    LindbladResignError,
    OffDiagonalResidualTooLarge,
    ParseError,
    SingularRate,
    TraceLeak,
)
from .evolution import LindbladGenerator, integrate, verify_reconstruction
from .fileio import (
    read_json,
    read_matrix_file,
    read_rates,
    read_trajectory,
    write_json,
    write_matrix_file,
    write_rates,
    write_table,
    write_trajectory,
)
from .models import MODELS, library_models, model_defaults
from .synthesis import (
    JumpSpec,
    RateProblem,
    SignPolicy,
    assemble_generator,
    compensate,
    synthesize,
)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3
INFEASIBLE = (SingularRate, InfeasibleTrace, TraceLeak, OffDiagonalResidualTooLarge,
              DegenerateTrackingFailure)
THREADS_ENV = "LINDBLAD_RESIGN_THREADS"


class UsageError(LindbladResignError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- argument helpers -------------------------------------------------------


def parse_value(text: str):
    for kind in (int, float, complex):
        try:
            return kind(text)
        except ValueError:
            continue
    raise UsageError(f"cannot parse parameter value {text!r}")


def parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        out[key] = parse_value(value)
    return out


_SIGN_TOKENS = {"+": 1, "+1": 1, "1": 1, "nonneg": 1, "-": -1, "-1": -1, "nonpos": -1,
                "0": 0, "any": 0}


def parse_policy(text: str, dim: int) -> SignPolicy:
    """``nonneg``, ``nonpos``, ``alternating`` or ``file:<path>``.

    A policy file lists one sign per round (``+``, ``-``, ``any``; also
    ``+1``/``-1``/``0``), separated by whitespace or commas; ``#`` starts a
    comment.
    """
    if text == "nonneg":
        return SignPolicy.nonnegative()
    if text == "nonpos":
        return SignPolicy.nonpositive()
    if text == "alternating":
        return SignPolicy.alternating(dim)
    if text.startswith("file:"):
        path = Path(text[5:])
        try:
            raw = path.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read policy file: {exc}") from None
        signs = []
        for lineno, line in enumerate(raw.splitlines(), start=1):
            for tok in line.split("#", 1)[0].replace(",", " ").split():
                if tok not in _SIGN_TOKENS:
                    raise ParseError(path, lineno, f"unknown sign {tok!r}")
                signs.append(_SIGN_TOKENS[tok])
        policy = SignPolicy.per_round(signs)
        try:
            policy.check_dim(dim)
        except ValueError as exc:
            raise ParseError(path, 1, str(exc)) from None
        return policy
    raise UsageError(f"unknown policy {text!r}")


def parse_singularity(text: str):
    if text == "error":
        return "error", None
    if text.startswith("cap:"):
        try:
            gmax = float(text[4:])
        except ValueError:
            gmax = -1.0
        if not gmax > 0:
            raise UsageError(f"cap mode needs a positive gamma_max, got {text!r}")
        return "cap", gmax
    raise UsageError(f"--singularity must be 'error' or 'cap:<gamma_max>', got {text!r}")


def model_grid(t_start: float, t_end: float, dt: float, refine: int = 1) -> np.ndarray:
    if not t_end > t_start or not dt > 0 or refine < 1:
        raise UsageError("need t_end > t_start, dt > 0 and grid refinement >= 1")
    intervals = max(2, int(round((t_end - t_start) / dt))) * refine
    return np.linspace(t_start, t_end, intervals + 1)


@dataclass
class RunConfig:
    policy: str = "nonneg"
    eps_f: float | None = None
    eps_p: float = 1e-10
    tol_offdiag: float | None = None
    substeps: int = 1
    singularity: str = "error"
    resolve_factor: float | None = 1.0
    grid_refine: int = 1

    def __post_init__(self):
        for name in ("eps_f", "tol_offdiag", "resolve_factor"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise UsageError(f"{name} must be positive")
        if not self.eps_p > 0:
            raise UsageError("eps_p must be positive")
        if self.substeps < 1:
            raise UsageError("substeps must be >= 1")
        parse_singularity(self.singularity)


@dataclass
class InputSpec:
    path: str | None = None
    model: str | None = None
    params: dict | None = None
    t_start: float = 0.0
    t_end: float = 1.0
    dt: float = 1e-3

    def describe(self) -> str:
        if self.path:
            return f"file:{self.path}"
        params = ",".join(f"{k}={v}" for k, v in sorted((self.params or {}).items()))
        return f"model:{self.model}({params})"


def load_input(spec: InputSpec, refine: int = 1, times=None):
    """Return ``(times, rhos, rhodots)``; ``rhodots`` is None for file inputs."""
    if spec.path:
        if refine != 1:
            raise UsageError("--grid-refine only applies to model inputs")
        t, rhos, _ = read_trajectory(spec.path)
        return t, rhos, None
    if spec.model is None:
        raise UsageError("give --input or --model")
    try:
        model = library_models(spec.model, **(spec.params or {}))
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if times is None:
        times = model_grid(spec.t_start, spec.t_end, spec.dt, refine)
    rhos, rhodots = model.states(times)
    return times, rhos, rhodots


# --- synthesize -------------------------------------------------------------


def _summary(result, config: RunConfig, spec: InputSpec, status="ok"):
    rates = [abs(t.rate) for terms in result.terms for t in terms]
    return {
        "status": status,
        "input": spec.describe(),
        "policy": str(result.policy),
        "dim": int(result.f.shape[1]),
        "points": int(result.times.shape[0]),
        "t_start": float(result.times[0]),
        "t_end": float(result.times[-1]),
        "singularity": config.singularity,
        "eps_p": config.eps_p,
        "eps_f": config.eps_f,
        "resolve_factor": config.resolve_factor,
        "compliance": result.compliance(),
        "max_terms": result.max_terms,
        "max_abs_rate": max(rates, default=0.0),
        "max_deficit": float(np.max(np.abs(result.deficit))),
        "max_offdiag_residual": float(np.max(result.offdiag_residual)),
        "max_hermiticity_residual": float(np.max(result.hermiticity_residual)),
        "max_abs_H": float(np.max(np.abs(result.H))),
        "singular_intervals": result.intervals["singular"],
        "capped_intervals": result.intervals["capped"],
        "excluded_indices": [int(n) for n in np.flatnonzero(result.generator.excluded)],
    }


def _sidecar(out: Path, argv):
    write_json(out / "run.json", {
        "argv": list(argv or []),
        "created": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
    })


def synthesize_to_dir(spec: InputSpec, config: RunConfig, out: Path, argv=None) -> int:
    out.mkdir(parents=True, exist_ok=True)
    times, rhos, rhodots = load_input(spec, config.grid_refine)
    d = rhos.shape[1]
    policy = parse_policy(config.policy, d)
    mode, gmax = parse_singularity(config.singularity)
    _sidecar(out, argv)
    try:
        result = synthesize(
            times, rhos, policy, rhodots, eps_f=config.eps_f, eps_p=config.eps_p,
            tol_offdiag=config.tol_offdiag, singularity=mode, gamma_max=gmax,
            resolve_factor=config.resolve_factor,
        )
    except SingularRate as exc:
        write_json(out / "summary.json", {
            "status": "singular",
            "input": spec.describe(),
            "policy": str(policy),
            "singularity": config.singularity,
            "singular_intervals": exc.intervals,
        })
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    write_rates(out / "rates.csv", result.times, result.terms)
    U = np.array([fr.U for fr in result.frames])
    write_matrix_file(out / "operators.txt", result.times, {"U": U, "H": result.H},
                      {"policy": str(policy)})
    write_json(out / "summary.json", _summary(result, config, spec))
    return EXIT_OK


def _synth_worker(args):
    spec, config, out, argv = args
    try:
        return synthesize_to_dir(spec, config, out, argv)
    except INFEASIBLE as exc:
        print(f"error: {spec.describe()}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except LindbladResignError as exc:
        print(f"error: {spec.describe()}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, min(limit, n_jobs))


def cmd_synthesize(args) -> int:
    config = _config(args)
    out = Path(args.out)
    if args.input and len(args.input) > 1:
        stems = [Path(path).stem for path in args.input]
        names = [s if stems.count(s) == 1 else f"{s}_{i}" for i, s in enumerate(stems)]
        jobs = [(_input_spec(args, path), config, out / name, args.argv)
                for path, name in zip(args.input, names)]
        workers = worker_count(len(jobs))
        if workers == 1:
            codes = [_synth_worker(job) for job in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                codes = list(pool.map(_synth_worker, jobs))
        return max(codes)
    spec = _input_spec(args, args.input[0] if args.input else None)
    return synthesize_to_dir(spec, config, out, args.argv)


# --- verify -----------------------------------------------------------------


def load_generator(artifacts: Path) -> LindbladGenerator:
    """Rebuild the lab-frame generator from ``operators.txt`` and ``rates.csv``."""
    ops = read_matrix_file(artifacts / "operators.txt")
    for name in ("U", "H"):
        if name not in ops.fields:
            raise ParseError(artifacts / "operators.txt", 1, f"missing field {name!r}")
    summary = read_json(artifacts / "summary.json")
    times = ops.times
    terms = read_rates(artifacts / "rates.csv", times.shape[0], ops.dim)

    frames = [SimpleNamespace(t=t, U=U) for t, U in zip(times, ops.fields["U"])]
    excluded = np.zeros(times.shape[0], bool)
    excluded[list(summary.get("excluded_indices", []))] = True
    return assemble_generator(frames, terms, ops.fields["H"], excluded=excluded)


def cmd_verify(args) -> int:
    artifacts = Path(args.artifacts)
    out = Path(args.out) if args.out else artifacts
    out.mkdir(parents=True, exist_ok=True)
    gen = load_generator(artifacts)
    spec = _input_spec(args, args.input[0] if args.input else None)
    if spec.path:
        times, rhos, _ = load_input(spec)
    else:
        times, rhos, _ = load_input(spec, times=gen.times)
    if times.shape != gen.times.shape or not np.allclose(times, gen.times, rtol=1e-12, atol=0):
        raise GridMismatch("input grid differs from the artifact grid")
    report = verify_reconstruction(times, rhos, gen, substeps=args.substeps)
    passed = report.passed(args.bound)

    def _at(arr):
        if not np.any(np.isfinite(arr)):
            return None
        return float(times[int(np.nanargmax(arr))])

    write_json(out / "report.json", {
        "passed": passed,
        "bound": args.bound,
        "max_state_error": report.max_state_error,
        "max_rhs_error": report.max_rhs_error,
        "worst_state_t": _at(report.state_error),
        "worst_rhs_t": _at(report.rhs_error),
        "trace_drift": report.trace_drift,
        "trace_drift_rate": report.trace_drift_rate,
        "min_eigenvalue": report.min_eigenvalue,
        "excluded_intervals": report.excluded_intervals,
        "points": int(times.shape[0]),
    })
    write_table(out / "report_points.csv", ["t", "state_error", "rhs_error", "excluded"], (
        [float(t), None if math.isnan(s) else float(s), None if math.isnan(r) else float(r),
         int(x)]
        for t, s, r, x in zip(times, report.state_error, report.rhs_error, report.excluded)
    ))
    status = "PASS" if passed else "FAIL"
    print(f"{status}: max_state_error={report.max_state_error:.3e} (bound {args.bound:.1e}), "
          f"max_rhs_error={report.max_rhs_error:.3e}")
    return EXIT_OK if passed else EXIT_VERIFY


# --- simulate, demo, models -------------------------------------------------


def cmd_simulate(args) -> int:
    spec = _input_spec(args, None)
    if spec.model is None:
        raise UsageError("simulate needs --model")
    try:
        model = library_models(spec.model, **(spec.params or {}))
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    times = model_grid(spec.t_start, spec.t_end, spec.dt, args.grid_refine)
    if model.hamiltonian is not None:
        rho0 = model.states(times[:1])[0][0]
        gen = LindbladGenerator(
            times=times,
            H=np.broadcast_to(model.hamiltonian, (times.shape[0],) + model.hamiltonian.shape),
            terms=[tuple(model.jumps)] * times.shape[0],
        )
        rhos = integrate(rho0, gen, substeps=args.substeps)
        how = f"RK4 with {args.substeps} substep(s) per interval"
    else:
        rhos, _ = model.states(times)
        how = "closed-form samples"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "trajectory.txt", times, rhos, tol=args.tol, layout=args.layout,
                     comment=f"{spec.describe()}, {how}")
    _sidecar(out, args.argv)
    return EXIT_OK


def demo_rows(params: dict, times, resolve_factor: float | None = 1.0):
    """Rows ``(t, lambda1, lambda1_dot, g1+, g2+, g1-, g2-)`` for the JC model.

    Rates at singular points are None.
    """
    model = library_models("jc", **params)
    rhos, rhodots = model.states(times)
    flow = frame_flow(times, rhos, rhodots)
    lower = JumpSpec(1, 0, False, 2)
    raise_ = JumpSpec(1, 0, True, 2)
    dt = np.diff(times)
    spacing = np.maximum(np.concatenate([[dt[0]], dt]), np.concatenate([dt, [dt[-1]]]))
    rows = []
    for n, frame in enumerate(flow.frames):
        limit = math.inf if resolve_factor is None else resolve_factor / spacing[n]
        row = [float(times[n]), float(frame.p[0]), float(flow.f[n, 0])]
        for policy in (SignPolicy.nonnegative(), SignPolicy.nonpositive()):
            try:
                terms = compensate(RateProblem(frame.p, flow.f[n], t=frame.t, rate_limit=limit),
                                   policy)
            except SingularRate:
                row += [None, None]
                continue
            g1 = sum(t.rate for t in terms if t.spec == lower)
            g2 = sum(t.rate for t in terms if t.spec == raise_)
            row += [float(g1), float(g2)]
        rows.append(row)
    return rows


DEMO_COLUMNS = ["t", "lambda1", "lambda1_dot", "gamma1_nonneg", "gamma2_nonneg",
                "gamma1_nonpos", "gamma2_nonpos"]


def cmd_demo_jc(args) -> int:
    params = parse_params(args.param)
    defaults = model_defaults("jc")
    unknown = set(params) - set(defaults)
    if unknown:
        raise UsageError(f"jc model has no parameter(s) {sorted(unknown)}")
    times = model_grid(args.t_start, args.t_end, args.dt, args.grid_refine)
    rows = demo_rows(params, times, args.resolve_factor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "demo_jc.csv", DEMO_COLUMNS, rows)
    return EXIT_OK


def cmd_models(args) -> int:
    for name, (_, description) in MODELS.items():
        defaults = ", ".join(f"{k}={v}" for k, v in model_defaults(name).items())
        print(f"{name:18s} {description}\n{'':18s} params: {defaults}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _input_spec(args, path) -> InputSpec:
    return InputSpec(
        path=path,
        model=getattr(args, "model", None),
        params=parse_params(getattr(args, "param", None)),
        t_start=getattr(args, "t_start", 0.0),
        t_end=getattr(args, "t_end", 1.0),
        dt=getattr(args, "dt", 1e-3),
    )


def _config(args) -> RunConfig:
    return RunConfig(
        policy=args.policy, eps_f=args.eps_f, eps_p=args.eps_p, tol_offdiag=args.tol_offdiag,
        substeps=args.substeps, singularity=args.singularity,
        resolve_factor=None if args.resolve_factor == 0 else args.resolve_factor,
        grid_refine=args.grid_refine,
    )


def _add_input(p, multiple=False):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", action="append" if multiple else None, metavar="FILE",
                     type=str if multiple else (lambda s: [s]),
                     help="trajectory file" + (" (repeatable for batch runs)" if multiple else ""))
    src.add_argument("--model", help="built-in model name (see 'models')")
    p.add_argument("--param", action="append", metavar="K=V", help="model parameter")
    _add_grid(p)


def _add_grid(p, t_end=1.0, dt=1e-3):
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-end", type=float, default=t_end)
    p.add_argument("--dt", type=float, default=dt)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lindblad-resign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthesize", help="rates, operators and summary for a trajectory")
    _add_input(p, multiple=True)
    p.add_argument("--policy", default="nonneg",
                   help="nonneg | nonpos | alternating | file:<path>")
    p.add_argument("--eps-f", type=float, default=None)
    p.add_argument("--eps-p", type=float, default=1e-10)
    p.add_argument("--tol-offdiag", type=float, default=None)
    p.add_argument("--singularity", default="error", help="error | cap:<gamma_max>")
    p.add_argument("--resolve-factor", type=float, default=1.0,
                   help="flag rates with |gamma|*dt above this as singular (0 disables)")
    p.add_argument("--grid-refine", type=int, default=1)
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="re-integrate synthesized artifacts against the input")
    _add_input(p)
    p.add_argument("--artifacts", required=True, help="directory written by synthesize")
    p.add_argument("--bound", type=float, default=1e-4, help="max allowed state error")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--out", default=None, help="report directory (default: artifacts)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="write a model trajectory file")
    p.add_argument("--model", required=True)
    p.add_argument("--param", action="append", metavar="K=V")
    _add_grid(p)
    p.add_argument("--grid-refine", type=int, default=1)
    p.add_argument("--substeps", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--layout", choices=["dense", "sparse"], default="dense")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("demo-jc", help="JC rate curves for both sign policies (CSV)")
    p.add_argument("--param", action="append", metavar="K=V")
    _add_grid(p, t_end=4 * math.pi, dt=1e-2)
    p.add_argument("--grid-refine", type=int, default=1)
    p.add_argument("--resolve-factor", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo_jc)

    p = sub.add_parser("models", help="list built-in models")
    p.set_defaults(func=cmd_models)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except INFEASIBLE as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (LindbladResignError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
