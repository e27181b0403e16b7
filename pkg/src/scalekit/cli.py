"""Command-line front end.

Every report carries a ``manifest`` block (command line, resolved settings,
input hashes, tool version) that is enough to rerun it. Numbers in JSON output
are decimal strings so no precision is lost to binary floats.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from . import numkernel as nk
from .cusum import perf, solve_barrier
from .errors import (
    CensoredMajority,
    DefectiveModel,
    NumericalError,
    ParseError,
    SchemaError,
    TruncationWarning,
    ValidationError,
)
from .passage import passage_sn, passage_sp
from .modelbuild import Side
from .scalematrix import DEFAULT_NMAX, scale_eval
from .simkit import SimConfig, check_path_equivalence, simulate_cusum
from .specfile import bundled_path, content_hash, load_model
from . import tables

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CENSORED = 0, 1, 2, 3, 4


def _num(x, digits=None) -> str:
    return nk.fmt(x, digits)


def _matrix(m) -> list:
    return [[_num(v) for v in row] for row in m]


def _params(items) -> dict:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ValidationError(f"--param expects name=value, got {item!r}")
        out[name.strip()] = value.strip()
    return out


def _model_path(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    bundled = bundled_path(path.name)
    if bundled.exists():
        return bundled
    raise ParseError(f"model file {arg} not found")


def _without_workers(argv) -> list:
    """argv minus --workers, which changes wall time but never the results."""
    out, skip = [], False
    for item in argv:
        if skip:
            skip = False
        elif item == "--workers":
            skip = True
        elif not item.startswith("--workers="):
            out.append(item)
    return out


class Run:
    """Shared state for one invocation: settings, loaded inputs, captured warnings."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.inputs = {}
        self.caught = []

    @property
    def warnings(self) -> list:
        return [str(w.message) for w in self.caught if issubclass(w.category, TruncationWarning)]

    def load(self):
        path = _model_path(self.args.model)
        text = path.read_bytes()
        self.inputs[str(self.args.model)] = content_hash(text)
        return load_model(path, _params(self.args.param))

    def manifest(self, **extra) -> dict:
        a = self.args
        config = {"digits": nk.current_digits(), "n_max": getattr(a, "nmax", None)}
        for key in ("seed", "paths", "max_steps", "barrier", "beta", "tol"):
            if getattr(a, key, None) is not None:
                config[key] = str(getattr(a, key))
        if getattr(a, "param", None):
            config["params"] = _params(a.param)
        config.update(extra)
        return {"command": ["scalekit", *_without_workers(self.argv)], "config": config,
                "inputs": self.inputs, "version": __version__}

    def emit(self, payload: dict, csv_text: str | None = None):
        payload = {**payload, "warnings": self.warnings, "manifest": self.manifest()}
        if self.args.format == "csv" and csv_text is not None:
            header = "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n"
                             for k, v in (("manifest", payload["manifest"]), ("warnings", self.warnings)))
            text = header + csv_text
        else:
            text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if self.args.out:
            Path(self.args.out).write_text(text)
        else:
            sys.stdout.write(text)


def cmd_validate(run: Run) -> int:
    spec = run.load()
    model = spec.map_model()
    run.emit({"status": "ok", "side": spec.side.value, "dimension": model.dim,
              "kappa": None if spec.kappa is None else _num(spec.kappa)})
    return EXIT_OK


def _grid(arg: str):
    """'0,0.5,1' or 'start:stop:count'."""
    if ":" in arg:
        start, stop, count = arg.split(":")
        start, stop, count = nk.big(start), nk.big(stop), int(count)
        if count < 1:
            raise ValidationError("grid count must be positive")
        if count == 1:
            return [start]
        return [start + (stop - start) * i / (count - 1) for i in range(count)]
    return [nk.big(v) for v in arg.split(",") if v.strip()]


def cmd_scale(run: Run) -> int:
    spec = run.load()
    model = spec.map_model()
    part = run.args.part
    rows, evals = [], []
    for x in _grid(run.args.x):
        ev = scale_eval(model, x, run.args.nmax, parts=(part,))
        m = getattr(ev, part)
        rows.append([_num(x)] + [_num(v) for v in m.ravel()])
        evals.append({"x": _num(x), part: _matrix(m), "k_terms": ev.k_terms_used,
                      "tail_ratio": _num(ev.tail_ratio, 6), "truncated": ev.truncated})
    n = model.dim
    head = ["x"] + [f"{part}[{i}][{j}]" for i in range(n) for j in range(n)]
    k_terms = max(e["k_terms"] for e in evals)
    csv_text = (f"# precision: {nk.current_digits()}\n# n_max: {run.args.nmax}\n# k_terms: {k_terms}\n"
                + ",".join(head) + "\n" + "".join(",".join(r) + "\n" for r in rows))
    run.emit({"part": part, "dimension": n, "values": evals}, csv_text)
    return EXIT_OK


def cmd_passage(run: Run) -> int:
    spec = run.load()
    model = spec.map_model()
    if model.side == Side.SN:
        res = passage_sn(model, run.args.level, run.args.nmax)
    else:
        res = passage_sp(model, run.args.level, run.args.start, run.args.nmax)
    run.emit({"side": res.side.value, "a": _num(res.a), "x0": _num(res.x0),
              "phase_dist": _matrix(res.phase_dist),
              "arrivals_by_phase": None if res.arrivals_by_phase is None else _matrix(res.arrivals_by_phase),
              "notes": list(res.notes)})
    return EXIT_OK


def _require(run: Run, name: str):
    if getattr(run.args, name) is None:
        raise ValidationError(f"--{name} is required for {run.args.command}")


def cmd_perf(run: Run) -> int:
    _require(run, "barrier")
    spec = run.load()
    r = perf(spec.problem(run.args.barrier), run.args.nmax)
    meta = {k: (_num(v, 6) if k == "tail_ratio" else v) for k, v in r.meta.items()}
    values = {m: _num(getattr(r, m)) for m in ("ARL", "ADD", "PFA")}
    csv_text = "measure,value\n" + "".join(f"{m},{v}\n" for m, v in values.items())
    run.emit({**values, "barrier": _num(r.barrier), "side": r.side.value, "meta": meta}, csv_text)
    return EXIT_OK


def cmd_barrier(run: Run) -> int:
    _require(run, "beta")
    spec = run.load()
    sol = solve_barrier(spec.f0, spec.theta, run.args.beta, run.args.tol, run.args.nmax)
    trace = [{"A": _num(a), "ARL": _num(v)} for a, v in sol.trace]
    csv_text = "A,ARL\n" + "".join(f"{t['A']},{t['ARL']}\n" for t in trace)
    run.emit({"A": _num(sol.A), "ARL": _num(sol.arl), "beta": _num(sol.beta),
              "iterations": sol.iterations, "trace": trace, "note": sol.note}, csv_text)
    return EXIT_OK


def _sim_config(run: Run) -> SimConfig:
    return SimConfig(n_paths=run.args.paths, seed=run.args.seed, max_steps=run.args.max_steps,
                     workers=run.args.workers)


def cmd_simulate(run: Run) -> int:
    _require(run, "barrier")
    spec = run.load()
    rep = simulate_cusum(spec.problem(run.args.barrier), _sim_config(run))
    out = {}
    for m, est in (("ARL", rep.arl), ("ADD", rep.add), ("PFA", rep.pfa)):
        out[m] = {"mean": repr(est.mean), "ci95": [repr(est.low), repr(est.high)]}
    csv_text = "measure,mean,ci_low,ci_high\n" + "".join(
        f"{m},{v['mean']},{v['ci95'][0]},{v['ci95'][1]}\n" for m, v in out.items())
    run.emit({**out, "n_paths": rep.n_paths, "n_censored": rep.n_censored, "seed": rep.seed}, csv_text)
    return EXIT_OK


def cmd_check_equivalence(run: Run) -> int:
    _require(run, "barrier")
    spec = run.load()
    res = check_path_equivalence(spec.problem(run.args.barrier), _sim_config(run))
    payload = {"passed": res.passed, "n_paths": res.n_paths, "n_steps": res.n_steps}
    if res.counterexample is not None:
        c = res.counterexample
        payload["counterexample"] = {"path": c.path_index, "step": c.step, "reason": c.reason,
                                     "observations": [repr(z) for z in c.observations],
                                     "statistic": [_num(v) for v in c.statistic],
                                     "level": [_num(v) for v in c.level]}
    run.emit(payload)
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_reproduce(run: Run) -> int:
    rows = tables.compute(run.args.table, run.args.paths, run.args.seed, _params(run.args.param),
                          run.args.workers, run.args.nmax)
    for name in {case[3] for case in tables.cases(run.args.table)}:
        run.inputs[name] = content_hash(bundled_path(name).read_bytes())
    csv_text = tables.to_csv(rows)
    failed = [r for r in rows if not r.matches]
    run.args.format = "csv" if run.args.format is None else run.args.format
    if run.args.format == "csv":
        run.emit({}, csv_text)
    else:
        run.emit({"rows": [dict(zip(tables.CSV_HEADER.split(","), line.split(",")))
                           for line in csv_text.splitlines()[1:]],
                  "deviations": len(failed)})
    if failed:
        print(f"{len(failed)} of {len(rows)} entries differ from the published values "
              f"at {tables.SIG_DIGITS} significant digits", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "scale": cmd_scale,
    "passage": cmd_passage,
    "perf": cmd_perf,
    "barrier": cmd_barrier,
    "simulate": cmd_simulate,
    "check-equivalence": cmd_check_equivalence,
    "reproduce": cmd_reproduce,
}


def _default_digits() -> int:
    env = os.environ.get("SCALEKIT_DIGITS")
    return int(env) if env else nk.DEFAULT_DIGITS


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--digits", type=int, default=None,
                        help="working precision in decimal digits (default 30, or $SCALEKIT_DIGITS)")
    common.add_argument("--nmax", type=int, default=DEFAULT_NMAX, help="series truncation order")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--param", action="append", metavar="NAME=VALUE",
                        help="override a declared model parameter")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", required=True, help="model JSON file or bundled model name")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--paths", type=int, default=100_000)
    sim.add_argument("--seed", type=int, default=42)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--max-steps", type=int, default=1_000_000, help="censor paths longer than this")

    parser = argparse.ArgumentParser(prog="scalekit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common, model], help="check a model file")
    p = sub.add_parser("scale", parents=[common, model], help="scale matrix on a grid (CSV)")
    p.add_argument("--x", required=True, help="'x1,x2,...' or 'start:stop:count'")
    p.add_argument("--part", choices=("W", "Wprime", "Wbar"), default="W")
    p = sub.add_parser("passage", parents=[common, model], help="first passage matrices")
    p.add_argument("--level", required=True, help="passage level a")
    p.add_argument("--start", default="0", help="start level x0 (theta < 0 only)")
    for name, helptext in (("perf", "ARL, ADD and PFA at a barrier"),
                           ("simulate", "Monte Carlo estimates at a barrier"),
                           ("check-equivalence", "verify the continuous-time path identity")):
        parents = [common, model] + ([sim] if name != "perf" else [])
        p = sub.add_parser(name, parents=parents, help=helptext)
        p.add_argument("--barrier", default=None)
    p = sub.add_parser("barrier", parents=[common, model], help="barrier with no-change ARL equal to beta")
    p.add_argument("--beta", default=None)
    p.add_argument("--tol", default="1e-4")
    p = sub.add_parser("reproduce", parents=[common, sim], help="recompute a published table")
    p.add_argument("table", type=int, choices=(1, 2))
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.format is None and args.command != "reproduce":
        args.format = "csv" if args.command == "scale" else "json"
    run = Run(args, argv)
    digits = args.digits if args.digits is not None else _default_digits()
    try:
        with nk.working_precision(digits), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TruncationWarning)
            run.caught = caught
            code = COMMANDS[args.command](run)
        for message in run.warnings:
            print(f"warning: {message}", file=sys.stderr)
        return code
    except CensoredMajority as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CENSORED
    except (ValidationError, ParseError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, DefectiveModel) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
