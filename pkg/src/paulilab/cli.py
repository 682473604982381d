"""Command line interface: ``paulilab <subcommand> --config cfg.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (the
failing stage is printed on stderr as ``stage=<tag>``).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .field import NonsmoothPointError, PoissonPreconditionError
from .manybody import PipelineError
from .pauli import BudgetError, PauliOperator
from .problem import ConfigError, load_config, problem_from_config
from .spectral import IncompleteSpectrumError, InertiaError, negative_spectrum
from .tf import TFConvergenceError
from .weyl import calibrate_constants, correction_integrals, weyl1

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class NumericalFailure(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(str(exc))
        self.stage = stage


def _options(doc: dict, args) -> dict:
    opts = dict(doc.get("options", {}))
    if args.dense_budget is not None:
        opts["dense_budget"] = args.dense_budget
    return opts


def _guard(stage: str, fn):
    try:
        return fn()
    except (ConfigError, NumericalFailure):
        raise
    except PipelineError as exc:
        raise NumericalFailure(exc.stage, exc) from exc
    except (IncompleteSpectrumError, InertiaError, TFConvergenceError, PoissonPreconditionError,
            NonsmoothPointError, BudgetError, np.linalg.LinAlgError, ArithmeticError,
            RuntimeError) as exc:
        raise NumericalFailure(stage, exc) from exc


def cmd_spectrum(doc, args):
    spec = problem_from_config(doc)
    opts = _options(doc, args)
    V = spec.potential_field()

    def run():
        budget = int(opts.get("dense_budget", harness.DEFAULT_DENSE_BUDGET))
        return negative_spectrum(PauliOperator(spec.grid, spec.h, V), 0.0, dense_budget=budget)

    s = _guard("spectrum", run)
    summary = {"count": s.count, "trace_neg": s.trace_neg(), "weyl1": weyl1(V, spec.grid, spec.h),
               "flags": ";".join(s.flags)}
    return [dict(summary, k=i, eigenvalue=float(lam)) for i, lam in enumerate(s.eigenvalues)] \
        or [dict(summary, k=-1, eigenvalue=float("nan"))], {}


def cmd_minimize(doc, args):
    spec = problem_from_config(doc)
    return [_guard("minimize", lambda: harness.minimize_row(spec, _options(doc, args), args.seed))], {}


def cmd_tf(doc, args):
    spec = problem_from_config(doc)
    return [_guard("tf", lambda: harness.tf_row(spec, _options(doc, args)))], {}


def cmd_scott(doc, args):
    spec = problem_from_config(doc)
    return [_guard("scott", lambda: harness.scott_row(spec, _options(doc, args)))], {}


def cmd_upper_bound(doc, args):
    spec = problem_from_config(doc)
    return [_guard("upper-bound", lambda: harness.upper_bound_row(spec, _options(doc, args)))], {}


def cmd_sweep(doc, args):
    doc = dict(doc)
    doc["options"] = _options(doc, args)
    cfg = harness.sweep_from_config(doc, seed=args.seed, threads=args.threads, out=args.out)
    return _guard("sweep", lambda: harness.run_sweep(cfg)), {}


def cmd_calibrate(doc, args):
    """Fit the gradient-correction constants from smooth-potential trace data.

    ``options.h_values`` lists the semiclassical parameters probed; the
    fitted constants are written back into the config document.
    """
    spec = problem_from_config(doc)
    if spec.potential is None:
        raise ConfigError("calibration needs a smooth potential")
    opts = _options(doc, args)
    hs = [float(h) for h in opts.get("h_values", [])]
    if len(hs) < 2:
        raise ConfigError("options.h_values needs at least two entries")
    rows, samples = [], []
    for h in hs:
        row = _guard("spectrum", lambda: harness.trace_vs_weyl_row(spec.with_(h=h), opts))
        I1, I2 = correction_integrals(spec.potential_field(), spec.grid)
        samples.append({"error": row["trace_neg"] - row["weyl1"], "h": h,
                        "d": spec.grid.dimension, "I1": I1, "I2": I2})
        rows.append({"h": h, "error": samples[-1]["error"], "I1": I1, "I2": I2})
    cal = calibrate_constants(samples)
    out_doc = dict(doc)
    out_doc["weyl_constants"] = {
        "kappa1": cal.kappa1, "kappa2": cal.kappa2, "residual": cal.residual,
        "provenance": {"method": "least squares on Tr^- - Weyl_1", "h_values": hs,
                       "config_sha256": harness.config_hash(doc), "version": harness.__version__}}
    return rows, {"config": out_doc}


COMMANDS = {
    "spectrum": cmd_spectrum,
    "minimize-field": cmd_minimize,
    "tf": cmd_tf,
    "scott": cmd_scott,
    "sweep": cmd_sweep,
    "upper-bound": cmd_upper_bound,
    "calibrate-weyl-constants": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paulilab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON problem/sweep document")
        sp.add_argument("--out", help="report path (stdout if omitted)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--threads", type=int, default=None, help="concurrent sweep points")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dense-budget", type=int, default=None,
                        help="largest matrix (rows) solved densely")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_config(args.config)
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        rows, extra = COMMANDS[args.command](doc, args)
    except NumericalFailure as exc:
        print(f"numerical failure: stage={exc.stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = harness.emit_report(rows, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        harness.write_manifest(args.out, doc, args.seed, args.command)
        if "config" in extra:
            Path(str(args.out) + ".config.json").write_text(
                json.dumps(extra["config"], indent=2, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
