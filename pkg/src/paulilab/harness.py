"""Experiment orchestration: sweeps, log-log fits, reports and manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy
import scipy.linalg

from . import __version__
from .field import MinimizeOptions, field_norm, minimize_field, random_smooth_field
from .manybody import upper_bound_pipeline
from .pauli import PauliOperator
from .problem import (ConfigError, Nucleus, PotentialSpec, ProblemSpec, build_grid,
                      problem_from_config)
from .spectral import DEFAULT_DENSE_BUDGET, negative_spectrum
from .tf import full_energy_hat, tf_solve
from .weyl import correction_integrals, scott_estimate, weyl1, weyl1_corrected, weyl_counting

REPORT_VERSION = 1
KINDS = ("trace-vs-weyl", "minimize", "scott", "tf", "upper-bound")
PARAMETERS = ("h", "kappa", "n", "distance", "N")


# -- configuration ---------------------------------------------------------------

@dataclass
class SweepConfig:
    base: ProblemSpec
    parameter: str
    values: list[float]
    kind: str
    out: str | None = None
    seed: int = 0
    threads: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        v = np.asarray(self.values, float)
        if len(v) > 1 and not (np.all(np.diff(v) > 0) or np.all(np.diff(v) < 0)):
            raise ConfigError("sweep values must be strictly monotone")
        if self.threads < 1:
            raise ConfigError("threads must be positive")


def sweep_from_config(doc: dict, seed: int | None = None, threads: int | None = None,
                      out: str | None = None) -> SweepConfig:
    if "sweep" not in doc:
        raise ConfigError("config has no 'sweep' section")
    sw = doc["sweep"]
    try:
        return SweepConfig(base=problem_from_config(doc), parameter=sw["parameter"],
                           values=[float(x) for x in sw["values"]], kind=sw["kind"], out=out,
                           seed=int(sw.get("seed", 0) if seed is None else seed),
                           threads=int(sw.get("threads", 1) if threads is None else threads),
                           options=dict(doc.get("options", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed sweep section: {exc!r}") from exc


def apply_parameter(base: ProblemSpec, parameter: str, value: float) -> ProblemSpec:
    if parameter == "h":
        return base.with_(h=float(value))
    if parameter == "kappa":
        return base.with_(kappa=float(value))
    if parameter == "N":
        return base.with_(electron_count=float(value))
    if parameter == "n":
        g = base.grid
        return base.with_(grid=build_grid(g.dimension, int(value), g.box_halfwidth))
    if parameter == "distance":
        if len(base.nuclei) < 2:
            raise ConfigError("distance sweeps need two nuclei")
        a, b = base.nuclei[0], base.nuclei[1]
        d = base.grid.dimension
        ya = tuple(-value / 2 if j == 0 else 0.0 for j in range(d))
        yb = tuple(value / 2 if j == 0 else 0.0 for j in range(d))
        return base.with_(nuclei=(Nucleus(a.charge, ya), Nucleus(b.charge, yb)) + base.nuclei[2:])
    raise ConfigError(f"unknown sweep parameter {parameter!r}")


# -- experiments -------------------------------------------------------------------

def _minimize_options(options: dict) -> MinimizeOptions:
    keys = MinimizeOptions.__dataclass_fields__
    return MinimizeOptions(**{k: v for k, v in options.get("minimize", {}).items() if k in keys})


def trace_vs_weyl_row(spec: ProblemSpec, options: dict) -> dict:
    budget = int(options.get("dense_budget", DEFAULT_DENSE_BUDGET))
    V = spec.potential_field()
    op = PauliOperator(spec.grid, spec.h, V)
    s = negative_spectrum(op, 0.0, dense_budget=budget)
    tr = s.trace_neg()
    w1 = weyl1(V, spec.grid, spec.h)
    k1, k2 = float(options.get("kappa1", 0.0)), float(options.get("kappa2", 0.0))
    I1, I2 = correction_integrals(V, spec.grid)
    return {"trace_neg": tr, "weyl1": w1, "abs_error": abs(tr - w1),
            "rel_error": abs(tr - w1) / abs(w1) if w1 else float("nan"),
            "weyl1_corrected": weyl1_corrected(V, spec.grid, spec.h, k1, k2),
            "count": s.count, "weyl_counting": weyl_counting(V, spec.grid, 0.0, spec.h),
            "I1": I1, "I2": I2, "flags": ";".join(s.flags)}


def minimize_row(spec: ProblemSpec, options: dict, seed: int) -> dict:
    budget = int(options.get("dense_budget", DEFAULT_DENSE_BUDGET))
    amp = float(options.get("init_amplitude", 0.0))
    A0 = random_smooth_field(spec.grid, seed, amp) if amp > 0 else None
    A, rep = minimize_field(spec, A0, _minimize_options(options), dense_budget=budget)
    row = rep.as_row()
    row["field_norm"] = field_norm(A, spec.grid)
    row["sqrt_kappa_h"] = math.sqrt(spec.kappa * spec.h)
    return row


def scott_row(spec: ProblemSpec, options: dict) -> dict:
    r_seq = options.get("r_sequence", (1.0, 1.5, 2.0))
    budget = options.get("dense_budget")
    est = scott_estimate(spec, r_seq, _minimize_options(options),
                         dense_budget=None if budget is None else int(budget))
    row = {"S": est.S, "cauchy_gap": est.cauchy_gap, "kappa_eff": est.kappa}
    for r, q in est.pairs:
        row[f"Q[{r:g}]"] = q
    row["field_norm_max"] = max(est.field_norms) if est.field_norms else 0.0
    row["flags"] = ";".join(est.flags)
    return row


def tf_row(spec: ProblemSpec, options: dict) -> dict:
    sol = tf_solve(spec, theta=float(options.get("theta", 0.3)))
    row = {"E_TF": sol.energy, "charge": sol.charge, "nu": sol.nu, "iterations": sol.iterations,
           "residual": sol.residuals[-1] if sol.residuals else 0.0}
    if len(spec.nuclei) > 1:
        row["E_full"] = full_energy_hat(sol.energy, spec.nuclei)
    row["flags"] = ";".join(sol.flags)
    return row


def upper_bound_row(spec: ProblemSpec, options: dict) -> dict:
    budget = options.get("dense_budget")
    rep = upper_bound_pipeline(spec, _minimize_options(options), options.get("scott_S"),
                               None if budget is None else int(budget))
    out = flatten(rep.as_dict())
    out["flags"] = ";".join(rep.flags)
    return out


def run_point(kind: str, spec: ProblemSpec, options: dict, seed: int = 0) -> dict:
    if kind == "trace-vs-weyl":
        return trace_vs_weyl_row(spec, options)
    if kind == "minimize":
        return minimize_row(spec, options, seed)
    if kind == "scott":
        return scott_row(spec, options)
    if kind == "tf":
        return tf_row(spec, options)
    if kind == "upper-bound":
        return upper_bound_row(spec, options)
    raise ConfigError(f"unknown experiment kind {kind!r}")


def run_sweep(config: SweepConfig) -> list[dict]:
    """One row per value; failures are recorded in the row's ``error`` column."""

    def one(value):
        row: dict[str, Any] = {"parameter": config.parameter, "value": float(value)}
        try:
            spec = apply_parameter(config.base, config.parameter, value)
            row.update({"h": spec.h, "kappa": spec.kappa, "n": spec.grid.n})
            row.update(run_point(config.kind, spec, config.options, config.seed))
            row["error"] = ""
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded per row
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    if config.threads == 1:
        return [one(v) for v in config.values]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        return list(pool.map(one, config.values))


# -- fits ------------------------------------------------------------------------

@dataclass
class FitResult:
    slope: float
    intercept: float
    r2: float
    residuals: list[float]


def fit_exponent(pairs: Sequence[tuple[float, float]]) -> FitResult:
    """Least-squares slope of ``log err`` against ``log x``."""
    if len(pairs) < 3:
        raise ValueError("need at least three pairs")
    x = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("fit_exponent needs positive values")
    lx, ly = np.log(x), np.log(y)
    X = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(X, ly, rcond=None)
    res = ly - (slope * lx + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(res**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(icpt), r2, [float(r) for r in res])


# -- reports -----------------------------------------------------------------------

def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _columns(rows: list[dict]) -> list[str]:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return cols


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return json.dumps([_plain(x) for x in v])
    return str(v)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def format_csv(rows: list[dict]) -> str:
    cols = _columns(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def format_json(rows: list[dict]) -> str:
    doc = {"version": REPORT_VERSION, "columns": _columns(rows), "rows": [_plain(r) for r in rows]}
    return json.dumps(doc, indent=2) + "\n"


def emit_report(rows: list[dict], fmt: str, path: str | Path | None = None) -> str:
    """Render ``rows`` as CSV or JSON; write to ``path`` when given."""
    if not rows:
        raise ValueError("no rows to report")
    if fmt == "csv":
        text = format_csv(rows)
    elif fmt == "json":
        text = format_json(rows)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def manifest(doc: dict, seed: int, command: str) -> dict:
    return {"config_sha256": config_hash(doc), "config": doc, "seed": seed, "command": command,
            "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(path: str | Path, doc: dict, seed: int, command: str) -> Path:
    p = Path(str(path) + ".manifest.json")
    p.write_text(json.dumps(manifest(doc, seed, command), indent=2, sort_keys=True) + "\n")
    return p


# -- instances ---------------------------------------------------------------------

def degenerate_paraboloid_spec(kappa: float, n: int = 32, box_halfwidth: float = 4.0,
                               h: float = 0.5, offset: float = 1e-6) -> ProblemSpec:
    """d=2 paraboloid whose doubly degenerate first excited level sits just below 0.

    ``V = c0 - |x|^2`` with ``c0`` equal to that grid eigenvalue of
    ``-h^2 Lap + |x|^2`` plus ``offset``.  A field splits the degenerate pair,
    so the minimiser moves away from ``A = 0`` with a response linear in kappa.
    """
    g = build_grid(2, n, box_halfwidth)
    base = PauliOperator(g, h, -(g.radius() ** 2)).scalar_sparse()
    vals = scipy.linalg.eigh(base.toarray(), eigvals_only=True, subset_by_index=(0, 3))
    c0 = float(vals[1]) + offset
    return ProblemSpec(grid=g, h=h, kappa=kappa,
                       potential=PotentialSpec("paraboloid", {"c0": c0, "c1": 1.0}))
