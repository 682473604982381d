"""Poisson solves, Coulomb gauge, and minimisation of the field energy functional.

The functional is

    E(A) = Tr^-(H_{A,V}) + (kappa h^2)^-1 int |curl A|^2,

optionally with the trace replaced by ``Tr^-(phi H phi)`` for a window
``phi``.  Its exact discrete gradient is ``Phi + (2/(kappa h^2)) C^T C A``
with ``C`` the central-difference curl; in Coulomb gauge ``C^T C = -Lap``
for the wide (central-difference squared) Laplacian.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft

from . import stencils
from .pauli import PauliOperator, curl_adjoint, field_energy, jacobian_energy, magnetic_field
from .problem import GridSpec, ProblemSpec
from .spectral import (DEFAULT_DENSE_BUDGET, Spectrum, current_from_vectors,
                       negative_spectrum, sandwich_spectrum, smooth_neg_part,
                       smooth_neg_part_derivative)
from .weyl import weyl1

log = logging.getLogger(__name__)

#: ``int_{[-1/2, 1/2]^3} |x|^-1 dx``
CUBE_MEAN_INVERSE_DISTANCE = 3 * math.log(2 + math.sqrt(3)) - math.pi / 2
#: ``int_{[-1/2, 1/2]^2} log|x| dx``
SQUARE_MEAN_LOG_DISTANCE = -0.5 * math.log(2) + math.pi / 4 - 1.5

POISSON_BOUNDARY_LIMIT = 1e-6


class PoissonPreconditionError(ValueError):
    """Source does not decay inside the box."""


class NonsmoothPointError(RuntimeError):
    """An eigenvalue sits within the smoothing width of 0 but smoothing is off."""


# -- free-space Poisson ----------------------------------------------------------

@lru_cache(maxsize=8)
def _green_fft(d: int, n: int, dx: float):
    M = 2 * n
    idx = np.arange(M)
    off = np.minimum(idx, M - idx).astype(float) * dx
    r2 = np.zeros((M,) * d)
    for j in range(d):
        sh = [1] * d
        sh[j] = M
        r2 = r2 + (off**2).reshape(sh)
    r = np.sqrt(r2)
    origin = (0,) * d
    with np.errstate(divide="ignore"):
        if d == 3:
            G = 1.0 / (4 * math.pi * r)
            G[origin] = CUBE_MEAN_INVERSE_DISTANCE / (4 * math.pi * dx)
        else:
            G = -np.log(r) / (2 * math.pi)
            G[origin] = -(math.log(dx) + SQUARE_MEAN_LOG_DISTANCE) / (2 * math.pi)
    return scipy.fft.rfftn(G)


def poisson_solve(f: np.ndarray, grid: GridSpec, check: bool = True) -> np.ndarray:
    """Free-space solution of ``-Lap u = f`` by zero-padded FFT convolution."""
    grid.check_field(f)
    if check:
        tot = float(np.sum(np.abs(f)))
        if tot > 0 and float(np.sum(np.abs(f[grid.boundary_mask()]))) > POISSON_BOUNDARY_LIMIT * tot:
            raise PoissonPreconditionError("source has non-negligible mass on the box boundary")
    d, n = grid.dimension, grid.n
    if not np.any(f):
        return np.zeros(grid.shape)
    M = 2 * n
    Gh = _green_fft(d, n, grid.spacing)
    u = scipy.fft.irfftn(scipy.fft.rfftn(f, s=(M,) * d) * Gh, s=(M,) * d)
    return u[(slice(0, n),) * d] * grid.cell_volume


def coulomb_potential_of(rho: np.ndarray, grid: GridSpec, check: bool = True) -> np.ndarray:
    """``|x|^-1 * rho`` (d=3)."""
    return 4 * math.pi * poisson_solve(rho, grid, check)


# -- gauge ---------------------------------------------------------------------

def gauge_project(A: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Orthogonal projection onto ``ker G^T`` (discrete Coulomb gauge).

    Subtracts ``G phi`` with ``G^T G phi = G^T A``; the curl is unchanged
    because central differences commute.
    """
    d, dx = grid.dimension, grid.spacing
    grid.check_field(A, (d,))
    gtA = -stencils.divergence(A, dx, d)
    phi = stencils.solve_wide_laplace(gtA, dx, d)
    return A - stencils.gradient(phi, dx, d)


def divergence(A: np.ndarray, grid: GridSpec) -> np.ndarray:
    return stencils.divergence(A, grid.spacing, grid.dimension)


def field_gradient(A: np.ndarray, grid: GridSpec, kappa: float, h: float) -> np.ndarray:
    """Gradient of ``(kappa h^2)^-1 int |curl A|^2``: ``(2/(kappa h^2)) C^T C A``."""
    B = magnetic_field(A, grid)
    return (2.0 / (kappa * h * h)) * curl_adjoint(B, grid)


def precondition(G: np.ndarray, grid: GridSpec, kappa: float, h: float) -> np.ndarray:
    """``(kappa h^2 / 2) (-Lap_D)^-1`` componentwise, then gauge projected."""
    d, dx = grid.dimension, grid.spacing
    P = np.stack([stencils.solve_dirichlet_laplace(G[j], dx, d) for j in range(d)])
    return gauge_project(0.5 * kappa * h * h * P, grid)


# -- energy model ----------------------------------------------------------------

@dataclass
class EnergyReport:
    trace_neg: float
    trace_smoothed: float
    field_energy: float
    jacobian_energy: float
    total: float
    total_smoothed: float
    weyl1: float
    smoothing_width: float
    gradient_norm: float = float("nan")
    relative_gradient: float = float("nan")
    iterations: int = 0
    converged: bool = False
    energy_at_zero: float | None = None
    count: int = 0
    lambda_min: float | None = None
    flags: list[str] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("history")
        row["flags"] = ";".join(self.flags)
        return row


@dataclass
class _Eval:
    A: np.ndarray
    op: PauliOperator
    eigenvalues: np.ndarray
    vectors: np.ndarray
    trace_neg: float
    trace_smoothed: float
    field: float
    spectrum: Spectrum | None = None

    @property
    def energy(self) -> float:
        return self.trace_smoothed + self.field


class EnergyModel:
    """``E(A)`` for fixed ``(V, h, kappa)``; the smoothing width is frozen on first use."""

    def __init__(self, grid: GridSpec, V: np.ndarray, h: float, kappa: float,
                 window: np.ndarray | None = None, smoothing: bool = True,
                 smoothing_rel: float = 1e-3, smoothing_width: float | None = None,
                 tol: float = 1e-9, dense_budget: int = DEFAULT_DENSE_BUDGET,
                 method: str = "auto"):
        self.grid, self.V, self.h, self.kappa = grid, V, h, kappa
        self.window = window
        self.smoothing = smoothing
        self.smoothing_rel = smoothing_rel
        self.width = smoothing_width
        self.tol, self.dense_budget, self.method = tol, dense_budget, method
        self.evaluations = 0

    @classmethod
    def from_spec(cls, spec: ProblemSpec, V: np.ndarray | None = None, **kw) -> "EnergyModel":
        return cls(spec.grid, spec.potential_field() if V is None else V, spec.h, spec.kappa, **kw)

    def _spectrum(self, op: PauliOperator, mu: float):
        if self.window is None:
            s = negative_spectrum(op, mu, self.tol, self.dense_budget, self.method)
            return s.eigenvalues, s.vectors, s
        vals, vecs = sandwich_spectrum(op, self.window, self.tol, self.dense_budget,
                                       self.method, mu_cut=mu)
        return vals, vecs, None

    def evaluate(self, A: np.ndarray | None) -> _Eval:
        g = self.grid
        Af = np.zeros((g.dimension,) + g.shape) if A is None else A
        op = PauliOperator(g, self.h, self.V, Af)
        self.evaluations += 1
        if self.width is None:
            vals, vecs, spec = self._spectrum(op, 0.0)
            self.width = (self.smoothing_rel * abs(float(vals[0]))
                          if (self.smoothing and len(vals)) else 0.0)
            if self.width > 0:
                vals, vecs, spec = self._spectrum(op, self.width)
        else:
            vals, vecs, spec = self._spectrum(op, self.width)
        raw = float(np.sum(vals[vals < 0]))
        if self.width > 0:
            smooth = float(np.sum(smooth_neg_part(vals, self.width)))
        else:
            smooth = raw
        if self.kappa > 0:
            fe = field_energy(Af, g, self.kappa, self.h)
        else:
            fe = 0.0 if not np.any(Af) else float("inf")
        return _Eval(Af, op, vals, vecs, raw, smooth, fe, spec)

    def gradient(self, ev: _Eval, project: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(G, Phi, F)``: total, trace and field parts of the gradient."""
        g = self.grid
        if self.width > 0:
            w = smooth_neg_part_derivative(ev.eigenvalues, self.width)
        else:
            if np.any(np.abs(ev.eigenvalues) < 1e-12):
                raise NonsmoothPointError("eigenvalue at 0 without smoothing")
            w = (ev.eigenvalues < 0).astype(float)
        A = ev.op.A  # None when the field vanishes
        Phi = current_from_vectors(ev.vectors, w, A, self.h, g)
        if self.kappa > 0:
            F = field_gradient(ev.A, g, self.kappa, self.h)
        else:
            F = np.zeros_like(Phi)
        G = Phi + F
        if project:
            G = gauge_project(G, g)
        return G, Phi, F

    def report(self, ev: _Eval) -> EnergyReport:
        g = self.grid
        lam = ev.eigenvalues
        return EnergyReport(
            trace_neg=ev.trace_neg, trace_smoothed=ev.trace_smoothed, field_energy=ev.field,
            jacobian_energy=jacobian_energy(ev.A, g), total=ev.trace_neg + ev.field,
            total_smoothed=ev.energy, weyl1=weyl1(self.V, g, self.h),
            smoothing_width=float(self.width or 0.0), count=int(np.count_nonzero(lam < 0)),
            lambda_min=float(lam[0]) if len(lam) else None,
            flags=list(ev.spectrum.flags) if ev.spectrum is not None else [])


def _norm(F: np.ndarray, grid: GridSpec) -> float:
    return math.sqrt(grid.cell_volume * float(np.sum(F * F)))


def total_energy(spec: ProblemSpec, A: np.ndarray | None = None, V: np.ndarray | None = None,
                 **model_opts) -> EnergyReport:
    """Components of ``E(A)``; ``total = trace_neg + field_energy`` exactly."""
    if spec.kappa == 0 and A is not None and np.any(A):
        raise ValueError("kappa = 0 requires A = 0")
    model = EnergyModel.from_spec(spec, V, **model_opts)
    return model.report(model.evaluate(A))


def energy_gradient(spec: ProblemSpec, A: np.ndarray | None = None, V: np.ndarray | None = None,
                    project: bool = True, **model_opts) -> np.ndarray:
    """Gauge-projected gradient ``Phi + (2/(kappa h^2)) C^T C A`` of the smoothed ``E``."""
    model = EnergyModel.from_spec(spec, V, **model_opts)
    ev = model.evaluate(A)
    return model.gradient(ev, project)[0]


def fixed_point_residual(model: EnergyModel, A: np.ndarray) -> float:
    """``||(2/(kappa h^2)) C^T C A + Phi|| / ||Phi||`` (stationarity of the field equation)."""
    ev = model.evaluate(A)
    G, Phi, _ = model.gradient(ev)
    nPhi = _norm(gauge_project(Phi, model.grid), model.grid)
    return _norm(G, model.grid) / nPhi if nPhi > 0 else _norm(G, model.grid)


@dataclass
class MinimizeOptions:
    max_iter: int = 200
    tol: float = 1e-5
    armijo: float = 1e-4
    initial_step: float = 1.0
    max_step: float = 8.0
    max_backtracks: int = 30
    #: ``"gradient"`` (preconditioned steepest descent) or ``"lbfgs"``
    #: (limited-memory quasi-Newton with the same preconditioner as ``H_0``)
    scheme: str = "lbfgs"
    memory: int = 8


class _LBFGS:
    """Two-loop recursion in the grid inner product with a preconditioned ``H_0``."""

    def __init__(self, memory: int, dot, precond):
        self.memory, self.dot, self.precond = memory, dot, precond
        self.pairs: list[tuple[np.ndarray, np.ndarray, float]] = []

    def update(self, s: np.ndarray, y: np.ndarray) -> None:
        sy = self.dot(s, y)
        if sy <= 1e-12 * math.sqrt(self.dot(s, s) * self.dot(y, y)):
            return  # curvature condition violated; skip the pair
        self.pairs.append((s, y, 1.0 / sy))
        if len(self.pairs) > self.memory:
            self.pairs.pop(0)

    def direction(self, G: np.ndarray) -> np.ndarray:
        q = G.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * self.dot(s, q)
            alphas.append(a)
            q = q - a * y
        r = self.precond(q)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * self.dot(y, r)
            r = r + (a - b) * s
        return r


def minimize_field(spec: ProblemSpec, A_init: np.ndarray | None = None,
                   opts: MinimizeOptions | None = None, V: np.ndarray | None = None,
                   model: EnergyModel | None = None, **model_opts):
    """Preconditioned descent with Armijo backtracking on the smoothed ``E``.

    Returns ``(A*, EnergyReport)`` for a local minimiser; ``A*`` is the best
    accepted iterate.  ``report.iterations`` counts accepted steps.
    """
    opts = opts or MinimizeOptions()
    if spec.kappa <= 0:
        raise ValueError("field minimisation needs kappa > 0")
    if model is None:
        model = EnergyModel.from_spec(spec, V, **model_opts)
    g = model.grid
    A = np.zeros((g.dimension,) + g.shape) if A_init is None else gauge_project(A_init, g)

    if opts.scheme not in ("gradient", "lbfgs"):
        raise ValueError(f"unknown scheme {opts.scheme!r}")
    dot = lambda u, v: g.cell_volume * float(np.sum(u * v))  # noqa: E731
    pre = lambda G: precondition(G, g, model.kappa, model.h)  # noqa: E731
    qn = _LBFGS(opts.memory, dot, pre) if opts.scheme == "lbfgs" else None

    ev = model.evaluate(A)
    history = [ev.energy]
    step = opts.initial_step
    accepted = 0
    converged = False
    flags: list[str] = []
    rel = float("nan")
    gnorm = float("nan")
    G_prev = None
    for _ in range(opts.max_iter + 1):
        G, Phi, F = model.gradient(ev)
        gnorm = _norm(G, g)
        scale = _norm(Phi, g) + _norm(F, g)
        rel = gnorm / scale if scale > 0 else 0.0
        if gnorm == 0.0 or rel < opts.tol:
            converged = True
            break
        if accepted >= opts.max_iter:
            break
        if qn is not None:
            if G_prev is not None:
                qn.update(ev.A - A_prev, G - G_prev)
            P = gauge_project(qn.direction(G), g)
            slope = dot(G, P)
            if slope <= 0:
                qn.pairs.clear()
                P = pre(G)
                slope = dot(G, P)
            step = 1.0
        else:
            P = pre(G)
            slope = dot(G, P)
        if slope <= 0:
            flags.append("non_descent")
            break
        A_prev, G_prev = ev.A, G
        for _bt in range(opts.max_backtracks):
            A_try = gauge_project(ev.A - step * P, g)
            ev_try = model.evaluate(A_try)
            if ev_try.energy <= ev.energy - opts.armijo * step * slope:
                break
            step *= 0.5
        else:
            flags.append("line_search_failed")
            break
        ev = ev_try
        accepted += 1
        history.append(ev.energy)
        if qn is None:
            step = min(2 * step, opts.max_step)

    rep = model.report(ev)
    rep.gradient_norm = gnorm
    rep.relative_gradient = rel
    rep.iterations = accepted
    rep.converged = converged
    rep.history = history
    rep.flags += flags
    if np.any(ev.A):
        rep.energy_at_zero = model.report(model.evaluate(None)).total
    else:
        rep.energy_at_zero = rep.total
    return ev.A, rep


def field_norm(A: np.ndarray, grid: GridSpec) -> float:
    """``||dA||_{L^2}``."""
    return math.sqrt(jacobian_energy(A, grid))


def random_smooth_field(grid: GridSpec, seed: int, amplitude: float = 1.0,
                        width: float | None = None, modes: int = 3) -> np.ndarray:
    """Seeded smooth vector field: a few Gaussian-damped low Fourier modes."""
    rng = np.random.default_rng(seed)
    d = grid.dimension
    x = grid.coordinates()
    L = grid.box_halfwidth
    width = width or L / 2
    env = np.exp(-np.sum(x**2, axis=0) / width**2)
    A = np.zeros((d,) + grid.shape)
    for j in range(d):
        for _ in range(modes):
            k = rng.normal(size=d) * (math.pi / L)
            ph = rng.uniform(0, 2 * math.pi)
            A[j] += rng.normal() * np.cos(np.tensordot(k, x, axes=1) + ph)
        A[j] *= env
    return amplitude * A
