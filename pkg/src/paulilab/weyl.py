"""Semiclassical (Weyl) expressions and the Scott functional.

Phase-space constants, with spin factor 2:

=====  ==========================  ===============================
  d    counting  ``N(tau)``          trace ``Weyl_1``
=====  ==========================  ===============================
  3    ``(3 pi^2)^-1 h^-3 (V+tau)^{3/2}``  ``-(2/15 pi^2) h^-3 V^{5/2}``
  2    ``(2 pi)^-1 h^-2 (V+tau)``          ``-(4 pi)^-1 h^-2 V^2``
=====  ==========================  ===============================

The Scott quantity for a unit Coulomb centre (``Z = h = 1``) is

    Q(r) = Tr(phi_r H^- phi_r) - int Weyl_1 density * phi_r^2,

with ``phi_r = 1`` on ``|x| < r/2`` and ``0`` beyond ``r``; ``S = lim Q / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.special
from scipy import integrate

from .problem import GridSpec

C_COUNT = {3: 1.0 / (3 * math.pi**2), 2: 1.0 / (2 * math.pi)}
C_TRACE = {3: 2.0 / (15 * math.pi**2), 2: 1.0 / (4 * math.pi)}


def _plus(x):
    return np.maximum(x, 0.0)


def weyl_counting(V: np.ndarray, grid: GridSpec, tau: float, h: float) -> float:
    """Phase-space volume of ``{|xi|^2 < V + tau}`` with spin, in units ``(2 pi h)^d``."""
    d = grid.dimension
    return C_COUNT[d] * h**-d * grid.integrate(_plus(V + tau) ** (d / 2))


def weyl1(V: np.ndarray, grid: GridSpec, h: float) -> float:
    """Leading semiclassical trace of the negative part."""
    d = grid.dimension
    return -C_TRACE[d] * h**-d * grid.integrate(_plus(V) ** (d / 2 + 1))


def _grad_lap(V: np.ndarray, dx: float, d: int):
    grads = np.gradient(V, dx, edge_order=2)
    if d == 1:
        grads = [grads]
    lap = sum(np.gradient(grads[j], dx, axis=j, edge_order=2) for j in range(d))
    return np.stack(grads), lap


def correction_integrals(V: np.ndarray, grid: GridSpec) -> tuple[float, float]:
    """``(int V_+^{d/2} Lap V, int V_+^{d/2-1} |grad V|^2)`` with central differences."""
    d = grid.dimension
    grad, lap = _grad_lap(V, grid.spacing, d)
    Vp = _plus(V)
    I1 = grid.integrate(Vp ** (d / 2) * lap)
    if d == 2:
        weight = (V > 0).astype(float)
    else:
        weight = Vp ** (d / 2 - 1)
    I2 = grid.integrate(weight * np.sum(grad**2, axis=0))
    return I1, I2


@dataclass
class WeylReport:
    weyl_counting: float
    weyl1: float
    weyl1_corrected: float
    constants: tuple[float, float, float]
    dimension: int
    h: float


def weyl1_corrected(V: np.ndarray, grid: GridSpec, h: float,
                    kappa1: float = 0.0, kappa2: float = 0.0) -> float:
    """``Weyl_1 + h^{2-d} [k1 int V_+^{d/2} Lap V + k2 int V_+^{d/2-1} |grad V|^2]``."""
    base = weyl1(V, grid, h)
    if kappa1 == 0 and kappa2 == 0:
        return base
    I1, I2 = correction_integrals(V, grid)
    return base + h ** (2 - grid.dimension) * (kappa1 * I1 + kappa2 * I2)


def weyl_report(V, grid, h, tau=0.0, kappa1=0.0, kappa2=0.0) -> WeylReport:
    d = grid.dimension
    return WeylReport(weyl_counting(V, grid, tau, h), weyl1(V, grid, h),
                      weyl1_corrected(V, grid, h, kappa1, kappa2),
                      (kappa1 - 2.0 / d * kappa2, kappa1, kappa2), d, h)


# -- radial quadrature helpers ------------------------------------------------

def radial_weyl_counting(V_radial, tau: float, h: float, r_max: float) -> float:
    """``weyl_counting`` in d=3 for a radial potential, by adaptive quadrature."""
    f = lambda r: _plus(V_radial(r) + tau) ** 1.5 * 4 * math.pi * r * r  # noqa: E731
    return C_COUNT[3] * h**-3 * integrate.quad(f, 0, r_max, limit=200)[0]


def radial_weyl1(V_radial, h: float, r_max: float) -> float:
    f = lambda r: _plus(V_radial(r)) ** 2.5 * 4 * math.pi * r * r  # noqa: E731
    return -C_TRACE[3] * h**-3 * integrate.quad(f, 0, r_max, limit=200)[0]


# -- calibration of the correction constants ------------------------------------

@dataclass
class Calibration:
    kappa1: float
    kappa2: float
    residual: float
    samples: list[dict] = field(default_factory=list)


def calibrate_constants(samples: list[dict]) -> Calibration:
    """Least-squares fit of ``(k1, k2)`` from ``Tr^- - Weyl_1`` data.

    Each sample carries ``error`` (``Tr^- - Weyl_1``), ``h``, ``d`` and the
    two correction integrals ``I1``, ``I2``.  The model is
    ``error ~ h^{2-d} (k1 I1 + k2 I2)``.  When all potentials share one
    level of the integration-by-parts relation only the combination
    ``k = k1 - (2/d) k2`` is identifiable and the minimum-norm solution is
    returned.
    """
    if not samples:
        raise ValueError("need calibration samples")
    rows, rhs = [], []
    for s in samples:
        w = s["h"] ** (2 - s["d"])
        rows.append([w * s["I1"], w * s["I2"]])
        rhs.append(s["error"])
    X, y = np.asarray(rows), np.asarray(rhs)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = float(np.linalg.norm(X @ coef - y))
    return Calibration(float(coef[0]), float(coef[1]), res, list(samples))


# -- Scott functional -----------------------------------------------------------

def scott_window(s):
    """C^2 cutoff: 1 for ``s <= 1/2``, 0 for ``s >= 1``, quintic blend between."""
    s = np.asarray(s, float)
    t = np.clip((s - 0.5) / 0.5, 0.0, 1.0)
    return 1.0 - t**3 * (10 - 15 * t + 6 * t**2)


def _gauss_legendre(a: float, b: float, m: int):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def windowed_coulomb_weyl(r: float, z: float = 1.0, h: float = 1.0, m: int = 200) -> float:
    """``int Weyl_1 density * phi_r^2`` for ``V = z/|x|`` in d=3 (exact quadrature).

    Substituting ``|x| = r t^2`` removes the ``|x|^-1/2`` singularity:
    ``-(2/15 pi^2) h^-3 z^{5/2} 4 pi r^{1/2} int_0^1 2 phi(t^2)^2 dt``.
    """
    # the window kink sits at t = 1/sqrt(2); integrate the two pieces separately
    t1, w1 = _gauss_legendre(0.0, math.sqrt(0.5), m)
    t2, w2 = _gauss_legendre(math.sqrt(0.5), 1.0, m)
    inner = np.sum(w1 * 2 * scott_window(t1**2) ** 2) + np.sum(w2 * 2 * scott_window(t2**2) ** 2)
    return -C_TRACE[3] * h**-3 * z**2.5 * 4 * math.pi * math.sqrt(r) * inner


def hydrogen_radial_density(n: int, l: int, r: np.ndarray) -> np.ndarray:
    """``u_{nl}(r)^2`` for ``-Lap - 1/|x|`` (unit normalised on ``(0, inf)``).

    Eigenvalue ``-1/(4 n^2)``; the Bohr radius is 2, so ``rho = r / n``.
    """
    rho = np.asarray(r, float) / n
    k = n - l - 1
    lognorm = 3 * math.log(1.0 / n) + scipy.special.gammaln(k + 1) - math.log(2 * n) \
        - scipy.special.gammaln(n + l + 1)
    lag = scipy.special.eval_genlaguerre(k, 2 * l + 1, rho)
    with np.errstate(divide="ignore"):
        logpart = lognorm - rho + 2 * l * np.log(np.maximum(rho, 1e-300)) + 2 * np.log(np.maximum(r, 1e-300))
    return np.exp(logpart) * lag**2


def hydrogen_windowed_trace(r_cut: float, n_shell_max: int, m: int = 400) -> float:
    """``sum_{n <= n_max} sum_l 2(2l+1) lambda_n int u_{nl}^2 phi(r/r_cut)^2 dr``."""
    x1, w1 = _gauss_legendre(0.0, r_cut / 2, m)
    x2, w2 = _gauss_legendre(r_cut / 2, r_cut, m)
    x = np.concatenate([x1, x2])
    w = np.concatenate([w1, w2]) * scott_window(x / r_cut) ** 2
    total = 0.0
    for n in range(1, n_shell_max + 1):
        lam = -1.0 / (4 * n * n)
        for l in range(n):
            total += 2 * (2 * l + 1) * lam * float(np.sum(w * hydrogen_radial_density(n, l, x)))
    return total


@dataclass
class ScottEstimate:
    kappa: float
    pairs: list[tuple[float, float]]
    S: float
    cauchy_gap: float
    extrapolations: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    field_norms: list[float] = field(default_factory=list)


def richardson_sqrt(r: list[float], q: list[float]) -> list[float]:
    """Limits of ``Q(r) = Q_inf + c r^{-1/2}`` from consecutive pairs."""
    out = []
    for (ra, qa), (rb, qb) in zip(zip(r, q), zip(r[1:], q[1:])):
        a, b = ra**-0.5, rb**-0.5
        out.append((qb * a - qa * b) / (a - b))
    return out


def extrapolate(kappa: float, r: list[float], q: list[float],
                noise: float = 0.0) -> ScottEstimate:
    if len(r) < 2:
        raise ValueError("need at least two window radii")
    if any(b <= a for a, b in zip(r, r[1:])):
        raise ValueError("window radii must increase")
    ext = richardson_sqrt(r, q)
    S = ext[-1] / 2
    gap = abs(ext[-1] - ext[-2]) / 2 if len(ext) > 1 else float("nan")
    flags = []
    diffs = np.diff(q)
    if len(diffs) > 1 and np.any(np.diff(np.sign(diffs[np.abs(diffs) > noise])) != 0):
        flags.append("non_monotone_Q")
    return ScottEstimate(kappa, list(zip(map(float, r), map(float, q))), float(S),
                         float(gap), [float(e) / 2 for e in ext], flags)


def scott_hydrogen_oracle(n_shell_max: int = 120,
                          r_cut_sequence=(32.0, 64.0, 128.0, 256.0)) -> ScottEstimate:
    """``S(0)`` from exact hydrogen eigenfunctions (``Z = h = 1``)."""
    if n_shell_max < 20:
        raise ValueError("n_shell_max must be at least 20")
    r = [float(x) for x in r_cut_sequence]
    q = [hydrogen_windowed_trace(x, n_shell_max) - windowed_coulomb_weyl(x) for x in r]
    est = extrapolate(0.0, r, q)
    if not est.cauchy_gap < 1e-3:
        est.flags.append("not_cauchy")
    return est


def scott_scaled(S: float, Z: float, h: float) -> float:
    """Scott term ``2 Z^2 h^-2 S`` of a charge ``Z`` at semiclassical parameter ``h``."""
    return 2 * Z * Z * S / (h * h)


def scott_estimate(spec, r_sequence=(1.0, 1.5, 2.0), minimizer_opts=None, A_init=None,
                   noise: float | None = None, tol: float = 1e-9, dense_budget: int | None = None,
                   method: str = "auto") -> ScottEstimate:
    """Grid estimate of ``S(z kappa)`` for a single Coulomb centre.

    Window radii are given in units of ``h^2 / z`` so that ``Z = h = 1``
    runs and scaled runs use the same windows.  For each radius

        Q(r) = Tr(phi_r H_A^- phi_r) + (kappa h^2)^-1 int |curl A|^2 - int Weyl_1 phi_r^2,

    normalised by ``z^2 h^-2``.  At ``kappa = 0`` the field is ``A = 0``; at
    ``kappa > 0`` ``A`` minimises the windowed energy
    ``Tr^-(phi_r H_A phi_r) + field`` (module :mod:`paulilab.field`).  The
    Weyl term uses the exact continuum Coulomb integral.
    """
    from . import field as fieldmod
    from .pauli import PauliOperator
    from .spectral import DEFAULT_DENSE_BUDGET, energy_density, negative_spectrum

    if len(spec.nuclei) != 1:
        raise ValueError("scott_estimate needs a single nucleus")
    if spec.grid.dimension != 3:
        raise ValueError("scott_estimate works in d=3")
    r_seq = [float(r) for r in r_sequence]
    if len(r_seq) < 2 or any(b <= a for a, b in zip(r_seq, r_seq[1:])):
        raise ValueError("r_sequence must be increasing with at least two entries")
    g, h, kappa = spec.grid, spec.h, spec.kappa
    budget = DEFAULT_DENSE_BUDGET if dense_budget is None else dense_budget
    nuc = spec.nuclei[0]
    z = nuc.charge
    unit = h * h / z
    margin = g.box_halfwidth - float(np.max(np.abs(nuc.position)))
    if r_seq[-1] * unit >= margin:
        raise ValueError(f"window radius {r_seq[-1] * unit:.3g} does not fit in the box")
    V = spec.potential_field()
    dist = g.distance(nuc.position)
    norm = z * z / (h * h)

    cache: dict = {}

    def projected(A, phi):
        key = None if A is None or not np.any(A) else id(A)
        if key not in cache:
            s = negative_spectrum(PauliOperator(g, h, V, A), 0.0, tol, budget, method)
            cache[key] = (energy_density(s), s.flags)
        ed, _ = cache[key]
        return g.integrate(ed * phi**2)

    q, norms, flags = [], [], []
    for r in r_seq:
        phi = scott_window(dist / (r * unit))
        A, fe = None, 0.0
        if kappa > 0:
            model = fieldmod.EnergyModel(g, V, h, kappa, window=phi, tol=tol,
                                         dense_budget=budget, method=method)
            A, rep = fieldmod.minimize_field(spec, A_init, minimizer_opts, V=V, model=model)
            if not rep.converged:
                flags.append(f"minimizer_unconverged_r={r:g}")
            if not np.any(A):
                A = None
            else:
                fe = rep.field_energy
        norms.append(0.0 if A is None else fieldmod.field_norm(A, g))
        val = projected(A, phi) + fe - windowed_coulomb_weyl(r * unit, z, h)
        q.append(val / norm)
    scale = max(abs(x) for x in q)
    est = extrapolate(z * kappa, r_seq, q, noise=1e-9 * scale if noise is None else noise)
    for _, (_, f) in cache.items():
        flags.extend(f"spectrum:{x}" for x in f)
    est.flags.extend(sorted(set(flags)))
    if "non_monotone_Q" in est.flags:
        est.flags.append("unconverged")
    est.field_norms = norms
    return est
