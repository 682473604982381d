"""Thomas-Fermi theory on the grid, a radial ODE oracle, and the Coulomb form ``D``.

Conventions in a frame with semiclassical parameter ``h`` (see
:class:`paulilab.problem.ProblemSpec`):

    rho = (3 pi^2)^-1 h^-3 (W + nu)_+^{3/2}
    W   = V - h^3 |x|^-1 * rho                      (electrons screen)
    E   = -(2 / 15 pi^2) h^-3 int (W + nu)_+^{5/2} + nu N - 1/2 h^3 D(rho, rho)

With ``h = 1`` these are the unscaled equations.

Near a nucleus the density behaves like ``r^-3/2`` and the energy density
like ``r^-5/2``, which a uniform grid cannot integrate.  Each nucleus
therefore carries an analytic *core*: the first terms of the expansion of
``(z/r + a)^{3/2}`` and ``(z/r + a)^{5/2}`` in the regular part ``a``,
cut off smoothly at radius ``r_c``.  Core integrals and core potentials
are evaluated on a fine radial mesh; the grid only sees the bounded
remainder.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, solve_ivp
from scipy.interpolate import RegularGridInterpolator

from .field import coulomb_potential_of
from .problem import GridSpec, Nucleus, ProblemSpec, internuclear_repulsion
from .weyl import scott_window

C_RHO = 1.0 / (3 * math.pi**2)
C_E = 2.0 / (15 * math.pi**2)
#: Slope of the electron potential cusp at a bare Coulomb centre, per ``z^{3/2}``.
CUSP = 16.0 / (9 * math.pi)


class TFConvergenceError(RuntimeError):
    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


def coulomb_energy_D(rho: np.ndarray, rho2: np.ndarray, grid: GridSpec, check: bool = True) -> float:
    """``D(rho, rho') = int int rho(x) rho'(y) / |x - y|`` on the grid (d=3)."""
    if grid.dimension != 3:
        raise ValueError("the Coulomb form is defined for d=3")
    if not np.any(rho) or not np.any(rho2):
        return 0.0
    return grid.integrate(rho * coulomb_potential_of(rho2, grid, check))


# -- analytic cores -----------------------------------------------------------

class _Core:
    """Radial model of one nucleus: density, its potential, and energy-density integrals."""

    def __init__(self, nucleus: Nucleus, r_c: float, eps: float, h: float, m: int = 6000):
        self.z = nucleus.charge
        self.y = np.asarray(nucleus.position, float)
        self.r_c = r_c
        self.eps = eps
        self.h = h
        # u = sqrt(r) removes the r^-1/2 singularities of the integrands
        self.u = np.linspace(0.0, math.sqrt(r_c), m)
        self.r = self.u**2
        self.chi = scott_window(self.r / r_c)
        self.a0 = 0.0

    def _rho_terms(self):
        # core density = c h^-3 chi [z^{3/2} r^{-3/2} + (3/2) z^{1/2} a0 r^{-1/2}]
        return C_RHO * self.h**-3 * self.chi * self.z**1.5, C_RHO * self.h**-3 * self.chi * 1.5 * self.z**0.5

    def density_at(self, r: np.ndarray) -> np.ndarray:
        rr = np.maximum(r, self.eps)
        chi = scott_window(r / self.r_c)
        return C_RHO * self.h**-3 * chi * (self.z**1.5 * rr**-1.5 + 1.5 * self.z**0.5 * self.a0 * rr**-0.5)

    def tabulate(self):
        """Potential ``|x|^-1 * rho_core`` on the radial mesh, charge and self energy."""
        u, r = self.u, self.r
        A, B = self._rho_terms()
        # rho r^2 dr = (A r^{1/2} + B a0 r^{3/2}) * 2u du ;  rho r dr = (A r^{-1/2} + B a0 r^{1/2}) 2u du
        f2 = (A * u + B * self.a0 * u**3) * 2 * u
        f1 = (A / np.where(u > 0, u, 1.0) * (u > 0) + B * self.a0 * u) * 2 * u
        f1[0] = 2 * A[0]
        inner = cumulative_trapezoid(f2, u, initial=0.0)
        outer_total = np.trapezoid(f1, u)
        outer = outer_total - cumulative_trapezoid(f1, u, initial=0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            pot = 4 * math.pi * (np.where(r > 0, inner / np.where(r > 0, r, 1.0), 0.0) + outer)
        charge = 4 * math.pi * inner[-1]
        self._pot = pot
        self._pot0 = 4 * math.pi * outer_total
        self.charge = charge
        rho = C_RHO * self.h**-3 * self.chi * (self.z**1.5 + 1.5 * self.z**0.5 * self.a0 * r)  # times r^{-3/2}
        # int rho_core phi_core d^3x = 4 pi int rho r^2 phi dr, rho r^2 dr = rho~ r^{1/2} 2u du
        self.self_energy = 4 * math.pi * np.trapezoid(rho * u * pot * 2 * u, u)
        return self

    def potential_at(self, r: np.ndarray) -> np.ndarray:
        """``|x|^-1 * rho_core`` at distance ``r``; Coulomb tail beyond ``r_c``."""
        inside = np.interp(np.sqrt(np.minimum(r, self.r_c)), self.u, self._pot)
        with np.errstate(divide="ignore"):
            tail = self.charge / np.maximum(r, 1e-300)
        return np.where(r < self.r_c, inside, tail)

    def energy_integral(self) -> float:
        """``int S`` where ``S`` is the singular part of ``(W + nu)^{5/2}``."""
        u, r = self.u, self.r
        z, a0 = self.z, self.a0
        beta = CUSP * z**1.5
        # S r^2 = chi [z^{5/2} r^{-1/2} + (5/2) z^{3/2} (a0 r^{1/2} + beta r) + (15/8) z^{1/2} a0^2 r^{3/2}]
        g = self.chi * (z**2.5 + 2.5 * z**1.5 * (a0 * u**2 + beta * u**3) + 1.875 * z**0.5 * a0**2 * u**4)
        # r^{-1/2} dr = 2 du
        return 4 * math.pi * np.trapezoid(g * 2, u)

    def energy_density_at(self, r: np.ndarray) -> np.ndarray:
        z, a0 = self.z, self.a0
        beta = CUSP * z**1.5
        rr = np.maximum(r, self.eps)
        chi = scott_window(r / self.r_c)
        return chi * ((z / rr) ** 2.5 + 2.5 * (z / rr) ** 1.5 * (a0 + beta * np.sqrt(rr))
                      + 1.875 * (z / rr) ** 0.5 * a0**2)


def _core_radius(spec: ProblemSpec, cells: float = 6.0) -> float:
    g = spec.grid
    r_c = cells * g.spacing
    if len(spec.nuclei) > 1:
        pts = [np.asarray(n.position) for n in spec.nuclei]
        dmin = min(np.linalg.norm(p - q) for i, p in enumerate(pts) for q in pts[i + 1:])
        r_c = min(r_c, 0.45 * dmin)
    for nu in spec.nuclei:
        margin = g.box_halfwidth - np.max(np.abs(np.asarray(nu.position)))
        r_c = min(r_c, 0.9 * margin)
    return r_c


# -- grid solver -----------------------------------------------------------------

@dataclass
class TFSolution:
    grid: GridSpec
    W: np.ndarray
    rho: np.ndarray
    nu: float
    energy: float
    charge: float
    target_charge: float
    h: float
    iterations: int
    residuals: list[float]
    nuclei: tuple[Nucleus, ...] = ()
    core_a0: tuple[float, ...] = ()
    flags: list[str] = field(default_factory=list)

    def metadata(self) -> dict:
        g = self.grid
        return {
            "grid": {"dimension": g.dimension, "n": g.n, "box_halfwidth": g.box_halfwidth},
            "h": self.h, "nu": self.nu, "energy": self.energy, "charge": self.charge,
            "target_charge": self.target_charge, "iterations": self.iterations,
            "residuals": self.residuals, "flags": self.flags,
            "nuclei": [{"z": n.charge, "y": list(n.position)} for n in self.nuclei],
            "core_a0": list(self.core_a0),
        }

    def save(self, path: str | Path) -> None:
        """Write ``<path>.npz`` (fields) and ``<path>.json`` (metadata)."""
        p = Path(path)
        np.savez(p.with_suffix(".npz"), W=self.W, rho=self.rho)
        p.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TFSolution":
        p = Path(path)
        meta = json.loads(p.with_suffix(".json").read_text())
        arrs = np.load(p.with_suffix(".npz"))
        gd = meta["grid"]
        grid = GridSpec(gd["dimension"], gd["n"], gd["box_halfwidth"])
        nuclei = tuple(Nucleus(n["z"], tuple(n["y"])) for n in meta["nuclei"])
        return cls(grid=grid, W=arrs["W"], rho=arrs["rho"], nu=meta["nu"], energy=meta["energy"],
                   charge=meta["charge"], target_charge=meta["target_charge"], h=meta["h"],
                   iterations=meta["iterations"], residuals=meta["residuals"], nuclei=nuclei,
                   core_a0=tuple(meta["core_a0"]), flags=meta["flags"])


class _TFState:
    """Grid unknowns plus per-nucleus cores."""

    def __init__(self, spec: ProblemSpec):
        g = spec.grid
        if g.dimension != 3:
            raise ValueError("Thomas-Fermi solver works in d=3")
        if not spec.nuclei:
            raise ValueError("Thomas-Fermi solver needs nuclei")
        self.spec, self.grid, self.h = spec, g, spec.h
        self.V = spec.potential_field()
        r_c = _core_radius(spec)
        self.cores = [_Core(nu, r_c, spec.eps, spec.h) for nu in spec.nuclei]
        self.dist = [g.distance(nu.position) for nu in spec.nuclei]
        for c in self.cores:
            c.tabulate()
        self._interp_axes = (g.axis,) * 3

    def core_density(self) -> np.ndarray:
        return sum(c.density_at(d) for c, d in zip(self.cores, self.dist))

    def core_potential(self) -> np.ndarray:
        return sum(c.potential_at(d) for c, d in zip(self.cores, self.dist))

    def electron_potential(self, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(|x|^-1 * rho, rho - rho_core)`` with the core handled radially."""
        rv = rho - self.core_density()
        return self.core_potential() + coulomb_potential_of(rv, self.grid, check=False), rv

    def update_cores(self, phi_val: np.ndarray, nu: float) -> None:
        """Set each core's ``a0`` to the regular part of ``W + nu`` at its nucleus."""
        interp = RegularGridInterpolator(self._interp_axes, phi_val, method="linear")
        h3 = self.h**3
        for i, c in enumerate(self.cores):
            others = sum(o.charge / np.linalg.norm(c.y - np.asarray(o.position))
                         for j, o in enumerate(self.spec.nuclei) if j != i)
            phi_at = sum(cc._pot0 if cc is c else float(cc.potential_at(np.array(np.linalg.norm(c.y - cc.y))))
                         for cc in self.cores) + float(interp(c.y[None, :])[0])
            c.a0 = others - h3 * phi_at + nu
            c.tabulate()

    def core_charge(self) -> float:
        """Exact minus grid-sampled core charge (correction added to grid sums)."""
        return sum(c.charge for c in self.cores) - self.grid.integrate(self.core_density())


def _density(W: np.ndarray, nu: float, h: float) -> np.ndarray:
    return C_RHO * h**-3 * np.maximum(W + nu, 0.0) ** 1.5


def tf_solve(spec: ProblemSpec, theta: float = 0.3, tol: float = 1e-8, max_outer: int = 500,
             nu_tol: float = 1e-10, theta_min: float = 1e-3) -> TFSolution:
    """Damped fixed-point iteration for the Thomas-Fermi system on the grid.

    The mixing parameter is halved whenever the L1 update grows.  For
    ``N >= Z`` the chemical potential is 0; otherwise it is found by
    bisection so that the total charge equals ``N``.
    """
    g = spec.grid
    N = spec.n_electrons
    Zc = spec.nuclear_count
    target = min(N, Zc)
    if target == 0:
        V = spec.potential_field()
        return TFSolution(g, V.copy(), np.zeros(g.shape), 0.0, 0.0, 0.0, 0.0, spec.h, 0, [],
                          spec.nuclei)
    st = _TFState(spec)
    V, h = st.V, spec.h
    neutral = N >= Zc
    rho = np.zeros(g.shape)
    phi_val = np.zeros(g.shape)
    nu = 0.0
    history: list[float] = []
    prev = math.inf
    converged = False
    for it in range(1, max_outer + 1):
        phi, rv = st.electron_potential(rho)
        phi_val = phi - st.core_potential()
        W = V - h**3 * phi
        if not neutral:
            nu = _bisect_nu(st, W, target, nu_tol)
        st.update_cores(phi_val, nu)
        new = _density(W, nu, h)
        res = g.integrate(np.abs(new - rho))
        history.append(res)
        if res < tol:
            rho = new
            converged = True
            break
        if res > prev:
            theta = max(0.5 * theta, theta_min)
        prev = res
        rho = (1 - theta) * rho + theta * new
    if not converged:
        raise TFConvergenceError(f"no convergence after {max_outer} iterations "
                                 f"(last L1 update {history[-1]:.3e})", history)
    phi, _ = st.electron_potential(rho)
    W = V - h**3 * phi
    st.update_cores(phi - st.core_potential(), nu)
    charge = g.integrate(rho) + st.core_charge()
    sol = TFSolution(g, W, rho, nu, 0.0, charge, target, h, it, history, spec.nuclei,
                     tuple(c.a0 for c in st.cores))
    if abs(charge - target) > 1e-6 * target:
        sol.flags.append("box_charge_deficit" if neutral else "charge_mismatch")
    sol.energy = _energy(st, sol)
    return sol


def _bisect_nu(st: _TFState, W: np.ndarray, target: float, tol: float) -> float:
    g, h = st.grid, st.h
    corr = st.core_charge()

    def charge(nu):
        return g.integrate(_density(W, nu, h)) + corr

    if charge(0.0) <= target:
        return 0.0
    lo, hi = -float(np.max(W)), 0.0
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if charge(mid) > target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _energy(st: _TFState, sol: TFSolution) -> float:
    g, h = st.grid, st.h
    core_e = sum(c.energy_density_at(d) for c, d in zip(st.cores, st.dist))
    F = np.maximum(sol.W + sol.nu, 0.0) ** 2.5
    I = g.integrate(F - core_e) + sum(c.energy_integral() for c in st.cores)
    rho_c = st.core_density()
    rv = sol.rho - rho_c
    phi_c = st.core_potential()
    phi_v = coulomb_potential_of(rv, g, check=False)
    cc = 0.0
    for i, c in enumerate(st.cores):
        cc += c.self_energy
        for j, c2 in enumerate(st.cores):
            if i != j:
                cc += g.integrate(c.density_at(st.dist[i]) * c2.potential_at(st.dist[j]))
    D = cc + 2 * g.integrate(rv * phi_c) + g.integrate(rv * phi_v)
    return -C_E * h**-3 * I + sol.nu * sol.target_charge - 0.5 * h**3 * D


def tf_energy(sol: TFSolution) -> float:
    """Thomas-Fermi energy of a converged solution (computed by :func:`tf_solve`)."""
    return sol.energy


# -- radial ODE oracle --------------------------------------------------------

@dataclass
class TFAtom:
    Z: float
    N: float
    slope: float
    energy: float
    b: float
    x0: float | None
    nu: float
    x: np.ndarray
    chi: np.ndarray


def _tf_rhs(x, y):
    c = max(y[0], 0.0)
    return [y[1], c**1.5 / math.sqrt(x)]


def _shoot(s: float, x_max: float, x_start: float = 1e-8):
    y0 = [1 + s * x_start + 4.0 / 3.0 * x_start**1.5, s + 2 * x_start**0.5]

    def hit(x, y):
        return y[0]
    hit.terminal, hit.direction = True, -1

    def turn(x, y):
        return y[1]
    turn.terminal, turn.direction = True, 1
    return solve_ivp(_tf_rhs, (x_start, x_max), y0, events=[hit, turn], rtol=1e-12,
                     atol=1e-14, dense_output=True)


def _neutral_slope(tol: float = 1e-13, x_max: float = 400.0) -> tuple[float, float]:
    lo, hi = -1.7, -1.5  # lo crosses zero, hi turns upward
    for _ in range(200):
        if hi - lo < tol:
            break
        mid = 0.5 * (lo + hi)
        sol = _shoot(mid, x_max)
        if sol.t_events[0].size:
            lo = mid
        else:
            hi = mid
    return lo, hi


def tf_atom_ode(Z: float, N: float | None = None) -> TFAtom:
    """Radial Thomas-Fermi atom ``chi'' = chi^{3/2} / sqrt(x)`` with ``r = b x``.

    ``b = (3 pi / 4)^{2/3} Z^{-1/3}``.  Neutral: ``chi(0) = 1, chi -> 0``.
    Ion with ``N < Z``: ``chi(x0) = 0`` and ``-x0 chi'(x0) = 1 - N/Z``.
    The energy is assembled radially from
    ``-(2/15 pi^2) int (W+nu)^{5/2} + nu N - D/2``.
    """
    if Z <= 0:
        raise ValueError("Z must be positive")
    N = Z if N is None else N
    if not 0 <= N <= Z:
        raise ValueError("need 0 <= N <= Z")
    b = (3 * math.pi / 4) ** (2.0 / 3.0) * Z ** (-1.0 / 3.0)
    if N == Z:
        lo, hi = _neutral_slope()
        s = 0.5 * (lo + hi)
        sol = _shoot(lo, 1e4)
        x_end = 0.6 * sol.t[-1]
        x0 = None
        nu = 0.0
    else:
        q = 1 - N / Z
        s_lo, s_hi = -1.7 - 10 * q, _neutral_slope()[0]

        def ion_q(s_):
            so = _shoot(s_, 1e4)
            if not so.t_events[0].size:
                return -1.0, so
            xz = so.t_events[0][0]
            return -xz * so.sol(xz)[1], so

        while ion_q(s_lo)[0] < q:
            s_lo -= 5.0
        for _ in range(200):
            mid = 0.5 * (s_lo + s_hi)
            val, _so = ion_q(mid)
            if val > q:
                s_lo = mid
            else:
                s_hi = mid
            if s_hi - s_lo < 1e-13:
                break
        s = 0.5 * (s_lo + s_hi)
        sol = _shoot(s, 1e4)
        if not sol.t_events[0].size:
            raise RuntimeError("shooting bracket failure")
        x0 = float(sol.t_events[0][0])
        x_end = x0
        nu = -(Z - N) / (b * x0)

    def chi(x):
        x = np.asarray(x, float)
        inside = np.clip(x, 1e-8, x_end)
        val = sol.sol(inside)[0]
        if x0 is None:
            # Sommerfeld-type tail beyond the reliable range
            val = np.where(x > x_end, sol.sol(x_end)[0] * (x_end / np.maximum(x, x_end)) ** 3, val)
        else:
            val = np.where(x > x0, 0.0, val)
        return np.maximum(val, 0.0)

    energy = _ode_energy(chi, Z, N, b, x_end, x0, nu)
    xs = np.linspace(1e-8, x_end, 2000)
    return TFAtom(Z, N, float(s), energy, b, x0, nu, xs, chi(xs))


def _ode_energy(chi, Z, N, b, x_end, x0, nu) -> float:
    """Radial evaluation of the energy; ``W + nu = Z chi / r`` inside the atom."""
    f = lambda x: float(chi(x)) ** 2.5 / math.sqrt(x)  # noqa: E731
    ff = lambda t: 2 * float(chi(t * t)) ** 2.5  # noqa: E731
    upper = math.sqrt(x_end)
    I = quad(ff, 0, upper, limit=400)[0]
    if x0 is None:
        I += quad(f, x_end, np.inf, limit=400)[0]
    # int (W+nu)^{5/2} d^3x = 4 pi Z^{5/2} b^{1/2} int chi^{5/2} x^{-1/2} dx
    W52 = 4 * math.pi * Z**2.5 * math.sqrt(b) * I
    # electron potential phi = Z/r - (W + nu) - nu... inside: phi = Z(1-chi)/r + nu
    # rho = c (Z chi / r)^{3/2}
    def g(x):
        r = b * x
        c = float(chi(x))
        return C_RHO * (Z * c / r) ** 1.5 * (Z * (1 - c) / r + nu) * r * r * b
    gg = lambda t: 2 * t * g(t * t)  # noqa: E731
    D = 4 * math.pi * quad(gg, 0, upper, limit=400)[0]
    if x0 is None:
        D += 4 * math.pi * quad(g, x_end, np.inf, limit=400)[0]
    return -C_E * W52 + nu * N - 0.5 * D


def full_energy_hat(E_electronic: float, nuclei) -> float:
    """Add the internuclear repulsion to an electronic energy."""
    nuclei = list(nuclei)
    if not nuclei:
        raise ValueError("need at least one nucleus")
    return E_electronic + internuclear_repulsion([n.charge for n in nuclei],
                                                 [n.position for n in nuclei])
