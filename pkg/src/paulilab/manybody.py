"""Slater-determinant upper bounds for the many-electron energy.

All quantities live in the frame of :class:`paulilab.problem.ProblemSpec`:
the electron-electron interaction carries the coupling ``h^3``, and the
one-particle operator is ``H_{A,W}`` for an effective potential ``W``.

For occupied orthonormal spinors ``psi_1..psi_N`` of ``H_{A,W}`` the
determinant energy with respect to the true potential ``V`` is

    sum_k lambda_k + int (W - V) rho + h^3 [D(rho, rho)/2 - X] + field energy,

with ``X = 1/2 sum_{k,l} int int conj(rho_kl(x)) rho_kl(y) / |x-y|`` and
``rho_kl = sum_s conj(psi_k,s) psi_l,s``.  Dropping ``X`` gives a weaker
bound.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .field import MinimizeOptions, coulomb_potential_of, field_norm, minimize_field
from .pauli import PauliOperator, field_energy
from .problem import GridSpec, ProblemSpec
from .spectral import Spectrum, negative_spectrum
from .tf import coulomb_energy_D, tf_solve
from .weyl import scott_hydrogen_oracle, scott_scaled

#: Default Lieb-Oxford constant used by the diagnostic (configuration value).
C_LO = 1.68


def _digest(W: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(W, dtype=float).tobytes()).hexdigest()


@dataclass
class SlaterState:
    spectrum: Spectrum
    N_requested: float
    N_used: int
    rho: np.ndarray
    lambda_N: float | None
    potential_digest: str | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def orbitals(self) -> np.ndarray:
        return self.spectrum.vectors[: self.N_used]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectrum.eigenvalues[: self.N_used]


def slater_density(s: Spectrum, N: float, W: np.ndarray | None = None) -> SlaterState:
    """Occupy the ``floor(N)`` lowest orbitals, trimmed to ``lambda <= 0``."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    want = int(math.floor(N + 1e-9))
    available = int(np.count_nonzero(s.eigenvalues <= 0))
    used = min(want, available)
    flags = []
    if used < want:
        flags.append("trimmed")
    rho = np.zeros(s.grid.shape)
    for psi in s.vectors[:used]:
        rho += np.sum(np.abs(psi) ** 2, axis=0)
    lam = float(s.eigenvalues[used - 1]) if used else None
    return SlaterState(s, float(N), used, rho, lam, None if W is None else _digest(W), flags)


def exchange_energy(state: SlaterState, grid: GridSpec) -> float:
    """``X`` (without the coupling); nonnegative."""
    psi = state.orbitals
    K = len(psi)
    total = 0.0
    for k in range(K):
        for l in range(k, K):
            pair = np.sum(np.conj(psi[k]) * psi[l], axis=0)
            if not np.any(pair):
                continue
            pot_re = coulomb_potential_of(pair.real, grid, check=False) if np.any(pair.real) else 0.0
            pot_im = coulomb_potential_of(pair.imag, grid, check=False) if np.any(pair.imag) else 0.0
            val = grid.integrate(pair.real * pot_re + pair.imag * pot_im)
            total += val if k == l else 2 * val
    return 0.5 * total


@dataclass
class SlaterEnergy:
    total: float
    orbital_sum: float
    trace_form: float
    interaction: float
    direct: float
    exchange: float
    field: float
    with_exchange: bool


def slater_energy(state: SlaterState, spec: ProblemSpec, W: np.ndarray, A: np.ndarray | None = None,
                  with_exchange: bool = True, V: np.ndarray | None = None) -> SlaterEnergy:
    """Energy of the Slater determinant built from ``state`` (see module docstring).

    ``trace_form`` is ``Tr^-(H - lambda_N) + lambda_N N_used``, equal to the
    orbital sum when the occupation is a full set of lowest levels.
    """
    g = spec.grid
    if state.potential_digest is not None and state.potential_digest != _digest(W):
        raise ValueError("W does not match the potential the spectrum was computed for")
    V = spec.potential_field() if V is None else V
    c = spec.coupling
    if A is not None and np.any(A):
        fe = field_energy(A, g, spec.kappa, spec.h) if spec.kappa > 0 else float("inf")
    else:
        fe = 0.0
    if state.N_used == 0:
        return SlaterEnergy(fe, 0.0, 0.0, 0.0, 0.0, 0.0, fe, with_exchange)
    lam = state.eigenvalues
    orb = float(np.sum(lam))
    lamN = state.lambda_N
    allv = state.spectrum.eigenvalues
    trace_form = float(np.sum(np.minimum(allv - lamN, 0.0))) + lamN * state.N_used
    inter = g.integrate((W - V) * state.rho)
    direct = 0.5 * c * coulomb_energy_D(state.rho, state.rho, g, check=False)
    exch = c * exchange_energy(state, g) if with_exchange else 0.0
    total = orb + inter + direct - exch + fe
    return SlaterEnergy(total, orb, trace_form, inter, direct, exch, fe, with_exchange)


def density_discrepancy(rho_psi: np.ndarray, rho_tf: np.ndarray, grid: GridSpec) -> tuple[float, float]:
    """``(D(d, d), D(d, d) / D(rho_tf, rho_tf))`` with ``d = rho_psi - rho_tf``."""
    delta = rho_psi - rho_tf
    dd = coulomb_energy_D(delta, delta, grid, check=False)
    ref = coulomb_energy_D(rho_tf, rho_tf, grid, check=False)
    return dd, (dd / ref if ref > 0 else float("nan"))


@dataclass
class LiebOxfordReport:
    exchange: float
    bound: float
    margin: float
    C: float
    holds: bool


def lieb_oxford_diagnostic(state: SlaterState, grid: GridSpec, C: float = C_LO,
                           exchange: float | None = None) -> LiebOxfordReport:
    """Check ``X <= C int rho^{4/3}``; the margin is ``C int rho^{4/3} - X``.

    Equivalently ``D/2 - X >= D/2 - C int rho^{4/3}``.  Both sides are
    dilation covariant, so no coupling factor enters.
    """
    X = exchange_energy(state, grid) if exchange is None else exchange
    bound = C * grid.integrate(state.rho ** (4.0 / 3.0))
    margin = bound - X
    return LiebOxfordReport(X, bound, margin, C, bool(margin >= -1e-12 * max(1.0, bound)))


@lru_cache(maxsize=1)
def _scott_zero() -> float:
    return scott_hydrogen_oracle().S


@dataclass
class UpperBoundReport:
    E_upper: float
    E_upper_no_exchange: float
    components: dict
    N_used: int
    lambda_N: float | None
    discrepancy: float
    discrepancy_ratio: float
    lieb_oxford_margin: float
    field_norm: float
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"E_upper": self.E_upper, "E_upper_no_exchange": self.E_upper_no_exchange,
                "components": dict(self.components), "N_used": self.N_used,
                "lambda_N": self.lambda_N, "discrepancy": self.discrepancy,
                "discrepancy_ratio": self.discrepancy_ratio,
                "lieb_oxford_margin": self.lieb_oxford_margin, "field_norm": self.field_norm,
                "flags": list(self.flags)}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.__cause__ = exc


def upper_bound_pipeline(spec: ProblemSpec, minimizer_opts: MinimizeOptions | None = None,
                         scott_S: float | None = None, dense_budget: int | None = None,
                         tol: float = 1e-9) -> UpperBoundReport:
    """TF potential, field minimisation, spectrum, Slater determinant, energies.

    The Scott reference ``sum_m 2 z_m^2 S h^-2`` uses ``scott_S`` (default:
    the hydrogen oracle value ``S(0)``, an upper bound for ``S(kappa)``).
    """
    g, h = spec.grid, spec.h
    budget = {} if dense_budget is None else {"dense_budget": dense_budget}
    flags: list[str] = []

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:  # noqa: BLE001 - tagged and re-raised
            raise PipelineError(name, exc) from exc

    tf = stage("tf", lambda: tf_solve(spec))
    flags += [f"tf:{f}" for f in tf.flags]
    W = tf.W
    A = None
    if spec.kappa > 0:
        A, rep = stage("minimize", lambda: minimize_field(spec, None, minimizer_opts, V=W,
                                                          tol=tol, **budget))
        if not rep.converged:
            flags.append("minimizer_unconverged")
        if not np.any(A):
            A = None
    s = stage("spectrum", lambda: negative_spectrum(PauliOperator(g, h, W, A), 0.0, tol, **budget))
    flags += [f"spectrum:{f}" for f in s.flags]
    state = stage("slater", lambda: slater_density(s, spec.n_electrons, W))
    flags += state.flags
    e_x = stage("energy", lambda: slater_energy(state, spec, W, A, True))
    e_0 = slater_energy(state, spec, W, A, False)
    if e_x.total > e_0.total + 1e-12 * abs(e_0.total):
        flags.append("exchange_sign_violation")
    dd, ratio = stage("discrepancy", lambda: density_discrepancy(state.rho, tf.rho, g))
    lo = lieb_oxford_diagnostic(state, g, exchange=e_x.exchange / spec.coupling)
    if not lo.holds:
        flags.append("lieb_oxford_violation")
    S = _scott_zero() if scott_S is None else scott_S
    scott_ref = sum(scott_scaled(S, n.charge, h) for n in spec.nuclei)
    components = {"trace": e_x.orbital_sum, "interaction": e_x.interaction, "field": e_x.field,
                  "direct": e_x.direct, "exchange": e_x.exchange, "tf": tf.energy,
                  "scott_ref": scott_ref, "tf_plus_scott": tf.energy + scott_ref}
    return UpperBoundReport(e_x.total, e_0.total, components, state.N_used, state.lambda_N,
                            dd, ratio, lo.margin, 0.0 if A is None else field_norm(A, g), flags)
