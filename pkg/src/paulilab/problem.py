"""Grids, potentials, problem configuration and the Z-scaling map.

Fields are plain numpy arrays laid out on the grid:

* scalar field  -- shape ``grid.shape``            (``(n,)*d``)
* vector field  -- shape ``(d,) + grid.shape``
* spinor field  -- shape ``(2,) + grid.shape``, complex

Integrals over the box use the weight ``grid.cell_volume`` per site.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

#: Largest number of grid sites accepted by :func:`build_grid`.
DEFAULT_MAX_SITES = 4_000_000

#: Minimal number of points per axis.  The stencils need at least three.
MIN_POINTS = 3


class ConfigError(ValueError):
    """Invalid problem or sweep configuration."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on the cube ``[-L, L]^d``.

    Every site is an unknown; fields vanish on the (virtual) layer just
    outside the cube, which is how the homogeneous Dirichlet condition is
    imposed by all stencils in the package.
    """

    dimension: int
    n: int
    box_halfwidth: float

    @property
    def spacing(self) -> float:
        return 2.0 * self.box_halfwidth / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dimension

    @property
    def size(self) -> int:
        return self.n**self.dimension

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @cached_property
    def axis(self) -> np.ndarray:
        # (i - c) * dx is exactly antisymmetric under i -> n-1-i
        c = (self.n - 1) / 2.0
        return (np.arange(self.n) - c) * self.spacing

    def coordinates(self) -> np.ndarray:
        """Site coordinates, shape ``(d,) + shape``."""
        return np.stack(np.meshgrid(*([self.axis] * self.dimension), indexing="ij"))

    def distance(self, point: Sequence[float]) -> np.ndarray:
        """Euclidean distance of every site to ``point``."""
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dimension,):
            raise ValueError(f"point must have {self.dimension} coordinates")
        r2 = np.zeros(self.shape)
        for j in range(self.dimension):
            sh = [1] * self.dimension
            sh[j] = self.n
            r2 = r2 + ((self.axis - p[j]) ** 2).reshape(sh)
        return np.sqrt(r2)

    def radius(self) -> np.ndarray:
        return self.distance(np.zeros(self.dimension))

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.cell_volume)

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """Grid inner product ``dV * sum(conj(u) v)``."""
        return complex(np.vdot(u, v) * self.cell_volume)

    def contains(self, point: Sequence[float]) -> bool:
        return bool(np.all(np.abs(np.asarray(point, float)) < self.box_halfwidth))

    def boundary_mask(self, width: int = 1) -> np.ndarray:
        """Sites in the outer ``width`` layers of the box."""
        m = np.zeros(self.shape, dtype=bool)
        for j in range(self.dimension):
            idx = [slice(None)] * self.dimension
            idx[j] = slice(0, width)
            m[tuple(idx)] = True
            idx[j] = slice(self.n - width, self.n)
            m[tuple(idx)] = True
        return m

    def check_field(self, f: np.ndarray, leading: tuple[int, ...] = ()) -> None:
        expect = leading + self.shape
        if f.shape != expect:
            raise ValueError(f"field shape {f.shape} does not match grid {expect}")


def build_grid(dimension: int, n: int, box_halfwidth: float,
               max_sites: int = DEFAULT_MAX_SITES) -> GridSpec:
    """Create a uniform grid with ``n`` points per axis on ``[-L, L]^d``."""
    if dimension not in (2, 3):
        raise ConfigError(f"unsupported dimension {dimension}; expected 2 or 3")
    if int(n) != n or n < MIN_POINTS:
        raise ConfigError(f"need an integer n >= {MIN_POINTS}, got {n}")
    if not box_halfwidth > 0:
        raise ConfigError("box half-width must be positive")
    if n**dimension > max_sites:
        raise ConfigError(f"{n}^{dimension} sites exceed the memory budget of {max_sites}")
    return GridSpec(int(dimension), int(n), float(box_halfwidth))


@dataclass(frozen=True)
class Nucleus:
    charge: float
    position: tuple[float, ...]


@dataclass(frozen=True)
class PotentialSpec:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ProblemSpec:
    """Parameters of one semiclassical problem.

    A problem with semiclassical parameter ``h`` and nuclear charges ``z_m``
    is the Z-scaled image of a molecule with total nuclear charge
    ``Z = h**-3 * sum(z_m)``; in this frame the electron-electron coupling
    is ``h**3`` and electron counts are physical counts.  With ``h = 1`` the
    frame is the unscaled one.
    """

    grid: GridSpec
    h: float
    kappa: float = 0.0
    nuclei: tuple[Nucleus, ...] = ()
    electron_count: float | None = None
    epsilon_cut: float | None = None
    potential: PotentialSpec | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError("h must be positive")
        if self.kappa < 0:
            raise ConfigError("kappa must be nonnegative")
        if self.nuclei:
            if sum(nu.charge for nu in self.nuclei) <= 0:
                raise ConfigError("total nuclear charge must be positive")
            for nu in self.nuclei:
                if len(nu.position) != self.grid.dimension:
                    raise ConfigError("nucleus position has wrong dimension")
                if not self.grid.contains(nu.position):
                    raise ConfigError(f"nucleus at {nu.position} outside the box")
        if self.epsilon_cut is not None and self.epsilon_cut < self.grid.spacing / 2:
            raise ConfigError("epsilon_cut must be at least half the grid spacing")
        if self.electron_count is not None and self.electron_count < 0:
            raise ConfigError("electron count must be nonnegative")
        if not self.nuclei and self.potential is None:
            raise ConfigError("problem needs nuclei or a potential")

    @property
    def eps(self) -> float:
        """Effective Coulomb mollification radius, at least half a cell."""
        e = self.grid.spacing / 2
        return max(e, self.epsilon_cut) if self.epsilon_cut is not None else e

    @property
    def total_charge(self) -> float:
        return float(sum(nu.charge for nu in self.nuclei))

    @property
    def nuclear_count(self) -> float:
        """Electron count of the neutral system, ``h^-3 sum z_m``."""
        return self.total_charge * self.h**-3

    @property
    def coupling(self) -> float:
        """Electron-electron coupling constant in this frame."""
        return self.h**3

    @property
    def n_electrons(self) -> float:
        return self.nuclear_count if self.electron_count is None else float(self.electron_count)

    def potential_field(self) -> np.ndarray:
        if self.potential is not None:
            return smooth_potential(self.grid, self.potential.kind, self.potential.params)
        return coulomb_potential(self.grid, self.nuclei, self.eps)

    def with_(self, **changes) -> "ProblemSpec":
        from dataclasses import replace
        return replace(self, **changes)

    # -- config documents -------------------------------------------------

    def to_config(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "dimension": self.grid.dimension,
            "grid": {"n": self.grid.n, "box_halfwidth": self.grid.box_halfwidth},
            "h": self.h,
            "kappa": self.kappa,
            "nuclei": [{"z": nu.charge, "y": list(nu.position)} for nu in self.nuclei],
            "electron_count": self.electron_count,
            "epsilon_cut": self.epsilon_cut,
        }
        if self.potential is not None:
            doc["potential"] = {"kind": self.potential.kind, "params": dict(self.potential.params)}
        return doc


def problem_from_config(doc: dict[str, Any]) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from a parsed JSON config document."""
    try:
        d = int(doc["dimension"])
        g = doc["grid"]
        grid = build_grid(d, int(g["n"]), float(g["box_halfwidth"]))
        nuclei = tuple(Nucleus(float(nu["z"]), tuple(float(c) for c in nu["y"]))
                       for nu in doc.get("nuclei", []) or [])
        pot = doc.get("potential")
        potential = PotentialSpec(pot["kind"], dict(pot.get("params", {}))) if pot else None
        eps = doc.get("epsilon_cut")
        ne = doc.get("electron_count")
        return ProblemSpec(grid=grid, h=float(doc["h"]), kappa=float(doc.get("kappa", 0.0)),
                           nuclei=nuclei, electron_count=None if ne is None else float(ne),
                           epsilon_cut=None if eps is None else float(eps), potential=potential)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc!r}") from exc


def load_config(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- potentials --------------------------------------------------------------

def coulomb_potential(grid: GridSpec, nuclei: Sequence[Nucleus], epsilon_cut: float) -> np.ndarray:
    """``V(x) = sum_m z_m / max(|x - y_m|, eps)``."""
    if not nuclei:
        raise ValueError("need at least one nucleus")
    if epsilon_cut < grid.spacing / 2 * (1 - 1e-12):
        raise ValueError("epsilon_cut must be at least half the grid spacing")
    V = np.zeros(grid.shape)
    for nu in nuclei:
        if not grid.contains(nu.position):
            raise ValueError(f"nucleus at {nu.position} lies outside the box")
        V += nu.charge / np.maximum(grid.distance(nu.position), epsilon_cut)
    return V


def smooth_potential(grid: GridSpec, kind: str, params: dict | None = None) -> np.ndarray:
    """Smooth confining test potentials.

    ``paraboloid``   ``c0 - c1 |x - center|^2``
    ``gaussian``     ``amplitude * exp(-|x - center|^2 / width^2) - offset``
    ``double-well``  ``c0 - c1 (x_1^2 - a^2)^2 - c2 (|x|^2 - x_1^2)``
    """
    p = dict(params or {})
    center = p.pop("center", None) or [0.0] * grid.dimension
    r2 = grid.distance(center) ** 2
    if kind == "paraboloid":
        return p.get("c0", 1.0) - p.get("c1", 1.0) * r2
    if kind == "gaussian":
        w = p.get("width", 1.0)
        return p.get("amplitude", 1.0) * np.exp(-r2 / w**2) - p.get("offset", 0.0)
    if kind == "double-well":
        x = grid.coordinates()
        x1 = x[0] - center[0]
        a = p.get("a", 1.0)
        rest = r2 - x1**2
        return p.get("c0", 1.0) - p.get("c1", 1.0) * (x1**2 - a**2) ** 2 - p.get("c2", 1.0) * rest
    raise ValueError(f"unknown potential kind {kind!r}")


# -- Z-scaling ---------------------------------------------------------------

@dataclass(frozen=True)
class ScaledProblem:
    """Image of a physical molecule under ``x -> x Z^(1/3)``."""

    z_total: float
    alpha: float
    h: float
    kappa: float
    charges: tuple[float, ...]
    positions: tuple[tuple[float, ...], ...]
    energy_factor: float
    small_coupling: bool

    def nuclei(self) -> tuple[Nucleus, ...]:
        return tuple(Nucleus(z, y) for z, y in zip(self.charges, self.positions))

    def problem(self, grid: GridSpec, electron_count: float | None = None,
                epsilon_cut: float | None = None) -> ProblemSpec:
        return ProblemSpec(grid=grid, h=self.h, kappa=self.kappa, nuclei=self.nuclei(),
                           electron_count=electron_count, epsilon_cut=epsilon_cut)

    def physical_energy(self, energy: float) -> float:
        return energy * self.energy_factor


#: Small-coupling bound ``alpha Z <= kappa_star`` used for the warning flag.
KAPPA_STAR = 1.0


def rescale_problem(charges: Sequence[float], positions: Sequence[Sequence[float]],
                    alpha: float, kappa_star: float = KAPPA_STAR) -> ScaledProblem:
    """Map a molecule with charges ``Z_m`` at ``y_m`` to the semiclassical frame.

    ``h = Z^(-1/3)``, ``kappa = alpha Z``, positions ``y_m Z^(1/3)``,
    charges ``Z_m / Z``; energies are multiplied by ``Z^(4/3)`` on the way back.
    """
    Z = float(sum(charges))
    if Z <= 0:
        raise ConfigError("total charge must be positive")
    if alpha < 0:
        raise ConfigError("alpha must be nonnegative")
    s = Z ** (1.0 / 3.0)
    small = alpha * Z <= kappa_star
    if not small:
        warnings.warn("alpha exceeds the small-coupling bound kappa*/Z", stacklevel=2)
    return ScaledProblem(
        z_total=Z, alpha=float(alpha), h=1.0 / s, kappa=alpha * Z,
        charges=tuple(float(z) / Z for z in charges),
        positions=tuple(tuple(float(c) * s for c in y) for y in positions),
        energy_factor=Z ** (4.0 / 3.0), small_coupling=small,
    )


def unscale_problem(scaled: ScaledProblem) -> tuple[list[float], list[list[float]], float]:
    """Inverse of :func:`rescale_problem`: ``(charges, positions, alpha)``."""
    Z = scaled.h**-3
    s = Z ** (1.0 / 3.0)
    charges = [z * Z for z in scaled.charges]
    positions = [[c / s for c in y] for y in scaled.positions]
    return charges, positions, scaled.kappa / Z


def internuclear_repulsion(charges: Sequence[float], positions: Sequence[Sequence[float]]) -> float:
    total = 0.0
    pts = [np.asarray(p, float) for p in positions]
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            dist = float(np.linalg.norm(pts[i] - pts[j]))
            if dist == 0.0:
                raise ValueError("coincident nuclei")
            total += charges[i] * charges[j] / dist
    return total

