"""Negative spectrum of the Pauli operator and quantities built from it.

Every spectrum carries a completeness certificate: the number of
eigenvalues below the cutoff is counted independently by Sylvester's law
of inertia on a symmetric-pivoting sparse LU factorisation of
``H - mu``, and the eigensolver output must match that count exactly.

Eigenfunctions are normalised in the grid inner product,
``dV * sum |psi|^2 = 1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import stencils
from .pauli import SIGMA, BudgetError, PauliOperator, curl_adjoint
from .problem import GridSpec

log = logging.getLogger(__name__)

#: Dense eigen-solves are used when the matrix has at most this many rows.
DEFAULT_DENSE_BUDGET = 4096

#: Under ``method="auto"`` matrices up to this size are always solved densely.
AUTO_DENSE_ROWS = 1024

#: Eigenfunction mass on the outer grid layer above which a flag is raised.
BOUNDARY_MASS_LIMIT = 1e-6

_V0_SEED = 20240607


class IncompleteSpectrumError(RuntimeError):
    """The eigensolver did not return every eigenvalue below the cutoff."""

    def __init__(self, counted: int, found: int, detail: str = ""):
        self.counted = counted
        self.found = found
        self.gap = counted - found
        super().__init__(f"counted {counted} eigenvalues below cutoff but found {found}. {detail}")


class InertiaError(RuntimeError):
    """Factorisation unsuitable for an inertia count."""


# -- inertia certificate -------------------------------------------------------

def grid_nd_ordering(shape: tuple[int, ...], components: int = 1, leaf: int = 6) -> np.ndarray:
    """Geometric nested-dissection ordering of a tensor grid.

    Boxes are halved along their longest axis; each separating plane is
    numbered after both halves.  With ``components > 1`` the unknowns are
    stored component-major and all components of a site stay adjacent.
    """
    size = int(np.prod(shape))
    out: list[np.ndarray] = []

    def rec(block):
        if block.size == 0:
            return
        if max(block.shape) <= leaf:
            out.append(block.ravel())
            return
        ax = int(np.argmax(block.shape))
        m = block.shape[ax] // 2
        rec(np.take(block, range(m), axis=ax))
        rec(np.take(block, range(m + 1, block.shape[ax]), axis=ax))
        out.append(np.take(block, [m], axis=ax).ravel())

    rec(np.arange(size).reshape(shape))
    sites = np.concatenate(out)
    return (sites[:, None] + size * np.arange(components)[None, :]).ravel()


class _PermutedLU:
    """LU of ``S[p][:, p]`` exposing ``solve`` for ``S`` itself."""

    def __init__(self, S: sp.spmatrix, perm: np.ndarray):
        self.perm = perm
        self.lu = spla.splu(S.tocsr()[perm][:, perm].tocsc(), permc_spec="NATURAL",
                            diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
        self.perm_r, self.perm_c, self.U = self.lu.perm_r, self.lu.perm_c, self.lu.U

    def solve(self, b):
        y = self.lu.solve(b[self.perm])
        x = np.empty_like(y)
        x[self.perm] = y
        return x


def _symmetric_factor(S: sp.spmatrix, perm: np.ndarray | None = None):
    """Sparse LU restricted to diagonal pivots (an ``L D L^H`` in disguise)."""
    if perm is not None:
        return _PermutedLU(S, perm)
    return spla.splu(S.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options=dict(SymmetricMode=True))


def inertia_count(M: sp.spmatrix, mu: float, perm: np.ndarray | None = None) -> int:
    """Number of eigenvalues of the Hermitian matrix ``M`` strictly below ``mu``.

    Uses an LU factorisation with symmetric (diagonal) pivoting, so that
    ``P (M - mu) P^T = L D L^H`` and the signs of ``diag(U)`` give the inertia.
    ``perm`` is an optional fill-reducing ordering applied before factoring.
    """
    N = M.shape[0]
    S = M - mu * sp.identity(N, dtype=M.dtype, format="csc")
    try:
        lu = _symmetric_factor(S, perm)
    except RuntimeError as exc:  # exactly singular
        raise InertiaError(f"singular shifted matrix at mu={mu}: {exc}") from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise InertiaError("factorisation used off-diagonal pivots")
    diag = lu.U.diagonal()
    if np.any(diag.real == 0):
        raise InertiaError(f"zero pivot at mu={mu}")
    return int(np.count_nonzero(diag.real < 0))


def gershgorin_lower(M: sp.spmatrix) -> float:
    """Lower bound on the spectrum of a Hermitian matrix."""
    d = M.diagonal().real
    off = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - off))


def dense_inertia_count(M: np.ndarray, mu: float) -> int:
    lu, d, _ = scipy.linalg.ldl(M - mu * np.eye(M.shape[0]), hermitian=True)
    ev = np.linalg.eigvalsh(d)
    return int(np.count_nonzero(ev < 0))


# -- generic Hermitian solve ---------------------------------------------------

@dataclass
class _Eig:
    values: np.ndarray
    vectors: np.ndarray  # columns, unit l2 norm
    certified: int
    method: str


def _eigs_below(M: sp.spmatrix, mu: float, tol: float, dense_budget: int,
                method: str = "auto", max_tries: int = 4,
                ordering=None) -> _Eig:
    """``ordering`` is a callable returning a fill-reducing permutation of ``M``."""
    N = M.shape[0]
    if method not in ("auto", "dense", "iterative"):
        raise ValueError(f"unknown method {method!r}")
    if method == "dense" and N > max(dense_budget, 0):
        raise BudgetError(f"dense solve of size {N} exceeds budget {dense_budget}")
    perm = ordering() if ordering is not None and N > AUTO_DENSE_ROWS else None
    certified = inertia_count(M, mu, perm)
    # within budget, dense pays off only for small matrices or many wanted pairs
    use_dense = method == "dense" or (method == "auto" and N <= dense_budget and (
        N <= AUTO_DENSE_ROWS or certified > N // 8))
    if use_dense:
        vals, vecs = _dense_solve(M.toarray(), mu)
        if len(vals) != certified:
            # eigenvalues within roundoff of mu may land on either side
            thr = 1e3 * np.finfo(float).eps * max(abs(gershgorin_lower(-M)), abs(gershgorin_lower(M)))
            clear = int(np.count_nonzero(vals < mu - thr))
            if not clear <= certified <= len(vals):
                raise IncompleteSpectrumError(certified, len(vals), "dense path")
            vals, vecs = vals[:certified], vecs[:, :certified]
        return _Eig(vals, vecs, certified, "dense")

    if certified == 0:
        return _Eig(np.zeros(0), np.zeros((N, 0), dtype=M.dtype), 0, "iterative")
    rng = np.random.default_rng(_V0_SEED)
    v0 = rng.standard_normal(N)
    if np.iscomplexobj(M):
        v0 = v0 + 1j * rng.standard_normal(N)
    k = certified + max(4, certified // 8)
    # shift-invert from below the spectrum: the wanted eigenvalues become
    # the largest of (M - sigma)^-1 and Lanczos converges in few steps
    span = max(abs(mu), 1.0)
    sigma = gershgorin_lower(M) - 1e-3 * span
    lu = _symmetric_factor(M - sigma * sp.identity(N, dtype=M.dtype, format="csc"), perm)
    OPinv = spla.LinearOperator(M.shape, matvec=lu.solve, dtype=M.dtype)
    found = 0
    for attempt in range(max_tries):
        if k >= N - 1:
            if N <= 4 * max(dense_budget, 1):
                vals, vecs = _dense_solve(M.toarray(), mu)
                if len(vals) == certified:
                    return _Eig(vals, vecs, certified, "dense-fallback")
            break
        ncv = min(N, max(2 * k + 1, k + 32))
        vals, vecs = spla.eigsh(M, k=k, sigma=sigma, which="LM", OPinv=OPinv, tol=tol * 1e-2,
                                v0=v0, ncv=ncv, maxiter=20 * N)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        below = vals < mu
        found = int(np.count_nonzero(below))
        if found == certified:
            return _Eig(vals[below], vecs[:, below], certified, "iterative")
        log.info("eigsh attempt %d found %d of %d eigenvalues", attempt, found, certified)
        k = int(1.5 * k) + 4
    raise IncompleteSpectrumError(certified, found, "iterative path")


def _dense_solve(M: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = scipy.linalg.eigh(M, subset_by_value=(-np.inf, mu), driver="evr")
    keep = vals < mu
    return vals[keep], vecs[:, keep]


# -- spectrum of the Pauli operator -------------------------------------------

@dataclass
class Spectrum:
    """Eigenpairs ``lambda_k < mu_cut`` with spinor eigenfunctions ``(K, 2) + shape``."""

    grid: GridSpec
    eigenvalues: np.ndarray
    vectors: np.ndarray
    mu_cut: float
    tol: float
    method: str = ""
    certified_count: int = 0
    max_residual: float = 0.0
    boundary_mass: float = 0.0
    weyl_count: float | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def trace_neg(self) -> float:
        return trace_neg(self)


def negative_spectrum(op: PauliOperator, mu_cut: float = 0.0, tol: float = 1e-9,
                      dense_budget: int = DEFAULT_DENSE_BUDGET, method: str = "auto",
                      weyl_slack: float = 0.5) -> Spectrum:
    """All eigenpairs of ``op`` below ``mu_cut``, certified complete.

    For ``A = 0`` the spin blocks decouple and the real scalar block is
    solved once; each scalar eigenfunction ``f`` yields ``(f, 0)`` and
    ``(0, f)``.
    """
    g = op.grid
    shape = g.shape
    scale = 1.0 / np.sqrt(g.cell_volume)
    # the budget refers to the full spinor matrix in both branches
    budget_rows = dense_budget if op.has_field else dense_budget // 2
    if op.has_field:
        eig = _eigs_below(op.sparse(), mu_cut, tol, budget_rows, method,
                          ordering=lambda: grid_nd_ordering(shape, 2))
        K = len(eig.values)
        vals = eig.values
        vecs = (eig.vectors.T * scale).reshape((K, 2) + shape)
    else:
        eig = _eigs_below(op.scalar_sparse(), mu_cut, tol, budget_rows, method,
                          ordering=lambda: grid_nd_ordering(shape))
        Ks = len(eig.values)
        vals = np.repeat(eig.values, 2)
        f = (eig.vectors.T.real * scale).reshape((Ks,) + shape)
        vecs = np.zeros((2 * Ks, 2) + shape, dtype=complex)
        vecs[0::2, 0] = f
        vecs[1::2, 1] = f
    certified = eig.certified if op.has_field else 2 * eig.certified

    s = Spectrum(grid=g, eigenvalues=vals, vectors=vecs, mu_cut=mu_cut, tol=tol,
                 method=eig.method, certified_count=certified)
    _diagnose(s, op, weyl_slack)
    return s


def _diagnose(s: Spectrum, op: PauliOperator, weyl_slack: float) -> None:
    from .weyl import weyl_counting

    g = s.grid
    if s.count:
        res = 0.0
        for lam, psi in zip(s.eigenvalues, s.vectors):
            r = op.apply(psi) - lam * psi
            nr = np.sqrt(g.cell_volume * np.sum(np.abs(r) ** 2))
            res = max(res, nr / max(1.0, abs(lam)))
        s.max_residual = float(res)
        if res > s.tol:
            s.flags.append("residual")
        edge = g.boundary_mask()
        mass = g.cell_volume * np.sum(np.abs(s.vectors[..., edge]) ** 2, axis=(1, 2))
        s.boundary_mass = float(mass.max())
        if s.boundary_mass > BOUNDARY_MASS_LIMIT:
            s.flags.append("boundary_mass")
    w = weyl_counting(op.V, g, s.mu_cut, op.h)
    s.weyl_count = w
    if abs(s.count - w) > weyl_slack * max(w, 1.0):
        s.flags.append("weyl_count_mismatch")


# -- reductions ----------------------------------------------------------------

def _require_complete(s: Spectrum, tau: float) -> None:
    if tau > s.mu_cut:
        raise ValueError(f"spectrum only complete below {s.mu_cut}, requested {tau}")


def trace_neg(s: Spectrum) -> float:
    """Sum of the negative eigenvalues."""
    _require_complete(s, 0.0)
    lam = s.eigenvalues
    return float(np.sum(lam[lam < 0]))


def counting(s: Spectrum, mu: float) -> int:
    """Number of eigenvalues strictly below ``mu``."""
    _require_complete(s, mu)
    return int(np.count_nonzero(s.eigenvalues < mu))


def density(s: Spectrum, tau: float = 0.0, weights: np.ndarray | None = None) -> np.ndarray:
    """Diagonal of the spectral projector below ``tau`` (optionally weighted)."""
    _require_complete(s, tau)
    if weights is None:
        sel = s.eigenvalues < tau
        w = np.ones(int(np.count_nonzero(sel)))
    else:
        sel = np.ones(s.count, dtype=bool)
        w = np.asarray(weights, float)
    rho = np.zeros(s.grid.shape)
    for wk, psi in zip(w, s.vectors[sel]):
        if wk != 0:
            rho += wk * np.sum(np.abs(psi) ** 2, axis=0)
    return rho


def energy_density(s: Spectrum) -> np.ndarray:
    """``sum_{lambda_k < 0} lambda_k |psi_k|^2``."""
    lam = s.eigenvalues
    return density(s, weights=np.where(lam < 0, lam, 0.0)) if s.count else np.zeros(s.grid.shape)


def spin_density(psi: np.ndarray) -> np.ndarray:
    """``psi^dagger sigma_i psi`` for i = 1, 2, 3, shape ``(3,) + shape``."""
    z = np.conj(psi[0]) * psi[1]
    return np.stack([2 * z.real, 2 * z.imag, np.abs(psi[0]) ** 2 - np.abs(psi[1]) ** 2])


def current_from_vectors(vectors: np.ndarray, weights: np.ndarray, A: np.ndarray | None,
                         h: float, grid: GridSpec) -> np.ndarray:
    """Variational current of ``sum_k w_k <psi_k, H(A) psi_k>`` with respect to ``A``.

    Returns ``Phi`` with ``d sum_k w_k <psi_k, H psi_k> = dV sum Phi . dA``
    for grid-normalised inner products.
    """
    d, dx = grid.dimension, grid.spacing
    dens = np.zeros(grid.shape)
    para = np.zeros((d,) + grid.shape)
    spin = np.zeros((3,) + grid.shape)
    for wk, psi in zip(weights, vectors):
        if wk == 0:
            continue
        dens += wk * np.sum(np.abs(psi) ** 2, axis=0)
        spin += wk * spin_density(psi)
        for j in range(d):
            dpsi = stencils.central_diff(psi, j, dx, d)
            para[j] += wk * np.sum((np.conj(psi) * dpsi).imag, axis=0)
    zee = curl_adjoint(spin[2] if d == 2 else spin, grid)
    Phi = -2.0 * h * para - h * zee
    if A is not None:
        Phi = Phi + 2.0 * A * dens
    return Phi


def current(s: Spectrum, A: np.ndarray | None, h: float,
            weights: np.ndarray | None = None) -> np.ndarray:
    """Current ``Phi`` with ``dTr^- = int Phi . dA`` (weights: ``f'(lambda_k)``)."""
    if weights is None:
        _require_complete(s, 0.0)
        weights = (s.eigenvalues < 0).astype(float)
    return current_from_vectors(s.vectors, weights, A, h, s.grid)


# -- smoothed trace ------------------------------------------------------------

def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t**2)


def smooth_neg_part(lam, width: float):
    """C^2 smoothing ``f_L`` of ``min(lambda, 0)``.

    ``f_L(lambda) = lambda`` for ``lambda <= -L`` and ``0`` for ``lambda >= L``;
    ``f_L' = 1 - S((lambda + L) / 2L)`` with ``S`` the quintic smoothstep.
    """
    lam = np.asarray(lam, float)
    if width <= 0:
        return np.minimum(lam, 0.0)
    t = np.clip((lam + width) / (2 * width), 0.0, 1.0)
    mid = -2 * width * (0.5 - t + t**6 - 3 * t**5 + 2.5 * t**4)
    return np.where(lam <= -width, lam, np.where(lam >= width, 0.0, mid))


def smooth_neg_part_derivative(lam, width: float):
    lam = np.asarray(lam, float)
    if width <= 0:
        return (lam < 0).astype(float)
    return 1.0 - _smoothstep((lam + width) / (2 * width))


def smoothed_trace(s: Spectrum, width: float) -> float:
    """``sum_k f_L(lambda_k)``; needs the spectrum complete below ``L``."""
    _require_complete(s, width)
    return float(np.sum(smooth_neg_part(s.eigenvalues, width)))


def default_smoothing_width(s: Spectrum, rel: float = 1e-3) -> float:
    return rel * abs(float(s.eigenvalues[0])) if s.count else 0.0


# -- localisation ---------------------------------------------------------------

def _sandwich(op: PauliOperator, window: np.ndarray):
    """``Psi H Psi`` restricted to the support of the window, and the support."""
    supp = window.ravel() > 0
    w = window.ravel()[supp]
    if op.has_field:
        M = op.sparse()
        keep = np.concatenate([supp, supp])
        ww = np.concatenate([w, w])
    else:
        M = op.scalar_sparse()
        keep = supp
        ww = w
    M = M[keep][:, keep]
    D = sp.diags(ww)
    return (D @ M @ D).tocsr(), keep, ww


def sandwich_spectrum(op: PauliOperator, window: np.ndarray, tol: float = 1e-9,
                      dense_budget: int = DEFAULT_DENSE_BUDGET, method: str = "auto",
                      mu_cut: float = 0.0):
    """Eigenvalues of ``Psi H Psi`` below ``mu_cut`` and the vectors ``Psi chi_k``.

    The vectors are returned as spinors on the full grid (grid-normalised
    ``chi_k`` multiplied by the window), ready for
    :func:`current_from_vectors`.  Spin multiplicity is expanded for ``A = 0``.
    """
    g = op.grid
    if np.any(window < 0) or np.any(window > 1 + 1e-12):
        raise ValueError("window must take values in [0, 1]")
    if not np.any(window > 0):
        return np.zeros(0), np.zeros((0, 2) + g.shape, dtype=complex)
    M, keep, ww = _sandwich(op, window)
    # the budget refers to the full spinor matrix
    rows = M.shape[0] if op.has_field else 2 * M.shape[0]
    comps = 2 if op.has_field else 1

    def ordering():
        # renumber the grid ordering onto the retained unknowns
        pos = np.full(keep.size, -1)
        pos[keep] = np.arange(M.shape[0])
        p = pos[grid_nd_ordering(g.shape, comps)]
        return p[p >= 0]

    eig = _eigs_below(M, mu_cut, tol, dense_budget * M.shape[0] // max(rows, 1), method,
                      ordering=ordering)
    scale = 1.0 / np.sqrt(g.cell_volume)
    K = len(eig.values)
    if op.has_field:
        full = np.zeros((K, 2 * g.size), dtype=complex)
        full[:, keep] = (eig.vectors * ww[:, None]).T * scale
        return eig.values, full.reshape((K, 2) + g.shape)
    full = np.zeros((K, g.size))
    full[:, keep] = (eig.vectors.real * ww[:, None]).T * scale
    f = full.reshape((K,) + g.shape)
    vecs = np.zeros((2 * K, 2) + g.shape, dtype=complex)
    vecs[0::2, 0] = f
    vecs[1::2, 1] = f
    return np.repeat(eig.values, 2), vecs


def localized_trace_neg(window: np.ndarray, op: PauliOperator, spectrum: Spectrum | None = None,
                        tol: float = 1e-9, dense_budget: int = DEFAULT_DENSE_BUDGET,
                        method: str = "auto") -> tuple[float, float]:
    """``(Tr^-(Psi H Psi), Tr(Psi H^- Psi))`` for a window ``0 <= Psi <= 1``.

    The first is never smaller than the second.
    """
    g = op.grid
    g.check_field(window)
    vals, _ = sandwich_spectrum(op, window, tol, dense_budget, method)
    sandwich = float(np.sum(vals))
    if spectrum is None:
        spectrum = negative_spectrum(op, 0.0, tol, dense_budget, method)
    projected = g.integrate(energy_density(spectrum) * window**2)
    return sandwich, projected


@dataclass
class ISMResult:
    residual: float
    folded_residual: float
    operator_norm: float

    @property
    def relative(self) -> float:
        return self.residual / self.operator_norm


def ism_check(op: PauliOperator, partition: list[np.ndarray], dense_budget: int = 2048,
              pou_tol: float = 1e-12) -> ISMResult:
    """Residual of ``H = sum_j (psi_j H psi_j + 1/2 [[H, psi_j], psi_j])``.

    ``folded_residual`` measures the form
    ``H = sum_j psi_j (H + 1/2 sum_k [[H, psi_k], psi_k]) psi_j`` which on a
    grid holds only up to terms quadratic in the double commutators.
    """
    g = op.grid
    total = sum(p**2 for p in partition)
    if np.max(np.abs(total - 1.0)) > pou_tol:
        raise ValueError("partition functions must satisfy sum psi_j^2 = 1")
    H = op.dense(dense_budget)
    I2 = lambda p: np.concatenate([p.ravel(), p.ravel()])  # noqa: E731
    lhs = np.zeros_like(H)
    dc = np.zeros_like(H)
    for p in partition:
        q = I2(p)
        PHP = q[:, None] * H * q[None, :]
        comm2 = H * (q[None, :] ** 2) - 2 * PHP + (q[:, None] ** 2) * H
        lhs += PHP + 0.5 * comm2
        dc += 0.5 * comm2
    X = H + dc
    folded = sum(I2(p)[:, None] * X * I2(p)[None, :] for p in partition)
    nrm = np.linalg.norm(H, 2)
    return ISMResult(residual=float(np.linalg.norm(lhs - H, 2)),
                     folded_residual=float(np.linalg.norm(folded - H, 2)),
                     operator_norm=float(nrm))


def tr_neg_dense(M: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(M)
    return float(np.sum(ev[ev < 0]))


# -- radial oracle ------------------------------------------------------------

@dataclass
class RadialSpectrum:
    """Eigenvalues per angular momentum channel; multiplicity ``2(2l+1)``."""

    h: float
    r_max: float
    n_r: int
    channels: dict[int, np.ndarray]
    boundary_mass: dict[int, float]

    def multiplicity(self, l: int) -> int:
        return 2 * (2 * l + 1)

    def all_levels(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(eigenvalues, multiplicities)`` sorted ascending."""
        lam = np.concatenate([v for v in self.channels.values()]) if self.channels else np.zeros(0)
        mult = np.concatenate([np.full(len(v), self.multiplicity(l))
                               for l, v in self.channels.items()]) if self.channels else np.zeros(0)
        order = np.argsort(lam, kind="stable")
        return lam[order], mult[order]

    def trace_neg(self) -> float:
        lam, m = self.all_levels()
        return float(np.sum(lam * m))

    def counting(self, mu: float) -> int:
        lam, m = self.all_levels()
        return int(np.sum(m[lam < mu]))


def radial_spectrum(V_radial, h: float, l_max: int, n_r: int, r_max: float,
                    mu_cut: float = 0.0, max_levels: int | None = None,
                    mass_limit: float = BOUNDARY_MASS_LIMIT) -> RadialSpectrum:
    """Channel spectra of ``-h^2 u'' + h^2 l(l+1) u / r^2 - V(r) u`` on ``(0, r_max)``.

    Uniform mesh ``r_i = i dr``, ``i = 1..n_r``, Dirichlet at both ends.
    Raises ``ValueError`` when an eigenfunction carries more than
    ``mass_limit`` of its mass on the outer tenth of the interval.
    """
    dr = r_max / (n_r + 1)
    r = dr * np.arange(1, n_r + 1)
    Vr = np.asarray(V_radial(r), float)
    off = np.full(n_r - 1, -h * h / dr**2)
    channels, masses = {}, {}
    outer = r > 0.9 * r_max
    for l in range(l_max + 1):
        diag = 2 * h * h / dr**2 + h * h * l * (l + 1) / r**2 - Vr
        if max_levels is None:
            vals, vecs = scipy.linalg.eigh_tridiagonal(diag, off, select="v",
                                                       select_range=(-np.inf, mu_cut))
        else:
            vals, vecs = scipy.linalg.eigh_tridiagonal(diag, off, select="i",
                                                       select_range=(0, max_levels - 1))
            keep = vals < mu_cut
            vals, vecs = vals[keep], vecs[:, keep]
        keep = vals < mu_cut
        vals, vecs = vals[keep], vecs[:, keep]
        m = float(np.max(np.sum(vecs[outer] ** 2, axis=0))) if len(vals) else 0.0
        if m > mass_limit:
            raise ValueError(f"r_max={r_max} too small: channel {l} boundary mass {m:.2e}")
        channels[l] = vals
        masses[l] = m
    return RadialSpectrum(h=h, r_max=r_max, n_r=n_r, channels=channels, boundary_mass=masses)


def subadditivity_check(op: PauliOperator, partition: list[np.ndarray],
                        dense_budget: int = 2048) -> tuple[float, float]:
    """``(Tr^-(sum_j psi_j H psi_j), sum_j Tr^-(psi_j H psi_j))``, assembled dense.

    The first is never smaller than the second.
    """
    H = op.dense(dense_budget)
    parts = []
    for p in partition:
        q = np.concatenate([p.ravel(), p.ravel()])
        parts.append(q[:, None] * H * q[None, :])
    return tr_neg_dense(sum(parts)), float(sum(tr_neg_dense(P) for P in parts))
