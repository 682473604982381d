"""The Pauli operator ``((hD - A) . sigma)^2 - V`` on a grid.

The operator is discretised in expanded form

    -h^2 Lap + sum_j [ -(hD_j A_j + A_j hD_j) + A_j^2 ] - h sigma . B - V,

with ``hD_j = -i h dc_j`` (``dc_j`` the central difference), ``Lap`` the
3-point Laplacian and ``B`` the central-difference curl of ``A``.  This
form is Hermitian by construction and gauge covariant up to O(dx^2).  In
two dimensions only ``sigma_1, sigma_2`` enter the kinetic part and the
Zeeman term is ``-h B sigma_3`` with scalar ``B``.

Spinor arrays have shape ``(2,) + grid.shape``; flattened operators act
on ``u.ravel()`` (spin index slowest).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import stencils
from .problem import GridSpec

#: Dense assembly refuses matrices larger than this (rows).
DEFAULT_DENSE_BUDGET = 20000

SIGMA = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


class BudgetError(MemoryError):
    """Requested dense object exceeds the configured budget."""


def magnetic_field(A: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Central-difference curl.  Shape ``(3,) + shape`` in 3D, ``shape`` in 2D."""
    d, dx = grid.dimension, grid.spacing
    grid.check_field(A, (d,))
    D = lambda f, j: stencils.central_diff(f, j, dx, d)  # noqa: E731
    if d == 2:
        return D(A[1], 0) - D(A[0], 1)
    return np.stack([D(A[2], 1) - D(A[1], 2), D(A[0], 2) - D(A[2], 0), D(A[1], 0) - D(A[0], 1)])


def curl_adjoint(S: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Transpose of :func:`magnetic_field` as a linear map (same weights)."""
    d, dx = grid.dimension, grid.spacing
    if d == 2:
        # C a = d1 a2 - d2 a1,  d^T = -d
        return np.stack([stencils.central_diff(S, 1, dx, d), -stencils.central_diff(S, 0, dx, d)])
    # the 3D curl built from antisymmetric commuting differences is symmetric
    return magnetic_field(S, grid)


def field_energy(A: np.ndarray, grid: GridSpec, kappa: float, h: float) -> float:
    """``(kappa h^2)^-1 int |curl A|^2``; infinite for ``kappa = 0`` unless ``B = 0``."""
    B = magnetic_field(A, grid)
    b2 = grid.integrate(B**2 if grid.dimension == 2 else np.sum(B**2, axis=0))
    if kappa == 0:
        return 0.0 if b2 == 0 else float("inf")
    return b2 / (kappa * h**2)


def jacobian_energy(A: np.ndarray, grid: GridSpec) -> float:
    """``int |dA|^2`` with central differences; equals the curl norm in Coulomb gauge."""
    d, dx = grid.dimension, grid.spacing
    total = 0.0
    for j in range(d):
        for k in range(d):
            total += float(np.sum(stencils.central_diff(A[k], j, dx, d) ** 2))
    return total * grid.cell_volume


@dataclass
class PauliOperator:
    """Discrete Pauli operator.  ``A=None`` means the zero field."""

    grid: GridSpec
    h: float
    V: np.ndarray
    A: np.ndarray | None = None
    B: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        self.grid.check_field(self.V)
        self.V = np.asarray(self.V, dtype=float)
        if self.A is not None:
            self.grid.check_field(self.A, (self.grid.dimension,))
            self.A = np.asarray(self.A, dtype=float)
            if not np.any(self.A):
                self.A = None
        if self.A is not None:
            self.B = magnetic_field(self.A, self.grid)

    @property
    def has_field(self) -> bool:
        return self.A is not None

    @property
    def dim(self) -> int:
        return 2 * self.grid.size

    # -- matrix-free application ------------------------------------------

    def apply(self, u: np.ndarray) -> np.ndarray:
        return apply_pauli(self, u)

    def apply_scalar(self, f: np.ndarray) -> np.ndarray:
        """The spin-free block ``-h^2 Lap - V`` (only meaningful for ``A = 0``)."""
        g = self.grid
        return -self.h**2 * stencils.laplacian(f, g.spacing, g.dimension) - self.V * f

    # -- sparse assembly --------------------------------------------------

    def scalar_sparse(self) -> sp.csr_matrix:
        """Real symmetric ``-h^2 Lap - V`` on scalar fields."""
        g = self.grid
        lap = stencils.laplacian_sparse(g.n, g.spacing, g.dimension)
        return (-self.h**2 * lap - sp.diags(self.V.ravel())).tocsr()

    def sparse(self) -> sp.csr_matrix:
        """Full ``2N x 2N`` complex Hermitian matrix."""
        g = self.grid
        n, d, dx, h = g.n, g.dimension, g.spacing, self.h
        K = self.scalar_sparse().astype(complex)
        if self.A is None:
            return sp.block_diag([K, K], format="csr")
        D1 = stencils.central_diff_1d(n, dx)
        for j in range(d):
            Dj = stencils.on_axis(D1, j, n, d)
            a = sp.diags(self.A[j].ravel())
            K = K + 1j * h * (Dj @ a + a @ Dj) + sp.diags(self.A[j].ravel() ** 2)
        H = sp.kron(sp.identity(2), K, format="csr")
        B = self.B
        comps = [(2, B)] if d == 2 else [(k, B[k]) for k in range(3)]
        for k, Bk in comps:
            H = H - h * sp.kron(sp.csr_matrix(SIGMA[k]), sp.diags(Bk.ravel()), format="csr")
        return H.tocsr()

    def dense(self, budget: int = DEFAULT_DENSE_BUDGET) -> np.ndarray:
        return assemble_dense(self, budget)


def apply_pauli(op: PauliOperator, u: np.ndarray) -> np.ndarray:
    """Matrix-free action on a spinor array of shape ``(2,) + shape``."""
    g = op.grid
    d, dx, h = g.dimension, g.spacing, op.h
    g.check_field(u, (2,))
    out = -h * h * stencils.laplacian(u, dx, d) - op.V * u
    if op.A is None:
        return out
    for j in range(d):
        Aj = op.A[j]
        out = out + 1j * h * (stencils.central_diff(Aj * u, j, dx, d)
                              + Aj * stencils.central_diff(u, j, dx, d)) + Aj**2 * u
    B = op.B
    if d == 2:
        out = out - h * np.stack([B * u[0], -B * u[1]])
    else:
        up = B[2] * u[0] + (B[0] - 1j * B[1]) * u[1]
        dn = (B[0] + 1j * B[1]) * u[0] - B[2] * u[1]
        out = out - h * np.stack([up, dn])
    return out


def assemble_dense(op: PauliOperator, budget: int = DEFAULT_DENSE_BUDGET) -> np.ndarray:
    if op.dim > budget:
        raise BudgetError(f"dense matrix of size {op.dim} exceeds budget {budget}")
    return op.sparse().toarray()


def pauli_square_sparse(op: PauliOperator) -> sp.csr_matrix:
    """``(sum_j sigma_j (hD_j - A_j))^2 - V`` assembled as a literal square.

    Agrees with :meth:`PauliOperator.sparse` on smooth spinors to O(dx^2);
    the discrete product rule only holds approximately.
    """
    g = op.grid
    n, d, N = g.n, g.dimension, g.size
    D1 = stencils.central_diff_1d(n, g.spacing)
    P = sp.csr_matrix((2 * N, 2 * N), dtype=complex)
    for j in range(d):
        Dj = stencils.on_axis(D1, j, n, d)
        a = sp.diags(op.A[j].ravel()) if op.A is not None else sp.csr_matrix((N, N))
        P = P + sp.kron(sp.csr_matrix(SIGMA[j]), -1j * op.h * Dj - a, format="csr")
    return (P @ P - sp.kron(sp.identity(2), sp.diags(op.V.ravel()), format="csr")).tocsr()


def pauli_square_expanded(op: PauliOperator) -> sp.csr_matrix:
    """Expanded form with the wide Laplacian ``dc_j^2`` in the kinetic term."""
    g = op.grid
    n, d, N, h = g.n, g.dimension, g.size, op.h
    D1 = stencils.central_diff_1d(n, g.spacing)
    Ds = [stencils.on_axis(D1, j, n, d) for j in range(d)]
    K = sum(-(h**2) * (Dj @ Dj) for Dj in Ds) - sp.diags(op.V.ravel())
    K = K.astype(complex)
    if op.A is None:
        return sp.kron(sp.identity(2), K, format="csr")
    for j, Dj in enumerate(Ds):
        a = sp.diags(op.A[j].ravel())
        K = K + 1j * h * (Dj @ a + a @ Dj) + sp.diags(op.A[j].ravel() ** 2)
    H = sp.kron(sp.identity(2), K, format="csr")
    B = op.B
    comps = [(2, B)] if d == 2 else [(k, B[k]) for k in range(3)]
    for k, Bk in comps:
        H = H - h * sp.kron(sp.csr_matrix(SIGMA[k]), sp.diags(Bk.ravel()), format="csr")
    return H.tocsr()
