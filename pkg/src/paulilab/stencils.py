"""Finite-difference stencils with homogeneous Dirichlet padding.

All functions act on the trailing ``d`` axes of an array, so spinor and
vector fields are handled by leading axes.  Values on the layer outside
the box are zero.  With this padding the central difference is exactly
antisymmetric and the 3-point Laplacian exactly symmetric.
"""
from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.sparse as sp


def central_diff(u: np.ndarray, axis: int, dx: float, d: int) -> np.ndarray:
    """``(u(x + e_j dx) - u(x - e_j dx)) / (2 dx)`` along spatial axis ``axis``."""
    ax = u.ndim - d + axis
    out = np.zeros_like(u)
    hi = [slice(None)] * u.ndim
    lo = [slice(None)] * u.ndim
    # out[i] = u[i+1] - u[i-1]
    hi[ax] = slice(0, -1)
    lo[ax] = slice(1, None)
    out[tuple(hi)] += u[tuple(lo)]
    out[tuple(lo)] -= u[tuple(hi)]
    return out / (2.0 * dx)


def forward_shift_diff(u: np.ndarray, axis: int, dx: float, d: int) -> np.ndarray:
    """``(u(x + e_j dx) - u(x)) / dx`` with zero padding."""
    ax = u.ndim - d + axis
    out = -u.astype(np.result_type(u, float), copy=True)
    hi = [slice(None)] * u.ndim
    lo = [slice(None)] * u.ndim
    hi[ax] = slice(0, -1)
    lo[ax] = slice(1, None)
    out[tuple(hi)] += u[tuple(lo)]
    return out / dx


def laplacian(u: np.ndarray, dx: float, d: int) -> np.ndarray:
    """3-point Laplacian summed over the ``d`` trailing axes."""
    out = (-2.0 * d) * u
    for axis in range(d):
        ax = u.ndim - d + axis
        hi = [slice(None)] * u.ndim
        lo = [slice(None)] * u.ndim
        hi[ax] = slice(0, -1)
        lo[ax] = slice(1, None)
        out[tuple(hi)] += u[tuple(lo)]
        out[tuple(lo)] += u[tuple(hi)]
    return out / dx**2


def gradient(s: np.ndarray, dx: float, d: int) -> np.ndarray:
    """Central-difference gradient, shape ``(d,) + s.shape``."""
    return np.stack([central_diff(s, j, dx, d) for j in range(d)])


def divergence(a: np.ndarray, dx: float, d: int) -> np.ndarray:
    """Central-difference divergence of a vector field ``(d,) + shape``."""
    return sum(central_diff(a[j], j, dx, d) for j in range(d))


# -- sparse 1D building blocks ----------------------------------------------

def central_diff_1d(n: int, dx: float) -> sp.csr_matrix:
    off = np.full(n - 1, 1.0 / (2 * dx))
    return sp.diags([-off, off], [-1, 1], format="csr")


def laplacian_1d(n: int, dx: float) -> sp.csr_matrix:
    main = np.full(n, -2.0 / dx**2)
    off = np.full(n - 1, 1.0 / dx**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def on_axis(m1d: sp.spmatrix, axis: int, n: int, d: int) -> sp.csr_matrix:
    """Kronecker lift of a 1D operator to spatial axis ``axis`` (C order)."""
    mats = [sp.identity(n, format="csr")] * d
    mats[axis] = m1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out.tocsr()


def laplacian_sparse(n: int, dx: float, d: int) -> sp.csr_matrix:
    L1 = laplacian_1d(n, dx)
    return sum(on_axis(L1, j, n, d) for j in range(d)).tocsr()


# -- spectral Dirichlet solves ------------------------------------------------

def dirichlet_eigenvalues_1d(n: int, dx: float) -> np.ndarray:
    """Eigenvalues of the negative 3-point Dirichlet Laplacian on ``n`` sites."""
    m = np.arange(1, n + 1)
    return (4.0 / dx**2) * np.sin(m * np.pi / (2 * (n + 1))) ** 2


def _dst_all(u: np.ndarray, d: int) -> np.ndarray:
    axes = tuple(range(u.ndim - d, u.ndim))
    return scipy.fft.dstn(u, type=1, axes=axes, norm="ortho")


def apply_dirichlet_multiplier(u: np.ndarray, symbol: np.ndarray, d: int) -> np.ndarray:
    """Apply ``S^T diag(symbol) S`` with ``S`` the orthonormal DST-I basis."""
    return _dst_all(_dst_all(u, d) * symbol, d)


def dirichlet_symbol(n: int, dx: float, d: int) -> np.ndarray:
    """Eigenvalues of ``-laplacian`` on the full ``(n,)*d`` grid."""
    lam = dirichlet_eigenvalues_1d(n, dx)
    total = np.zeros((n,) * d)
    for j in range(d):
        sh = [1] * d
        sh[j] = n
        total = total + lam.reshape(sh)
    return total


def solve_dirichlet_laplace(f: np.ndarray, dx: float, d: int, shift: float = 0.0) -> np.ndarray:
    """Solve ``(-laplacian + shift) u = f`` exactly with DST-I."""
    n = f.shape[-1]
    return apply_dirichlet_multiplier(f, 1.0 / (dirichlet_symbol(n, dx, d) + shift), d)


def _sign_flip(u: np.ndarray, d: int) -> np.ndarray:
    # diag((-1)^floor(k/2)) on every spatial axis
    n = u.shape[-1]
    s = np.where((np.arange(n) // 2) % 2 == 0, 1.0, -1.0)
    out = u
    for j in range(d):
        sh = [1] * u.ndim
        sh[u.ndim - d + j] = n
        out = out * s.reshape(sh)
    return out


def wide_symbol(n: int, dx: float, d: int) -> np.ndarray:
    """Eigenvalues of ``G^T G`` for the central gradient ``G`` (sorted as DST-I modes)."""
    theta = np.arange(1, n + 1) * np.pi / (n + 1)
    lam = np.cos(theta) ** 2 / dx**2
    total = np.zeros((n,) * d)
    for j in range(d):
        sh = [1] * d
        sh[j] = n
        total = total + lam.reshape(sh)
    return total


def solve_wide_laplace(f: np.ndarray, dx: float, d: int, rtol: float = 1e-12) -> np.ndarray:
    """Minimum-norm solution of ``G^T G u = f`` for the central gradient ``G``.

    ``-Dc^2`` is similar to the square of a path adjacency matrix through a
    diagonal sign change, so it is diagonalised exactly by DST-I.  For odd
    ``n`` one mode is annihilated by ``G``; it is dropped (pseudo-inverse).
    """
    n = f.shape[-1]
    lam = wide_symbol(n, dx, d)
    inv = np.zeros_like(lam)
    keep = lam > rtol * lam.max()
    inv[keep] = 1.0 / lam[keep]
    return _sign_flip(apply_dirichlet_multiplier(_sign_flip(f, d), inv, d), d)
