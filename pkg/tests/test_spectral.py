import numpy as np
import pytest
from paulilab import spectral
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import smooth_partition
from paulilab.field import random_smooth_field
from paulilab.pauli import PauliOperator
from paulilab.problem import Nucleus, build_grid, coulomb_potential, smooth_potential
from paulilab.spectral import (Spectrum, counting, current, density, dense_inertia_count,
                               inertia_count, ism_check, localized_trace_neg, negative_spectrum,
                               radial_spectrum, smooth_neg_part, smooth_neg_part_derivative,
                               subadditivity_check, trace_neg, tr_neg_dense)


def _paraboloid_op(n=12, L=1.5, h=0.5, A=None, c0=1.0):
    g = build_grid(2, n, L)
    return PauliOperator(g, h, smooth_potential(g, "paraboloid", {"c0": c0}), A)


def _synthetic(vals, mu_cut=3.0):
    g = build_grid(2, 3, 1.0)
    return Spectrum(g, np.asarray(vals, float), np.zeros((len(vals), 2) + g.shape), mu_cut, 1e-9)


def test_trace_and_counting_on_synthetic_spectrum():
    s = _synthetic([-3, -1, -0.5, 2])
    assert trace_neg(s) == -4.5
    assert counting(s, 0.0) == 3
    assert counting(s, -1.0) == 1
    assert trace_neg(_synthetic([0.5, 2.0])) == 0.0
    with pytest.raises(ValueError):
        counting(_synthetic([-1.0], mu_cut=0.0), 1.0)


def test_count_matches_dense_oracle():
    op = _paraboloid_op()
    s = negative_spectrum(op)
    ev = np.linalg.eigvalsh(op.dense())
    assert s.count == int(np.count_nonzero(ev < 0))
    assert np.allclose(s.eigenvalues, ev[ev < 0], atol=1e-10)
    assert s.trace_neg() == pytest.approx(tr_neg_dense(op.dense()), rel=1e-12)


def test_iterative_path_agrees_with_dense():
    g = build_grid(2, 12, 1.5)
    A = random_smooth_field(g, 4, 0.4)
    op = PauliOperator(g, 0.5, smooth_potential(g, "paraboloid"), A)
    d = negative_spectrum(op, method="dense")
    i = negative_spectrum(op, method="iterative")
    assert i.method == "iterative"
    assert i.count == d.count > 0
    assert np.allclose(i.eigenvalues, d.eigenvalues, atol=1e-8)
    assert "residual" not in i.flags


def test_nonpositive_potential_has_no_negative_spectrum():
    op = _paraboloid_op(c0=-0.1)
    s = negative_spectrum(op)
    assert s.count == 0 and s.trace_neg() == 0.0
    assert not np.any(density(s))


def test_spin_degeneracy_without_field():
    g = build_grid(3, 9, 4.0)
    V = coulomb_potential(g, [Nucleus(1.0, (0.0, 0.0, 0.0))], g.spacing / 2)
    s = negative_spectrum(PauliOperator(g, 1.0, V))
    assert s.count % 2 == 0 and s.count > 0
    assert np.array_equal(s.eigenvalues[0::2], s.eigenvalues[1::2])


def test_inertia_counts():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 30))
    M = X + X.T
    ev = np.linalg.eigvalsh(M)
    for mu in (-2.0, 0.3, 4.0):
        want = int(np.count_nonzero(ev < mu))
        assert inertia_count(sp.csr_matrix(M), mu) == want
        assert dense_inertia_count(M, mu) == want


def test_density_integrates_to_count():
    op = _paraboloid_op(n=14, h=0.3)
    s = negative_spectrum(op)
    assert op.grid.integrate(density(s)) == pytest.approx(s.count, rel=1e-8)


def test_hydrogen_ground_shell_density_is_symmetric():
    g = build_grid(3, 15, 6.0)
    V = coulomb_potential(g, [Nucleus(1.0, (0.0, 0.0, 0.0))], g.spacing / 2)
    s = negative_spectrum(PauliOperator(g, 1.0, V), mu_cut=-0.15)
    rho = density(s, -0.15)
    assert s.count == 2
    for perm in [(1, 0, 2), (2, 1, 0), (0, 2, 1)]:
        assert np.allclose(rho, rho.transpose(perm), atol=1e-8 * rho.max())
    assert np.allclose(rho, rho[::-1], atol=1e-8 * rho.max())


def test_current_vanishes_for_real_potential():
    s = negative_spectrum(_paraboloid_op(n=14, h=0.3))
    Phi = current(s, None, 0.3)
    assert np.max(np.abs(Phi)) < 1e-10


def test_spin_flip_pair_cancels():
    s = negative_spectrum(_paraboloid_op(n=10, h=0.4))
    from paulilab.spectral import current_from_vectors
    # an up/down pair of the same orbital: the Zeeman parts cancel
    Phi = current_from_vectors(s.vectors[:2], np.ones(2), None, 0.4, s.grid)
    assert np.max(np.abs(Phi)) < 1e-12


def test_current_matches_finite_difference():
    g = build_grid(2, 12, 1.5)
    h = 0.4
    V = smooth_potential(g, "paraboloid")
    A = random_smooth_field(g, 11, 0.3)
    dA = random_smooth_field(g, 12, 1.0)
    s = negative_spectrum(PauliOperator(g, h, V, A))
    gap = np.min(np.abs(s.eigenvalues))
    assert gap > 1e-3  # away from crossings at 0
    Phi = current(s, A, h)
    t = 1e-4
    plus = negative_spectrum(PauliOperator(g, h, V, A + t * dA)).trace_neg()
    minus = negative_spectrum(PauliOperator(g, h, V, A - t * dA)).trace_neg()
    fd = (plus - minus) / (2 * t)
    an = g.integrate(np.sum(Phi * dA, axis=0))
    assert fd == pytest.approx(an, rel=1e-3)


def test_smoothed_negative_part():
    lam = np.linspace(-2, 2, 401)
    L = 0.3
    f = smooth_neg_part(lam, L)
    assert np.array_equal(f[lam <= -L], lam[lam <= -L])
    assert not np.any(f[lam >= L])
    assert np.all(f <= 1e-15) and np.all(f >= np.minimum(lam, 0) - L)
    # derivative consistent with the function
    mid = 0.5 * (lam[1:] + lam[:-1])
    num = np.diff(f) / np.diff(lam)
    assert np.allclose(num, smooth_neg_part_derivative(mid, L), atol=1e-3)


def test_localized_trace_trivial_windows():
    op = _paraboloid_op(n=10)
    full = negative_spectrum(op).trace_neg()
    a, b = localized_trace_neg(np.ones(op.grid.shape), op)
    assert a == pytest.approx(full, rel=1e-10) and b == pytest.approx(full, rel=1e-10)
    assert localized_trace_neg(np.zeros(op.grid.shape), op) == (0.0, 0.0)
    with pytest.raises(ValueError):
        localized_trace_neg(np.full(op.grid.shape, 1.5), op)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_localization_inequality_random_window(seed):
    g = build_grid(2, 12, 1.5)
    A = random_smooth_field(g, seed, 0.5)
    op = PauliOperator(g, 0.5, smooth_potential(g, "paraboloid"), A)
    rng = np.random.default_rng(seed)
    c = rng.uniform(-0.8, 0.8, size=2)
    w = np.exp(-np.sum((g.coordinates() - c[:, None, None]) ** 2, axis=0) / rng.uniform(0.3, 1.5))
    sandwich, projected = localized_trace_neg(w, op)
    assert sandwich >= projected - 1e-9 * abs(projected)


def test_ism_partitions():
    g = build_grid(2, 10, 1.0)
    op = PauliOperator(g, 0.5, smooth_potential(g, "paraboloid"), random_smooth_field(g, 2, 0.5))
    one = ism_check(op, [np.ones(g.shape)])
    assert one.residual == 0.0
    for centers in ([(-0.5, 0), (0.5, 0)], [(-0.5, -0.5), (0.5, -0.3), (0, 0.6)]):
        r = ism_check(op, smooth_partition(g, centers, 0.8))
        assert r.relative < 1e-10
    with pytest.raises(ValueError):
        ism_check(op, [0.5 * np.ones(g.shape)])


def test_subadditivity():
    g = build_grid(2, 10, 1.0)
    op = PauliOperator(g, 0.4, smooth_potential(g, "paraboloid"), random_smooth_field(g, 3, 0.5))
    whole, parts = subadditivity_check(op, smooth_partition(g, [(-0.4, 0), (0.4, 0.1)], 0.7))
    assert whole >= parts - 1e-10 * abs(parts)


def test_radial_hydrogen_low_levels():
    s = radial_spectrum(lambda r: 1.0 / r, 1.0, 2, 4000, 150.0, mu_cut=-0.02)
    assert s.channels[0][0] == pytest.approx(-0.25, rel=1e-4)
    assert s.channels[1][0] == pytest.approx(-1 / 16, rel=1e-4)
    assert s.counting(-1 / 36 - 1e-3) == 10
    assert s.multiplicity(2) == 10


def test_radial_shell_sums():
    # exact levels: the n-th shell contributes 2 n^2 (-1 / (4 n^2)) = -1/2
    s = radial_spectrum(lambda r: 1.0 / r, 1.0, 2, 4000, 150.0, mu_cut=-0.02)
    assert s.trace_neg() == pytest.approx(-1.5, rel=1e-3)


def test_radial_detects_small_box():
    with pytest.raises(ValueError, match="too small"):
        radial_spectrum(lambda r: 1.0 / r, 1.0, 0, 2000, 8.0, mu_cut=-0.05)


@pytest.mark.parametrize("shape,comp", [((7, 9), 1), ((5, 4, 6), 2)])
def test_nd_ordering_is_permutation(shape, comp):
    p = spectral.grid_nd_ordering(shape, comp, leaf=2)
    assert np.array_equal(np.sort(p), np.arange(comp * int(np.prod(shape))))


def test_nd_ordering_inertia_and_solve(rng):
    g = build_grid(2, 40, 3.0)
    V = -2.0 * np.exp(-g.radius() ** 2)
    A = random_smooth_field(g, 3, 0.2)
    M = PauliOperator(g, 0.4, V, A).sparse()
    perm = spectral.grid_nd_ordering(g.shape, 2)
    assert spectral.inertia_count(M, -0.3, perm) == spectral.inertia_count(M, -0.3)
    S = (M + 5.0 * sp.identity(M.shape[0])).tocsc()
    b = rng.standard_normal(M.shape[0]) + 0j
    x = spectral._symmetric_factor(S, perm).solve(b)
    assert np.linalg.norm(S @ x - b) < 1e-10 * np.linalg.norm(b)


def test_sandwich_iterative_matches_dense():
    g = build_grid(2, 36, 2.0)
    op = PauliOperator(g, 0.3, smooth_potential(g, "paraboloid"), random_smooth_field(g, 5, 0.3))
    w = np.clip(1.5 - g.radius(), 0.0, 1.0)
    a, _ = spectral.sandwich_spectrum(op, w, method="iterative")
    b, _ = spectral.sandwich_spectrum(op, w, dense_budget=4000, method="dense")
    assert len(a) == len(b)
    np.testing.assert_allclose(a, b, atol=1e-8)
