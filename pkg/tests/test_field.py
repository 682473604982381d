import math

import numpy as np
import pytest

from paulilab import stencils
from paulilab.field import (EnergyModel, MinimizeOptions, PoissonPreconditionError,
                            coulomb_potential_of, divergence, energy_gradient, field_gradient,
                            field_norm, fixed_point_residual, gauge_project, minimize_field,
                            poisson_solve, random_smooth_field, total_energy)
from paulilab.harness import degenerate_paraboloid_spec
from paulilab.pauli import curl_adjoint, field_energy, magnetic_field
from paulilab.problem import PotentialSpec, ProblemSpec, build_grid


def _spec(kappa=0.5, n=12, h=0.4):
    return ProblemSpec(grid=build_grid(2, n, 1.5), h=h, kappa=kappa,
                       potential=PotentialSpec("paraboloid", {"c0": 1.0, "c1": 1.0}))


def test_point_charge_far_field():
    g = build_grid(3, 64, 4.0)
    r = g.radius()
    f = np.exp(-(r**2) / (2 * 0.25**2))
    f /= g.integrate(f)
    u = poisson_solve(f, g)
    # the sites at distance 2 along an axis
    i = np.argmin(np.abs(g.axis - 2.0))
    c = g.n // 2
    vals = [u[i, c, c], u[c, i, c], u[c, c, i]]
    dist = np.sqrt(g.axis[i] ** 2 + 2 * g.axis[c] ** 2)
    for v in vals:
        assert v == pytest.approx(1 / (4 * math.pi * dist), rel=1e-2)
    assert coulomb_potential_of(f, g)[i, c, c] == pytest.approx(1 / dist, rel=1e-2)


def test_poisson_zero_and_linearity(rng):
    g = build_grid(3, 16, 2.0)
    assert not np.any(poisson_solve(np.zeros(g.shape), g))
    env = np.exp(-np.sum(g.coordinates() ** 2, axis=0) * 3)
    f1, f2 = env * rng.normal(size=g.shape), env * rng.normal(size=g.shape)
    s = poisson_solve(f1 + f2, g, check=False)
    assert np.allclose(s, poisson_solve(f1, g, check=False) + poisson_solve(f2, g, check=False), atol=1e-13 * np.abs(s).max())


def test_poisson_precondition():
    g = build_grid(3, 12, 1.0)
    with pytest.raises(PoissonPreconditionError):
        poisson_solve(np.ones(g.shape), g)


@pytest.mark.parametrize("d", [2, 3])
def test_gauge_projection(d):
    g = build_grid(d, 12, 1.5)
    x = g.coordinates()
    phi = np.exp(-np.sum(x**2, axis=0)) * np.cos(x[0])
    G = stencils.gradient(phi, g.spacing, d)
    assert np.linalg.norm(gauge_project(G, g)) < 1e-6 * np.linalg.norm(G)
    A = random_smooth_field(g, 1, 1.0)
    P = gauge_project(A, g)
    assert np.linalg.norm(gauge_project(P, g) - P) < 1e-8 * np.linalg.norm(P)
    assert np.max(np.abs(divergence(P, g))) < 1e-8 * np.max(np.abs(A)) / g.spacing
    assert np.allclose(magnetic_field(P, g), magnetic_field(A, g), atol=1e-10)


def test_divergence_free_fixed_point():
    g = build_grid(3, 10, 1.5)
    A = curl_adjoint(np.random.default_rng(5).normal(size=(3,) + g.shape), g)
    assert np.linalg.norm(gauge_project(A, g) - A) < 1e-8 * np.linalg.norm(A)


def test_total_energy_components():
    spec = _spec()
    e0 = total_energy(spec)
    assert e0.field_energy == 0.0
    assert e0.total == e0.trace_neg
    A = random_smooth_field(spec.grid, 2, 0.3)
    e1 = total_energy(spec, A)
    assert e1.total == e1.trace_neg + e1.field_energy
    e2 = total_energy(spec.with_(kappa=1.0), A)
    assert e2.field_energy == pytest.approx(e1.field_energy / 2)
    assert e2.total <= e1.total
    assert math.isfinite(e1.total)
    with pytest.raises(ValueError):
        total_energy(spec.with_(kappa=0.0), A)


def test_gradient_zero_at_zero_field():
    G = energy_gradient(_spec())
    assert np.max(np.abs(G)) < 1e-10


def test_field_gradient_is_exact_derivative(rng):
    g = build_grid(2, 10, 1.0)
    A = rng.normal(size=(2,) + g.shape)
    dA = rng.normal(size=(2,) + g.shape)
    t = 1e-3
    f = lambda X: field_energy(X, g, 0.3, 0.7)  # noqa: E731
    fd = (f(A + t * dA) - f(A - t * dA)) / (2 * t)
    an = g.integrate(np.sum(field_gradient(A, g, 0.3, 0.7) * dA, axis=0))
    assert fd == pytest.approx(an, rel=1e-9)


def test_energy_gradient_finite_difference():
    spec = _spec(kappa=0.5)
    g = spec.grid
    A = random_smooth_field(g, 3, 0.3)
    dA = gauge_project(random_smooth_field(g, 4, 1.0), g)
    model = EnergyModel.from_spec(spec)
    G = model.gradient(model.evaluate(A))[0]
    t = 1e-4
    fd = (model.evaluate(A + t * dA).energy - model.evaluate(A - t * dA).energy) / (2 * t)
    an = g.integrate(np.sum(G * dA, axis=0))
    assert fd == pytest.approx(an, rel=1e-3)


def test_minimizer_stationary_at_zero():
    A, rep = minimize_field(_spec())
    assert field_norm(A, _spec().grid) < 1e-10
    assert rep.iterations == 0 and rep.converged


def test_minimizer_decreases_energy_and_respects_gauge():
    spec = _spec(kappa=0.5)
    A0 = random_smooth_field(spec.grid, 9, 0.3)
    A, rep = minimize_field(spec, A0, MinimizeOptions(max_iter=15))
    assert all(b <= a + 1e-12 for a, b in zip(rep.history, rep.history[1:]))
    assert rep.history[-1] < rep.history[0]
    assert np.max(np.abs(divergence(A, spec.grid))) < 1e-8
    assert rep.energy_at_zero is not None


def test_minimizer_options_and_kappa():
    with pytest.raises(ValueError):
        minimize_field(_spec(kappa=0.0))
    with pytest.raises(ValueError):
        minimize_field(_spec(), opts=MinimizeOptions(scheme="newton"))


def test_fixed_point_residual_at_exit():
    spec = degenerate_paraboloid_spec(0.4, n=16)
    model = EnergyModel.from_spec(spec)
    A0 = random_smooth_field(spec.grid, 7, 1e-2)
    A, rep = minimize_field(spec, A0, MinimizeOptions(tol=1e-6), model=model)
    assert rep.converged and field_norm(A, spec.grid) > 1e-3
    assert fixed_point_residual(model, A) < 1e-4


def test_random_smooth_field_seeded():
    g = build_grid(2, 10, 1.0)
    assert np.array_equal(random_smooth_field(g, 4), random_smooth_field(g, 4))
    assert not np.array_equal(random_smooth_field(g, 4), random_smooth_field(g, 5))
