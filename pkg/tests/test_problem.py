import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paulilab.problem import (ConfigError, Nucleus, ProblemSpec, PotentialSpec, build_grid,
                              coulomb_potential, internuclear_repulsion, load_config,
                              problem_from_config, rescale_problem, smooth_potential,
                              unscale_problem)


def test_grid_arithmetic_small():
    g = build_grid(2, 3, 1.0)
    assert g.spacing == 1.0
    assert np.array_equal(g.axis, [-1.0, 0.0, 1.0])
    assert g.size == 9


def test_grid_arithmetic_3d():
    g = build_grid(3, 33, 6.0)
    assert g.size == 35937
    assert g.spacing == 0.375


@pytest.mark.parametrize("args", [(1, 8, 1.0), (4, 8, 1.0), (2, 2, 1.0), (2, 8, 0.0), (2, 8.5, 1.0)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(ConfigError):
        build_grid(*args)


def test_grid_memory_budget():
    with pytest.raises(ConfigError):
        build_grid(3, 200, 1.0)


def test_axis_antisymmetric():
    g = build_grid(3, 17, 2.3)
    assert np.array_equal(g.axis, -g.axis[::-1])


def test_coulomb_potential_values():
    g = build_grid(3, 5, 2.0)
    V = coulomb_potential(g, [Nucleus(1.0, (0.0, 0.0, 0.0))], 0.5)
    assert V[4, 2, 2] == pytest.approx(0.5)
    V = coulomb_potential(g, [Nucleus(1.0, (0.0, 0.0, 0.0))], 0.1 * 10)
    assert V[2, 2, 2] == pytest.approx(1.0)


def test_coulomb_cap_and_superposition():
    g = build_grid(3, 5, 0.1)  # spacing 0.05 so eps=0.1 is admissible
    V = coulomb_potential(g, [Nucleus(1.0, (0.0, 0.0, 0.0))], 0.1)
    assert V[2, 2, 2] == pytest.approx(10.0)
    g = build_grid(3, 5, 2.0)
    nuc = [Nucleus(1.0, (-1.0, 0.0, 0.0)), Nucleus(1.0, (1.0, 0.0, 0.0))]
    V = coulomb_potential(g, nuc, 0.5)
    assert V[2, 2, 2] == pytest.approx(2.0)


def test_coulomb_rejects_small_cutoff_and_outside_nucleus():
    g = build_grid(3, 9, 2.0)
    with pytest.raises(ValueError):
        coulomb_potential(g, [Nucleus(1.0, (0.0, 0.0, 0.0))], 0.1)
    with pytest.raises(ValueError):
        coulomb_potential(g, [Nucleus(1.0, (5.0, 0.0, 0.0))], 0.5)


def test_smooth_potentials():
    g = build_grid(2, 5, 1.0)
    P = smooth_potential(g, "paraboloid", {"c0": 1.0, "c1": 1.0})
    assert P[2, 2] == 1.0
    assert P[4, 2] == pytest.approx(0.0)
    G = smooth_potential(g, "gaussian", {"amplitude": 2.0, "width": 1.0})
    assert G[2, 2] == 2.0
    with pytest.raises(ValueError):
        smooth_potential(g, "nope")


@pytest.mark.parametrize("Z,alpha,h,kappa,factor", [
    (1000.0, 1e-4, 0.1, 0.1, 1e4),
    (1.0, 0.0, 1.0, 0.0, 1.0),
    (8.0, 0.01, 0.5, 0.08, 16.0),
])
def test_rescale_examples(Z, alpha, h, kappa, factor):
    s = rescale_problem([Z], [[0.0, 0.0, 0.0]], alpha)
    assert s.h == pytest.approx(h, rel=1e-12)
    assert s.kappa == pytest.approx(kappa, rel=1e-12)
    assert s.energy_factor == pytest.approx(factor, rel=1e-12)
    assert s.physical_energy(2.0) == pytest.approx(2 * factor)


def test_rescale_warns_for_large_coupling():
    with pytest.warns(UserWarning):
        s = rescale_problem([100.0], [[0.0, 0.0, 0.0]], 0.1)
    assert not s.small_coupling


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.5, 50.0), min_size=1, max_size=3),
       st.floats(0.0, 1e-3), st.floats(-2.0, 2.0))
def test_rescale_roundtrip(charges, alpha, shift):
    pos = [[shift * (i + 1), 0.5 * i, -shift] for i in range(len(charges))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = rescale_problem(charges, pos, alpha)
    assert sum(s.charges) == pytest.approx(1.0)
    c, p, a = unscale_problem(s)
    assert np.allclose(c, charges, rtol=1e-10)
    assert np.allclose(p, pos, rtol=1e-10, atol=1e-12)
    assert a == pytest.approx(alpha, rel=1e-10, abs=1e-15)


def test_internuclear_repulsion_examples():
    assert internuclear_repulsion([1.0], [[0, 0, 0]]) == 0.0
    assert internuclear_repulsion([1.0, 1.0], [[0, 0, 0], [2, 0, 0]]) == pytest.approx(0.5)
    tri = [[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]]
    assert internuclear_repulsion([1.0] * 3, tri) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        internuclear_repulsion([1.0, 1.0], [[0, 0, 0], [0, 0, 0]])


def test_problem_spec_validation():
    g = build_grid(3, 9, 2.0)
    with pytest.raises(ConfigError):
        ProblemSpec(grid=g, h=0.0, nuclei=(Nucleus(1.0, (0, 0, 0)),))
    with pytest.raises(ConfigError):
        ProblemSpec(grid=g, h=1.0, kappa=-1.0, nuclei=(Nucleus(1.0, (0, 0, 0)),))
    with pytest.raises(ConfigError):
        ProblemSpec(grid=g, h=1.0)
    with pytest.raises(ConfigError):
        ProblemSpec(grid=g, h=1.0, nuclei=(Nucleus(1.0, (0, 0)),))
    with pytest.raises(ConfigError):
        ProblemSpec(grid=g, h=1.0, nuclei=(Nucleus(1.0, (0, 0, 0)),), epsilon_cut=0.1)


def test_problem_spec_frame():
    g = build_grid(3, 9, 2.0)
    s = ProblemSpec(grid=g, h=0.5, nuclei=(Nucleus(1.0, (0, 0, 0)),))
    assert s.coupling == 0.125
    assert s.nuclear_count == 8.0
    assert s.n_electrons == 8.0
    assert s.eps == g.spacing / 2


def test_config_roundtrip(tmp_path):
    g = build_grid(2, 8, 1.0)
    s = ProblemSpec(grid=g, h=0.3, kappa=0.2, potential=PotentialSpec("paraboloid", {"c0": 0.5}))
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(s.to_config()))
    back = problem_from_config(load_config(p))
    assert back == s
    assert np.array_equal(back.potential_field(), s.potential_field())


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        problem_from_config({"dimension": 3})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
