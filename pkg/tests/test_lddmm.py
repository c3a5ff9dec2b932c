import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from morphoacoustics.currents import CurrentsParams, current_of, data_term_E
from morphoacoustics.lddmm import (MatchDivergence, MatchParams, MomentumField, _Problem, apply_flow,
                                   cauchy_kernel, flow_snapshots, integrate_flow, kernel_matrix,
                                   load_field, match, objective_J, regularization_energy,
                                   reversed_field, save_field, shoot_controls, velocity_at)
from morphoacoustics.mesh import SurfaceMesh
from morphoacoustics.shapes import icosphere

from oracles import brute_reg, central_difference, max_rel_err


def test_kernel_values():
    s = 0.37
    x = np.array([0.1, -0.2, 0.3])
    assert cauchy_kernel(x, x, s) == 1.0
    assert cauchy_kernel(x, x + [s, 0, 0], s) == pytest.approx(0.5, rel=1e-15)
    assert cauchy_kernel(x, x + [0, 2 * s, 0], s) == pytest.approx(0.2, rel=1e-15)


def test_gram_matrix_positive_definite(rng):
    pts = rng.normal(size=(15, 3))
    K = kernel_matrix(pts, pts, 0.8)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


def test_velocity_examples():
    c = np.array([[0.5, 0.5, 0.5]])
    a = np.array([[1.0, -2.0, 0.5]])
    assert np.array_equal(velocity_at([0, 0, 0], c, np.zeros((1, 3)), 1.0), np.zeros(3))
    assert np.allclose(velocity_at(c[0], c, a, 1.0), a[0])
    assert np.allclose(velocity_at(c[0] + [0, 0, 0.3], c, a, 0.3), a[0] / 2)


def _random_field(rng, nc=5, T=4, scale=0.3, sigma=0.7):
    ctrl = rng.normal(size=(nc, 3))
    return MomentumField.from_momenta(ctrl, rng.normal(size=(T, nc, 3)) * scale, sigma, 0.1)


def test_zero_field_is_identity(rng):
    pts = rng.normal(size=(7, 3))
    f = MomentumField.zeros(rng.normal(size=(4, 3)), 5, 1.0, 0.01)
    for t in (0, 0.2, 0.6, 1.0):
        assert np.array_equal(integrate_flow(pts, f, t)[-1], pts)
    assert regularization_energy(f) == 0.0


def test_t0_returns_input(rng):
    f = _random_field(rng)
    pts = rng.normal(size=(3, 3))
    assert np.array_equal(integrate_flow(pts, f, 0.0)[-1], pts)


def test_controls_follow_their_trajectories(rng):
    f = _random_field(rng)
    end = integrate_flow(f.controls, f, 1.0)[-1]
    assert np.allclose(end, f.control_trajectories[-1], rtol=0, atol=1e-10)


def test_single_particle_against_adaptive_solver():
    # one control with constant momentum moves itself in a straight line at |a|
    a = np.array([0.3, -0.1, 0.2])
    f = MomentumField.from_momenta([[0.0, 0.0, 0.0]], np.tile(a, (20, 1, 1)), 0.5, 0.01)
    ref = solve_ivp(lambda t, y: a, (0, 1), [0.0, 0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14).y[:, -1]
    got = integrate_flow([[0.0, 0.0, 0.0]], f, 1.0)[-1, 0]
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-6

    # a passive point near the moving control: compare with the coupled ODE
    q0, y0 = np.zeros(3), np.array([0.2, 0.1, 0.0])

    def rhs(t, z):
        q, y = z[:3], z[3:]
        return np.concatenate([a, a / (1 + np.sum((y - q) ** 2) / 0.25)])

    ref = solve_ivp(rhs, (0, 1), np.concatenate([q0, y0]), method="DOP853", rtol=1e-12, atol=1e-14).y[3:, -1]
    got = integrate_flow([y0], f, 1.0)[-1, 0]
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref - y0) < 1e-6


def test_time_snapping(rng):
    f = _random_field(rng, T=5)
    pts = rng.normal(size=(2, 3))
    assert np.array_equal(integrate_flow(pts, f, 0.41)[-1], integrate_flow(pts, f, 0.4)[-1])
    with pytest.raises(ValueError):
        integrate_flow(pts, f, 1.5)


def test_regularization_examples(rng):
    a = np.array([[0.4, -1.0, 2.0]])
    f = MomentumField.from_momenta([[0.0, 0, 0]], np.tile(a, (6, 1, 1)), 0.5, 0.01)
    assert regularization_energy(f) == pytest.approx(a[0] @ a[0], rel=1e-14)
    f2 = _random_field(rng, nc=2, T=3)
    assert regularization_energy(f2) == pytest.approx(
        brute_reg(f2.control_trajectories.tolist(), f2.momenta.tolist(), f2.sigma_V), rel=1e-12)


def test_objective_examples(rng):
    src = icosphere(1)
    tgt = icosphere(1, 1.1)
    cp = CurrentsParams(0.3)
    zero = MomentumField.zeros(src.vertices, 4, 0.5, 0.01)
    J, reg, E = objective_J(src, current_of(tgt), zero, cp)
    assert reg == 0.0 and J == E == data_term_E(src, current_of(tgt), cp)
    assert objective_J(src, current_of(src), zero, cp)[0] == 0.0
    f = MomentumField.from_momenta(src.vertices, rng.normal(size=(4, src.n_vertices, 3)) * 0.05, 0.5, 0.01)
    assert objective_J(src, current_of(tgt), f, cp)[0] >= 0


def _tiny_problem(rng, stride=None):
    src = SurfaceMesh(rng.normal(size=(4, 3)), [[0, 1, 2], [0, 2, 3]])
    tgt = SurfaceMesh(rng.normal(size=(4, 3)) + 0.3, [[0, 1, 2], [1, 3, 2]])
    p = MatchParams(n_steps=3).resolved(src, tgt)
    return _Problem(src, current_of(tgt), p.currents(), p.sigma_V, p.gamma, 3, stride)


@pytest.mark.parametrize("stride", [None, [0, 2]])
def test_momentum_gradient_finite_differences(rng, stride):
    prob = _tiny_problem(rng, stride)
    alpha = rng.normal(size=prob.shape) * 0.2
    _, g = prob.value_and_grad(alpha)
    fd = central_difference(lambda a: prob.value(a)[0], alpha, 1e-6)
    assert max_rel_err(g, fd) < 1e-4


def test_match_self_is_immediate(unit_sphere):
    f, rep = match(unit_sphere, unit_sphere)
    assert rep.iterations <= 2 and rep.converged
    assert np.abs(f.momenta).max() < MatchParams().grad_tol
    assert rep.final["E"] == pytest.approx(0.0, abs=1e-12)


def test_match_trace_and_determinism(sphere_match, unit_sphere, big_sphere):
    f, rep, _ = sphere_match
    assert all(b <= a for a, b in zip(rep.trace, rep.trace[1:]))
    assert rep.final["J"] <= rep.initial["J"]
    f2, rep2 = match(unit_sphere, big_sphere)
    assert np.array_equal(f.momenta, f2.momenta)
    assert np.array_equal(f.control_trajectories, f2.control_trajectories)
    assert np.array_equal(f.controls, unit_sphere.vertices)


def test_match_with_control_subsampling(unit_sphere, big_sphere):
    f, rep = match(unit_sphere, big_sphere, MatchParams(control_stride=3))
    assert f.n_controls == len(range(0, unit_sphere.n_vertices, 3))
    assert rep.E_reduction > 0.9
    moved = apply_flow(unit_sphere, [f])
    assert data_term_E(moved, current_of(big_sphere), MatchParams().resolved(unit_sphere, big_sphere).currents()) \
        == rep.final["E"]


def test_match_divergence_reported(unit_sphere, big_sphere):
    # a line search with no halvings cannot recover from an absurd first step
    with pytest.raises(MatchDivergence, match="J="):
        match(unit_sphere, big_sphere, MatchParams(max_halvings=1, shrink=0.999, armijo=0.9))


def test_match_params_validation():
    with pytest.raises(ValueError):
        MatchParams(gamma=0)
    with pytest.raises(ValueError):
        MatchParams(n_steps=0)
    with pytest.raises(ValueError):
        MatchParams(sigma_V=-1.0)


def test_apply_flow_composition(rng):
    m = icosphere(1, 0.8)
    f1 = MomentumField.from_momenta(m.vertices, rng.normal(size=(3, m.n_vertices, 3)) * 0.05, 0.6, 0.01)
    f2 = _random_field(rng, nc=6, T=3, scale=0.1)
    assert apply_flow(m, []) == m
    assert apply_flow(m, [f1, f2]) == apply_flow(apply_flow(m, [f1]), [f2])
    assert np.array_equal(apply_flow(m, [f1]).faces, m.faces)


def test_flow_snapshots(rng):
    m = icosphere(1)
    f = MomentumField.from_momenta(m.vertices, rng.normal(size=(5, m.n_vertices, 3)) * 0.1, 0.7, 0.01)
    snaps = flow_snapshots(m, f, [0, 0.2, 0.4, 0.6, 0.8, 1.0])
    assert snaps[0][0] == m and np.array_equal(snaps[0][1], np.zeros(m.n_vertices))
    disp = np.array([d for _, d in snaps])
    assert np.all(np.diff(disp, axis=0) >= 0)
    assert snaps[-1][0] == apply_flow(m, [f])
    zero = MomentumField.zeros(m.vertices, 5, 0.7, 0.01)
    for snap, d in flow_snapshots(m, zero, [0.2, 1.0]):
        assert snap == m and not d.any()


def test_reversed_field_round_trip(rng):
    f = _random_field(rng, scale=0.1, T=20)
    pts = rng.normal(size=(5, 3))
    fwd = integrate_flow(pts, f)[-1]
    back = integrate_flow(fwd, reversed_field(f))[-1]
    assert np.abs(back - pts).max() < 1e-6


def test_field_serialisation(tmp_path, rng):
    f = _random_field(rng)
    f = MomentumField(f.control_trajectories, f.momenta, f.sigma_V, f.gamma, {"source": "A", "target": "B"})
    p = tmp_path / "f.json"
    save_field(f, p)
    g = load_field(p)
    assert np.array_equal(g.control_trajectories, f.control_trajectories)
    assert np.array_equal(g.momenta, f.momenta)
    assert (g.sigma_V, g.gamma, g.provenance) == (f.sigma_V, f.gamma, f.provenance)
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_field(p)


def test_field_invariants():
    with pytest.raises(ValueError):
        MomentumField(np.zeros((3, 2, 3)), np.zeros((3, 2, 3)), 1.0, 1.0)
    with pytest.raises(FloatingPointError):
        MomentumField(np.full((2, 1, 3), np.nan), np.zeros((1, 1, 3)), 1.0, 1.0)
    with pytest.raises(ValueError):
        MomentumField(np.zeros((2, 1, 3)), np.zeros((1, 1, 3)), 0.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_stored_trajectories_self_consistent(seed, T):
    rng = np.random.default_rng(seed)
    f = _random_field(rng, nc=4, T=T)
    again = shoot_controls(f.controls, f.momenta, f.sigma_V)
    scale = np.abs(f.control_trajectories).max()
    assert np.abs(again - f.control_trajectories).max() <= 1e-10 * scale


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_kernel_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=3), rng.normal(size=3)
    s = rng.uniform(0.1, 3)
    k = cauchy_kernel(x, y, s)
    assert k == cauchy_kernel(y, x, s) and 0 < k <= 1
