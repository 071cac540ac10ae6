import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinhomog.mesh import NodalField, build_graph_mesh
from thinhomog.plap import (
    EnergySpec,
    SolveConfig,
    SolverError,
    a_p,
    assemble_energy,
    assemble_gradient,
    assemble_hessian,
    conjugate_exponent,
    conjugate_gradient,
    load_norm,
    minimize,
    monotonicity_gap,
    norms,
)


def unit_square(n=8):
    return build_graph_mesh(1.0, (0.0, 1.0), n, n)


# ------------------------------------------------------------------ a_p
def test_a_p_examples():
    np.testing.assert_allclose(a_p(np.array([1.0, 0.0]), 3), [1.0, 0.0])
    assert a_p(0.0, 1.5) == 0.0
    np.testing.assert_allclose(a_p(np.array([3.0, 4.0]), 4), [75.0, 100.0])
    np.testing.assert_array_equal(a_p(np.zeros((4, 2)), 1.2), np.zeros((4, 2)))


def test_a_p_inverse_pair(rng):
    v = rng.standard_normal((50, 2))
    for p in (1.3, 2.0, 3.5):
        np.testing.assert_allclose(a_p(a_p(v, p), conjugate_exponent(p)), v, rtol=1e-12, atol=1e-14)


def test_monotonicity_gap_examples():
    x = np.array([1.0, 0.0])
    assert monotonicity_gap(x, x, 3) == 0.0
    assert monotonicity_gap(x, -x, 2) == pytest.approx(4.0)


_vec = st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)).map(np.array)


@settings(max_examples=200, deadline=None)
@given(_vec, _vec, st.sampled_from([1.2, 1.5, 2.0, 3.0, 4.0]))
def test_monotone_property(x, y, p):
    gap = monotonicity_gap(x, y, p)
    scale = np.linalg.norm(a_p(x, p) - a_p(y, p)) * np.linalg.norm(x - y)
    assert gap >= -1e-12 * max(scale, 1e-300)


@settings(max_examples=200, deadline=None)
@given(_vec, _vec, st.sampled_from([1.2, 1.5, 2.0, 3.0, 4.0]))
def test_convexity_property(x, y, p):
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    lin = nx ** p + p * a_p(x, p) @ (y - x)
    assert ny ** p - lin >= -1e-12 * (ny ** p + nx ** p + abs(p * a_p(x, p) @ (y - x)) + 1e-300)


@settings(max_examples=200, deadline=None)
@given(_vec, _vec, st.sampled_from([2.0, 3.0, 4.0]))
def test_hoelder_inverse_property(u, v, p):
    # 1 < p' <= 2: a_{p'} is (p'-1)-Hoelder with constant 2^{2-p'}
    q = conjugate_exponent(p)
    d = np.linalg.norm(u - v)
    lhs = np.linalg.norm(a_p(u, q) - a_p(v, q))
    assert lhs <= 2 ** (2 - q) * d ** (q - 1) * (1 + 1e-12) + 1e-300


# ------------------------------------------------------------- energies
def test_energy_examples():
    m = unit_square(4)
    assert assemble_energy(EnergySpec(m, 2.0, mass_term=True), np.zeros(m.ndof)) == 0.0
    spec = EnergySpec(m, 2.0, constraint="zero-mean")
    u = NodalField.from_function(m, lambda x, y: y)
    assert assemble_energy(spec, u) == pytest.approx(0.5, rel=1e-14)
    spec3 = EnergySpec(m, 3.0, constraint="zero-mean")
    u = NodalField.from_function(m, lambda x, y: x)
    assert assemble_energy(spec3, u) == pytest.approx(1 / 3, rel=1e-14)


def test_mass_quadrature_exact_for_quadratics():
    m = build_graph_mesh(lambda x: 1 + 0.3 * x, (0.0, 1.0), 5, 3)
    u = NodalField.from_function(m, lambda x, y: 1 + x - 2 * y)
    spec = EnergySpec(m, 2.0, gradient_term=False, mass_term=True)
    # u^2 is quadratic on each triangle; integrate it exactly with the
    # degree-2 Dunavant rule at interior points (1/6, 1/6, 2/3)
    lam = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    P = m.nodes[m.triangles]
    pts = np.einsum("qk,tkd->tqd", lam, P)
    vals = (1 + pts[..., 0] - 2 * pts[..., 1]) ** 2
    exact = np.sum(m.areas * vals.mean(axis=1))
    assert assemble_energy(spec, u) == pytest.approx(0.5 * exact, rel=1e-13)


def test_spec_invariants():
    m = unit_square(2)
    with pytest.raises(ValueError):
        EnergySpec(m, 1.0, mass_term=True)
    with pytest.raises(ValueError):
        EnergySpec(m, 2.0)                              # no mass, constants not removed
    with pytest.raises(ValueError):
        EnergySpec(m, 2.0, constraint="periodic+zero-mean")


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_gradient_matches_finite_differences(p, rng):
    m = build_graph_mesh(lambda x: 1 + 0.2 * np.sin(2 * np.pi * x), (0.0, 1.0), 6, 4)
    spec = EnergySpec(m, p, mass_term=True, load=lambda x, y: np.cos(x + y))
    u = rng.standard_normal(m.ndof)
    g = assemble_gradient(spec, u)
    h = 1e-6
    fd = np.empty(m.ndof)
    for i in range(m.ndof):
        e = np.zeros(m.ndof)
        e[i] = h
        fd[i] = (assemble_energy(spec, u + e) - assemble_energy(spec, u - e)) / (2 * h)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_hessian_vector_product(rng):
    m = build_graph_mesh(1.0, (0.0, 1.0), 6, 6)
    spec = EnergySpec(m, 3.0, mass_term=True)
    u = rng.standard_normal(m.ndof)
    v = rng.standard_normal(m.ndof)
    H = assemble_hessian(spec, u, 1e-2)
    h = 1e-6
    fd = (assemble_gradient(spec, u + h * v) - assemble_gradient(spec, u - h * v)) / (2 * h)
    assert np.linalg.norm(H @ v - fd) <= 1e-5 * np.linalg.norm(fd)
    assert abs(H - H.T).max() <= 1e-14 * abs(H).max()


def test_p2_hessian_is_constant(rng):
    m = unit_square(4)
    spec = EnergySpec(m, 2.0, mass_term=True)
    H1 = assemble_hessian(spec, rng.standard_normal(m.ndof), 0.3).toarray()
    H2 = assemble_hessian(spec, rng.standard_normal(m.ndof), 1e-6).toarray()
    np.testing.assert_allclose(H1, H2, atol=1e-13)


# ------------------------------------------------------------ minimiser
def test_p2_constant_solution_one_step():
    m = build_graph_mesh(lambda x: 1 + 0.4 * np.sin(2 * np.pi * x), (0.0, 1.0), 10, 5)
    spec = EnergySpec(m, 2.0, mass_term=True, load=lambda x, y: 1.0 + 0 * x)
    u, rep = minimize(spec, initial=np.zeros(m.ndof))
    assert rep.converged and rep.total_iterations == 1 and rep.steps == [1.0]
    np.testing.assert_allclose(u.values, 1.0, atol=1e-10)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
def test_constant_solution_any_p(p):
    m = unit_square(6)
    spec = EnergySpec(m, p, mass_term=True, load=lambda x, y: 1.0 + 0 * x)
    u, rep = minimize(spec)
    np.testing.assert_allclose(u.values, 1.0, atol=1e-12)


def test_p4_residual_and_monotone_energy():
    m = unit_square(12)
    spec = EnergySpec(m, 4.0, mass_term=True, load=lambda x, y: 1 + np.sin(3 * x) * y)
    u, rep = minimize(spec, initial=np.zeros(m.ndof))
    assert rep.converged and rep.final_grad_norm <= 1e-10
    assert np.all(np.diff(rep.energies) <= 0)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_zero_mean_minimiser(p):
    m = unit_square(8)
    f = lambda x, y: np.cos(np.pi * x)              # zero mean load
    spec = EnergySpec(m, p, load=f, constraint="zero-mean")
    u, rep = minimize(spec)
    assert abs(spec.mean(u)) <= 1e-12
    assert rep.converged
    assert np.all(np.diff(rep.energies) <= 1e-15 * max(1.0, abs(rep.energies[0])))


def test_cg_deflation(rng):
    m = unit_square(6)
    spec = EnergySpec(m, 2.0, constraint="zero-mean")
    K = assemble_hessian(spec, np.zeros(m.ndof))
    x_true = rng.standard_normal(m.ndof)
    x_true -= x_true.mean()
    x, its, ok = conjugate_gradient(K, K @ x_true, tol=1e-13, deflate=True)
    assert ok
    np.testing.assert_allclose(x, x_true, atol=1e-9)


def test_solver_error_carries_report():
    m = unit_square(8)
    spec = EnergySpec(m, 4.0, mass_term=True, load=lambda x, y: 1 + x)
    with pytest.raises(SolverError) as info:
        minimize(spec, SolveConfig(max_iter=1), initial=np.zeros(m.ndof))
    assert info.value.report is not None and not info.value.report.converged


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(gammas=(1e-2, 1e-1))
    with pytest.raises(ValueError):
        SolveConfig(grad_tol=0)
    with pytest.raises(ValueError):
        SolveConfig(linear_solver="lu")


# ----------------------------------------------------------------- norms
def test_triple_norm_of_one():
    eps = 0.125
    m = build_graph_mesh(eps, (0.0, 1.0), 16, 4)
    one = NodalField(m, np.ones(m.ndof))
    n = norms(one, 3.0, eps)
    assert n["Lp_triple"] == pytest.approx(1.0, rel=1e-14)
    assert n["W1p_triple"] == pytest.approx(1.0, rel=1e-14)


def test_norms_scaling_and_eps_one(rng):
    m = unit_square(5)
    u = NodalField(m, rng.standard_normal(m.ndof))
    n1 = norms(u, 2.5, 1.0)
    assert n1["W1p_triple"] == pytest.approx(n1["W1p"], rel=1e-15)
    n2 = norms(NodalField(m, 2 * u.values), 2.5)
    assert n2["Lp"] == pytest.approx(2 * n1["Lp"], rel=1e-14)
    assert n2["W1p"] == pytest.approx(2 * n1["W1p"], rel=1e-14)


def test_load_norm():
    m = build_graph_mesh(0.5, (0.0, 1.0), 8, 2)
    spec = EnergySpec(m, 2.0, mass_term=True, load=lambda x, y: 2.0 + 0 * x)
    assert load_norm(spec, 2.0) == pytest.approx(2.0 * 0.5 ** 0.5, rel=1e-14)
    assert load_norm(spec, 2.0, eps=0.5) == pytest.approx(2.0, rel=1e-14)


def test_masked_hessian_limits(rng):
    m = unit_square(5)
    spec = EnergySpec(m, 1.5, mass_term=True)
    u = rng.standard_normal(m.ndof)
    nt = m.n_triangles
    on = (np.ones(nt, bool), np.ones((nt, 3), bool))
    off = (np.zeros(nt, bool), np.zeros((nt, 3), bool))
    np.testing.assert_allclose(spec.hessian(u, 1e-3, majorize=on).toarray(),
                               spec.hessian(u, 1e-3, majorize=True).toarray(), rtol=1e-14, atol=0)
    np.testing.assert_allclose(spec.hessian(u, 1e-3, majorize=off).toarray(),
                               spec.hessian(u, 1e-3).toarray(), rtol=1e-14, atol=0)
    gm, qm = spec.crossing_masks(u, -2 * u)
    assert gm.all() and qm.all()
    gm, qm = spec.crossing_masks(u, 0.5 * u)
    assert not gm.any() and not qm.any()


def test_small_p_sign_changing_load():
    m = build_graph_mesh(0.25, (0.0, 1.0), 32, 6)
    spec = EnergySpec(m, 1.4, mass_term=True, load=lambda x, y: np.cos(np.pi * x))
    u, rep = minimize(spec, SolveConfig(linear_solver="direct"))
    assert rep.converged
    assert rep.extra["abs_grad_norm"] <= 1e-10
    # the load changes sign at x = 1/2 and so does the solution
    x = m.nodes[:, 0]
    v = u.node_values
    assert np.all(v[x < 0.4] > 0) and np.all(v[x > 0.6] < 0)
