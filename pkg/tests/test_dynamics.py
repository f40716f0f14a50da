import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from romkit.dynamics import (
    CountingSystem,
    Euler1d,
    Euler1dConfig,
    FunctionSystem,
    LtiSystem,
    euler_flux,
    jac_vec_fd,
    make_diffusion_lti,
    roe_flux,
)
from romkit.errors import DenseJacobianUnavailable, DimensionMismatch, InvalidArgument, NonPhysicalState

RNG = np.random.default_rng(7)


def _smooth_state(sys):
    # moving flow keeps every wave speed away from zero, where |lambda| has a kink
    u0 = sys.initial_state() * (1 + 0.1 * RNG.random(sys.dim))
    n = sys.n
    u0[n : 2 * n] = 0.3 * u0[:n]
    u0[2 * n :] += 0.5 * 0.09 * u0[:n]
    return u0


def _uniform_state(n, rho=1.0, u=0.0, p=1.0, gamma=1.4):
    E = p / (gamma - 1) + 0.5 * rho * u * u
    return np.concatenate([np.full(n, rho), np.full(n, rho * u), np.full(n, E)])


def test_uniform_state_at_rest_has_zero_rhs():
    sys = Euler1d(Euler1dConfig(n_cells=40))
    np.testing.assert_array_equal(sys.rhs(_uniform_state(40)), 0.0)


def test_sod_rhs_is_local_to_the_discontinuity():
    sys = Euler1d(Euler1dConfig(n_cells=100))
    R = sys.rhs(sys.initial_state()).reshape(3, 100)
    nonzero = np.flatnonzero(np.any(R != 0.0, axis=0))
    np.testing.assert_array_equal(nonzero, [49, 50])


def test_sod_initial_mass_matches_piecewise_integral():
    cfg = Euler1dConfig(n_cells=1000)
    u0 = Euler1d(cfg).initial_state()
    mass = u0[:1000].sum() * cfg.dx
    assert mass == pytest.approx(0.5 * 1.0 + 0.5 * 0.125, rel=1e-14)
    rho, _, p = Euler1d(cfg).primitives(u0)
    assert rho.min() > 0 and p.min() > 0


def test_roe_flux_is_consistent():
    q = np.array([0.7, 0.3, 2.1])[:, None]
    np.testing.assert_allclose(roe_flux(q, q, 1.4), euler_flux(q, 1.4), rtol=1e-14)


def test_roe_flux_resolves_a_stationary_contact_exactly():
    # rho jumps, u = 0 and p continuous: the flux is (0, p, 0) on both sides
    gamma = 1.4
    qL = np.array([1.0, 0.0, 1.0 / (gamma - 1)])[:, None]
    qR = np.array([0.2, 0.0, 1.0 / (gamma - 1)])[:, None]
    np.testing.assert_allclose(roe_flux(qL, qR, gamma)[:, 0], [0.0, 1.0, 0.0], atol=1e-14)


def test_wall_conserves_mass_and_energy():
    sys = Euler1d(Euler1dConfig(n_cells=60))
    u = sys.initial_state()
    u[60:120] = 0.1 * np.sin(np.linspace(0, 3, 60))
    R = sys.rhs(u).reshape(3, 60)
    assert abs(R[0].sum()) < 1e-12
    assert abs(R[2].sum()) < 1e-11


def test_negative_density_is_rejected():
    sys = Euler1d(Euler1dConfig(n_cells=10))
    u = _uniform_state(10)
    u[3] = -0.1
    with pytest.raises(NonPhysicalState):
        sys.rhs(u)


def test_bad_euler_config():
    with pytest.raises(InvalidArgument):
        Euler1dConfig(n_cells=1)
    with pytest.raises(InvalidArgument):
        Euler1dConfig(gamma=1.0)
    with pytest.raises(InvalidArgument):
        Euler1dConfig(left=(1.0, 0.0, -1.0))


def test_batched_rhs_matches_columnwise():
    sys = Euler1d(Euler1dConfig(n_cells=30))
    U = sys.initial_state()[:, None] * (1 + 0.05 * RNG.random((90, 4)))
    R = sys.rhs(U)
    for j in range(4):
        np.testing.assert_allclose(R[:, j], sys.rhs(U[:, j]), rtol=1e-14, atol=1e-14)


def test_complex_step_jacobian_matches_central_difference():
    sys = Euler1d(Euler1dConfig(n_cells=50))
    u = _smooth_state(sys)
    v = RNG.standard_normal(150)
    h = 1e-6
    fd = (sys.rhs(u + h * v) - sys.rhs(u - h * v)) / (2 * h)
    np.testing.assert_allclose(sys.jac_vec(u, v), fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_sparse_jacobian_matches_probing():
    sys = Euler1d(Euler1dConfig(n_cells=20))
    u = sys.initial_state() * (1 + 0.1 * RNG.random(60))
    J = sys.jac_matrix(u).toarray()
    dense = np.column_stack([sys.jac_vec(u, e) for e in np.eye(60)])
    np.testing.assert_allclose(J, dense, rtol=1e-13, atol=1e-12)


def test_fd_jac_vec_agrees_with_exact_to_order_eps():
    sys = Euler1d(Euler1dConfig(n_cells=50))
    u = _smooth_state(sys)
    v = RNG.standard_normal(150)
    exact = sys.jac_vec(u, v)
    err = np.linalg.norm(jac_vec_fd(sys, u, v, 1e-5) - exact) / np.linalg.norm(exact)
    err2 = np.linalg.norm(jac_vec_fd(sys, u, v, 1e-6) - exact) / np.linalg.norm(exact)
    assert err < 1e-3
    assert err2 < err


def test_rhs_rows_matches_full_rhs():
    sys = Euler1d(Euler1dConfig(n_cells=40))
    u = sys.initial_state() * (1 + 0.1 * RNG.random(120))
    rows = np.array([0, 5, 39, 40, 79, 100, 119])
    st_rows = sys.stencil(rows)
    np.testing.assert_allclose(sys.rhs_rows(u[st_rows], st_rows, rows), sys.rhs(u)[rows], rtol=1e-14, atol=1e-13)


def test_stencil_covers_neighbours_of_every_variable():
    sys = Euler1d(Euler1dConfig(n_cells=10))
    np.testing.assert_array_equal(sys.stencil([15]), [4, 5, 6, 14, 15, 16, 24, 25, 26])
    np.testing.assert_array_equal(sys.stencil([0]), [0, 1, 10, 11, 20, 21])


def test_jac_vec_fd_scalar_square():
    sys = FunctionSystem(1, lambda u: u**2)
    val = jac_vec_fd(sys, np.array([2.0]), np.array([1.0]), 1e-5)
    assert val[0] - 4.0 == pytest.approx(1e-5, abs=1e-10)


def test_jac_vec_fd_zero_direction():
    sys = Euler1d(Euler1dConfig(n_cells=10))
    np.testing.assert_array_equal(jac_vec_fd(sys, sys.initial_state(), np.zeros(30)), 0.0)


def test_function_system_without_dense_jacobian():
    sys = FunctionSystem(2, lambda u: -u)
    assert not sys.has_dense_jacobian
    with pytest.raises(DenseJacobianUnavailable):
        sys.jac_dense(np.zeros(2))
    with pytest.raises(DimensionMismatch):
        sys.rhs(np.zeros(3))


@given(st.integers(2, 12), st.floats(0.1, 5.0))
@settings(max_examples=30, deadline=None)
def test_lti_jac_vec_is_exact(n, scale):
    A = scale * np.random.default_rng(n).standard_normal((n, n))
    sys = LtiSystem(A)
    u, v = np.ones(n), np.arange(n, dtype=float)
    np.testing.assert_array_equal(sys.jac_vec(u, v), A @ v)
    np.testing.assert_allclose(jac_vec_fd(sys, u, v), A @ v, rtol=1e-8, atol=1e-8 * np.abs(A).sum())


def test_diffusion_eigenvalues_closed_form():
    sys = make_diffusion_lti(3, 1.0)
    np.testing.assert_allclose(sys.eigenvalues, [-2 + np.sqrt(2), -2, -2 - np.sqrt(2)], atol=1e-14)
    sys2 = make_diffusion_lti(2, 1.0)
    np.testing.assert_array_equal(sys2.A, [[-2, 1], [1, -2]])
    np.testing.assert_allclose(sys2.eigenvalues, [-1, -3], atol=1e-14)


@pytest.mark.parametrize("n", [2, 5, 17, 64])
def test_diffusion_is_symmetric_with_tridiagonal_spectrum(n):
    dx = 1.0 / (n + 1)
    sys = make_diffusion_lti(n, dx)
    np.testing.assert_array_equal(sys.A, sys.A.T)
    assert sys.is_self_adjoint
    k = np.arange(1, n + 1)
    oracle = np.sort((-2 + 2 * np.cos(k * np.pi / (n + 1))) / dx**2)[::-1]
    np.testing.assert_allclose(sys.eigenvalues, oracle, rtol=1e-10)
    S = sys.eigenvectors
    res = np.abs(sys.A @ S - S * sys.eigenvalues).max()
    assert res <= 1e-8 * np.linalg.norm(sys.A, 2)


def test_lti_stencil_and_rows():
    sys = make_diffusion_lti(8, 1.0)
    rows = np.array([0, 4])
    st_rows = sys.stencil(rows)
    np.testing.assert_array_equal(st_rows, [0, 1, 3, 4, 5])
    u = RNG.standard_normal(8)
    np.testing.assert_allclose(sys.rhs_rows(u[st_rows], st_rows, rows), (sys.A @ u)[rows])


def test_counting_system_records_rows():
    inner = Euler1d(Euler1dConfig(n_cells=10))
    sys = CountingSystem(inner)
    u = inner.initial_state()
    sys.rhs(u)
    rows = sys.stencil([3])
    sys.rhs_rows(u[rows], rows, [3])
    assert sys.reads == [30, 9]
    sys.reset()
    assert sys.reads == []


def test_bad_diffusion_args():
    with pytest.raises(InvalidArgument):
        make_diffusion_lti(1, 1.0)
    with pytest.raises(InvalidArgument):
        make_diffusion_lti(4, 0.0)
    with pytest.raises(DimensionMismatch):
        LtiSystem(np.ones((2, 3)))
