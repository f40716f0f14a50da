"""Error metrics, the tau misfit search, FLOP counts, and numerical checks
of the linear-system error and eigenvalue results for Galerkin and APG.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as sla
from scipy.integrate import trapezoid as _trapezoid

from .errors import (
    AllRunsUnstable,
    AssumptionViolated,
    InvalidArgument,
    InvalidWindow,
    NonDiagonalizable,
    QuadratureNotConverged,
    TimeGridMismatch,
)

__all__ = [
    "ErrorSeries",
    "error_norm",
    "misfit",
    "misfit_tau",
    "refine_misfit_tau",
    "CostModel",
    "Algorithm",
    "flop_estimate",
    "Check",
    "coarse_operator",
    "verify_lti_error_bound",
    "verify_eigen_ordering",
    "verify_residual_split",
    "tau_sign_bound",
    "nonlinear_bound_report",
    "random_negative_lti",
    "lti_checks",
    "theorem_suite",
]

TIME_TOL = 1e-9


# --------------------------------------------------------------------------
# error metrics
# --------------------------------------------------------------------------


@dataclass
class ErrorSeries:
    times: np.ndarray
    e_l2: np.ndarray
    integrated: float


def _left_riemann(times, values):
    if times.size < 2:
        return 0.0
    return float(np.sum(values[:-1] * np.diff(times)))


def error_norm(rom_times, rom_coords, fom_times, fom_states, basis):
    """L2 error of the ROM against the projected FOM at matching times.

    The ROM is given by its reduced coordinates (K x n_t). Because the basis
    is orthonormal, ``||V a - V V^T u|| = ||a - V^T u||``, which is what is
    evaluated. The integral is a left Riemann sum over the saved times.
    """
    rom_times = np.asarray(rom_times, dtype=float)
    fom_times = np.asarray(fom_times, dtype=float)
    if rom_times.shape != fom_times.shape or np.abs(rom_times - fom_times).max(initial=0.0) > TIME_TOL:
        raise TimeGridMismatch("ROM and FOM outputs are on different time grids")
    diff = np.asarray(rom_coords) - basis.V.T @ np.asarray(fom_states)
    e = np.linalg.norm(diff, axis=0)
    return ErrorSeries(rom_times, e, _left_riemann(rom_times, e))


def _match(times, wanted):
    idx = np.searchsorted(times, wanted - TIME_TOL)
    ok = (idx < times.size) & (np.abs(times[np.minimum(idx, times.size - 1)] - wanted) <= TIME_TOL)
    if not np.all(ok):
        raise TimeGridMismatch("requested times are not on the saved grid")
    return idx


def misfit(rom_times, rom_coords, fom_times, fom_states, basis, sample_times):
    """Sum of the L2 errors at ``sample_times``; ``inf`` if the run ended early."""
    rom_times = np.asarray(rom_times)
    sample_times = np.asarray(sample_times, dtype=float)
    if rom_times[-1] < sample_times[-1] - TIME_TOL:
        return np.inf
    ir = _match(rom_times, sample_times)
    jf = _match(np.asarray(fom_times), sample_times)
    diff = np.asarray(rom_coords)[:, ir] - basis.V.T @ np.asarray(fom_states)[:, jf]
    return float(np.linalg.norm(diff, axis=0).sum())


def misfit_tau(tau_grid, rom_factory, fom_times, fom_states, basis, sample_times):
    """Grid search for the misfit-optimal tau.

    ``rom_factory(tau)`` returns a :class:`~romkit.rom.RunRecord`. Unstable
    runs score ``inf``. Ties go to the smaller tau.
    """
    taus = np.asarray(tau_grid, dtype=float)
    if taus.size == 0:
        raise InvalidArgument("empty tau grid")
    order = np.argsort(taus, kind="stable")
    taus = taus[order]
    values = np.full(taus.size, np.inf)
    for i, tau in enumerate(taus):
        rec = rom_factory(float(tau))
        if rec.stable:
            values[i] = misfit(rec.times, rec.coords, fom_times, fom_states, basis, sample_times)
    if not np.any(np.isfinite(values)):
        raise AllRunsUnstable("every tau on the grid diverged")
    return float(taus[int(np.argmin(values))]), taus, values


def refine_misfit_tau(rom_factory, fom_times, fom_states, basis, sample_times, lo=1e-4, hi=3.2e-2, n_coarse=11, n_fine=9):
    """Two-level geometric grid search for the misfit-optimal tau.

    A coarse grid on ``[lo, hi]`` is followed by ``n_fine`` points spanning
    one coarse spacing either side of the coarse optimum. Returns
    ``(tau_opt, taus, values)`` over every evaluated tau, sorted.
    """
    if not 0 < lo < hi:
        raise InvalidArgument("need 0 < lo < hi")
    coarse = np.geomspace(lo, hi, n_coarse)
    best, taus, values = misfit_tau(coarse, rom_factory, fom_times, fom_states, basis, sample_times)
    ratio = (hi / lo) ** (1.0 / (n_coarse - 1))
    fine = np.geomspace(best / ratio, best * ratio, n_fine)
    fine = fine[~np.isclose(fine[:, None], taus[None, :], rtol=1e-12, atol=0).any(axis=1)]
    if fine.size:
        try:
            _, t2, v2 = misfit_tau(fine, rom_factory, fom_times, fom_states, basis, sample_times)
        except AllRunsUnstable:
            t2, v2 = fine, np.full(fine.size, np.inf)
        taus = np.concatenate([taus, t2])
        values = np.concatenate([values, v2])
        order = np.argsort(taus, kind="stable")
        taus, values = taus[order], values[order]
    return float(taus[int(np.argmin(values))]), taus, values


# --------------------------------------------------------------------------
# FLOP model
# --------------------------------------------------------------------------


class Algorithm(str, Enum):
    APG_EXPLICIT = "apg_explicit"
    APG_IMPLICIT = "apg_implicit"
    APG_JFNK = "apg_jfnk"
    GALERKIN_EXPLICIT = "galerkin_explicit"
    GALERKIN_IMPLICIT = "galerkin_implicit"
    LSPG = "lspg"


@dataclass(frozen=True)
class CostModel:
    """Sizes entering the FLOP counts.

    ``omega`` is the cost of one RHS evaluation divided by N and ``eta`` the
    number of GMRES iterations per Newton step.
    """

    N: int
    K: int
    omega: int
    eta: int = 0
    r: int = 0
    N_p: int = 0

    def __post_init__(self):
        for name in ("N", "K", "omega"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgument(f"{name} must be a positive integer")
        if self.eta < 0 or self.r < 0 or self.N_p < 0:
            raise InvalidArgument("eta, r and N_p must be non-negative")


def flop_estimate(model, algorithm):
    """FLOPs for one time step (one Newton iteration for implicit schemes)."""
    N, K, w, h = int(model.N), int(model.K), int(model.omega), int(model.eta)
    alg = Algorithm(algorithm)
    if alg is Algorithm.APG_EXPLICIT:
        return 8 * N * K + (2 * w + 5) * N
    if alg is Algorithm.GALERKIN_EXPLICIT:
        return 4 * N * K + (w - 1) * N + K
    if alg is Algorithm.APG_IMPLICIT:
        return (2 * w + 5) * N + 2 * K + (2 * w + 13) * N * K + K**2 + 8 * N * K**2 + K**3
    if alg is Algorithm.GALERKIN_IMPLICIT:
        return (w - 1) * N + 3 * K + (w + 3) * N * K + 2 * K**2 + 4 * N * K**2 + K**3
    if alg is Algorithm.LSPG:
        return (w + 2) * N + (w + 6) * N * K - K**2 + 4 * N * K**2 + K**3
    if alg is Algorithm.APG_JFNK:
        return ((2 * h + 2) * w + 5 * h + 5) * N + (h**2 + h + 2) * K + (8 * h + 8) * N * K
    raise InvalidArgument(f"unknown algorithm {algorithm!r}")


# --------------------------------------------------------------------------
# linear-system theory checks
# --------------------------------------------------------------------------


@dataclass
class Check:
    """One asserted inequality ``lhs <= rhs`` (``margin = rhs - lhs``)."""

    name: str
    lhs: float
    rhs: float
    passed: bool

    @property
    def margin(self):
        return self.rhs - self.lhs


def coarse_operator(A, V, tau=0.0):
    """``V^T P A V``: Galerkin for ``tau = 0``, else the APG operator ``V^T (A + tau A P' A) V``."""
    AV = A @ V
    M = V.T @ AV
    if tau:
        fine_AV = AV - V @ (V.T @ AV)
        M = M + tau * (V.T @ (A @ fine_AV))
    return M


def _sym_negative(sys):
    A = sys.A
    if not sys.is_self_adjoint:
        raise AssumptionViolated("A must be self-adjoint")
    gam = np.linalg.eigvalsh(A)
    if gam.max() >= 0:
        raise AssumptionViolated("A must have strictly negative eigenvalues")
    return A, gam


def tau_sign_bound(sys):
    """``|gamma_1| / gamma_N**2``: below it the top APG eigenvalue stays non-positive."""
    _, gam = _sym_negative(sys)
    return abs(gam.max()) / gam.min() ** 2


def verify_eigen_ordering(sys, basis, taus, slack=1e-10):
    """APG eigenvalues dominate Galerkin ones, and are non-positive below the tau bound.

    Returns a list of :class:`Check`. The sign condition is asserted only
    for ``tau <= |gamma_1| / gamma_N**2``; above it the value is reported
    with ``passed=True`` since the bound is one-sided.
    """
    A, gam = _sym_negative(sys)
    V = basis.V
    lam_g = np.sort(np.linalg.eigvalsh(coarse_operator(A, V)))[::-1]
    bound = abs(gam.max()) / gam.min() ** 2
    checks = []
    for tau in taus:
        M = coarse_operator(A, V, tau)
        lam_a = np.sort(np.linalg.eigvalsh(0.5 * (M + M.T)))[::-1]
        worst = int(np.argmin(lam_a - lam_g))
        checks.append(Check(f"ordering tau={tau:.3e}", float(lam_g[worst]), float(lam_a[worst] + slack), bool(np.all(lam_a >= lam_g - slack))))
        asserted = tau <= bound
        checks.append(Check(
            f"sign tau={tau:.3e}" + ("" if asserted else " (above bound, informational)"),
            float(lam_a[0]), slack, bool(lam_a[0] <= slack) or not asserted,
        ))
    return checks


class _ExactLti:
    """Closed-form FOM trajectory for a symmetric A via its eigenbasis."""

    def __init__(self, A, u0):
        self.gam, self.S = np.linalg.eigh(A)
        self.c0 = self.S.T @ u0

    def __call__(self, t):
        t = np.atleast_1d(t)
        return self.S @ (np.exp(np.outer(self.gam, t)) * self.c0[:, None])


def _gauss_legendre(f, a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (b - a) * x + 0.5 * (b + a)
    return 0.5 * (b - a) * (f(s) @ w)


def _panels(f, a, b, n_nodes, n_panels):
    edges = np.linspace(a, b, n_panels + 1)
    return sum(_gauss_legendre(f, lo, hi, n_nodes) for lo, hi in zip(edges[:-1], edges[1:]))


def _converged_panels(f, a, b, n_nodes, panels, what, rtol=1e-6, max_panels=4096):
    # the residual norm may touch zero inside the window, leaving a kink that
    # fixed-order Gauss-Legendre resolves only with more panels
    coarse = _panels(f, a, b, n_nodes, panels)
    while panels < max_panels:
        panels *= 2
        fine = _panels(f, a, b, n_nodes, panels)
        if abs(fine - coarse) <= rtol * abs(fine) or abs(fine - coarse) <= 1e-14:
            return fine
        coarse = fine
    raise QuadratureNotConverged(f"{what}: no convergence with {max_panels} panels")


def _eig_or_fail(M):
    lam, S = np.linalg.eig(M)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e12:
        raise NonDiagonalizable(f"eigenvector matrix condition number {cond:.2e}")
    return lam, S, cond


def verify_lti_error_bound(sys, basis, a0, t_grid, tau=0.0, slack=1e-6, n_nodes=64, panels=8):
    """Coarse-error bound for a Galerkin (``tau = 0``) or APG ROM of ``du/dt = A u``.

    The initial state is ``u0 = V a0``. The exact coarse error
    ``V^T u_F(t) - a(t)`` comes from matrix exponentials. The bound is
    ``cond(S) * int_0^t ||exp(Lambda (t-s))|| ||V^T P r_F(s)|| ds`` with
    ``M = V^T P A V = S Lambda S^-1`` and ``r_F = Pi A u_F - A Pi u_F``.
    """
    if not sys.is_self_adjoint:
        raise AssumptionViolated("the coarse-error bound needs a self-adjoint A")
    A = sys.A
    V = basis.V
    a0 = np.asarray(a0, dtype=float)
    u0 = V @ a0
    fom = _ExactLti(A, u0)
    M = coarse_operator(A, V, tau)
    lam, S, cond = _eig_or_fail(M)
    growth = float(np.max(lam.real))

    def proj_residual(s):
        uF = fom(s)
        AuF = A @ uF
        coarse_u = V @ (V.T @ uF)
        rF = V @ (V.T @ AuF) - A @ coarse_u
        vr = V.T @ rF
        if tau:
            # V^T P_A = V^T (I + tau A P')
            vr = vr + tau * (V.T @ (A @ (rF - V @ (V.T @ rF))))
        return np.linalg.norm(vr, axis=0)

    checks = []
    for t in np.atleast_1d(t_grid):
        t = float(t)
        a_rom = sla.expm(M * t) @ a0
        err = float(np.linalg.norm(V.T @ fom(t)[:, 0] - a_rom))
        if t == 0.0:
            bound = 0.0
        else:
            f = lambda s: np.exp(growth * (t - s)) * proj_residual(s)
            bound = cond * _converged_panels(f, 0.0, t, n_nodes, panels, f"bound at t={t}")
        checks.append(Check(f"error bound t={t:.4g} tau={tau:.3e}", err, bound * (1 + slack) + 1e-14, err <= bound * (1 + slack) + 1e-14))
    return checks


def _memory_integral(A, V, fom, t, lo, hi, n_nodes, panels=1):
    """``V^T A int_lo^hi exp(P'A z) P'A Pi u_F(t - z) dz``."""
    N = A.shape[0]
    fine_A = A - V @ (V.T @ A)

    def f(z):
        cols = []
        uF = fom(t - z)
        coarse_u = V @ (V.T @ uF)
        for j, zj in enumerate(z):
            cols.append(sla.expm(fine_A * zj) @ (fine_A @ coarse_u[:, j]))
        return V.T @ (A @ np.column_stack(cols))

    return _panels(f, lo, hi, n_nodes, panels)


def verify_residual_split(sys, basis, a0, t, taus, n_nodes=64, rtol=1e-6):
    """Memory-integral split of the projected FOM residual, and the per-unit-tau comparison.

    For each tau in ``taus`` (each must be < t) returns a dict with the
    Galerkin and APG residual norms, their split upper bounds, ``delta_bar``
    and the small-tau limit ``-||V^T A P' A Pi u_F(t)||``.
    """
    if not sys.is_self_adjoint:
        raise AssumptionViolated("the residual split needs a self-adjoint A")
    A = sys.A
    V = basis.V
    u0 = V @ np.asarray(a0, dtype=float)
    fom = _ExactLti(A, u0)
    uF = fom(t)[:, 0]
    coarse_u = V @ (V.T @ uF)
    fine_A_u = A @ coarse_u - V @ (V.T @ (A @ coarse_u))
    q = V.T @ (A @ fine_A_u)
    rF = V @ (V.T @ (A @ uF)) - A @ coarse_u
    galerkin_res = float(np.linalg.norm(V.T @ rF))
    rows = []
    for tau in taus:
        if not 0 < tau < t:
            raise InvalidWindow(f"need 0 < tau < t, got tau={tau}, t={t}")
        near = _memory_integral(A, V, fom, t, 0.0, tau, n_nodes)
        near2 = _memory_integral(A, V, fom, t, 0.0, tau, 2 * n_nodes)
        if np.linalg.norm(near2 - near) > rtol * max(np.linalg.norm(near2), 1e-300) and np.linalg.norm(near2 - near) > 1e-13:
            raise QuadratureNotConverged(f"near-field integral not converged for tau={tau}")
        far = _memory_integral(A, V, fom, t, tau, t, n_nodes, panels=4)
        apg_res = float(np.linalg.norm(V.T @ rF + tau * (V.T @ (A @ (rF - V @ (V.T @ rF))))))
        n_near, n_far = float(np.linalg.norm(near2)), float(np.linalg.norm(far))
        n_near_apg = float(np.linalg.norm(near2 - tau * q))
        rows.append({
            "tau": float(tau),
            "galerkin_residual": galerkin_res,
            "galerkin_bound": n_near + n_far,
            "apg_residual": apg_res,
            "apg_bound": n_near_apg + n_far,
            "delta_bar": (n_near_apg - n_near) / tau,
            "limit": -float(np.linalg.norm(q)),
            "identity_gap": float(np.linalg.norm(near2 + far - V.T @ rF)),
        })
    return rows


def nonlinear_bound_report(sys, basis, fom_times, fom_states, kappa, tau=0.0):
    """Evaluate the a-priori nonlinear error bound for a user-supplied Lipschitz constant.

    ``bound(t) = int_0^t exp(||P|| kappa s) ||(I - P) R(u_F(t - s))|| ds`` with
    ``P = V V^T (I + tau J P')`` (``tau = 0`` gives the Galerkin projector),
    ``J`` taken at the initial state. The trapezoid rule runs on the FOM
    output grid. Nothing is asserted: the result is informational since
    ``kappa`` is not computable in general.

    Returns ``(times, bound)``.
    """
    if kappa < 0:
        raise InvalidArgument("kappa must be non-negative")
    t = np.asarray(fom_times, dtype=float)
    U = np.asarray(fom_states, dtype=float)
    if U.shape[1] != t.size:
        raise TimeGridMismatch(f"{t.size} times for {U.shape[1]} states")
    V = basis.V
    P = V @ V.T
    if tau:
        J = sys.jac_matrix(U[:, 0])
        J = J.toarray() if hasattr(J, "toarray") else np.asarray(J)
        P = P + tau * (V @ (V.T @ (J - (J @ V) @ V.T)))
    p_norm = float(np.linalg.norm(P, 2))
    R = sys.rhs(U)
    defect = np.linalg.norm(R - P @ R, axis=0)
    bound = np.zeros_like(t)
    for j in range(1, t.size):
        s = t[j] - t[: j + 1]
        bound[j] = _trapezoid(np.exp(p_norm * kappa * s[::-1]) * defect[: j + 1][::-1], s[::-1])
    return t, bound


def random_negative_lti(rng, N):
    """Random symmetric negative-definite matrix with eigenvalues spread over two decades."""
    Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
    gam = -np.sort(10.0 ** rng.uniform(-0.5, 1.5, N))
    return (Q * gam) @ Q.T


def lti_checks(sys, basis, a0, t_grid, label=""):
    """All linear-system checks for one self-adjoint negative-definite system.

    Coarse-error bounds at ``tau = 0`` and at the sign-bound tau,
    eigenvalue ordering and sign over ``{0, bound/2, bound}``, and
    ``delta_bar < 0`` for the two smallest of ``{1e-1, ..., 1e-4} / rho(A)``
    at the middle of the time grid.
    """
    out = []
    bound_tau = tau_sign_bound(sys)
    for tau in (0.0, bound_tau):
        out.extend(verify_lti_error_bound(sys, basis, a0, t_grid, tau))
    out.extend(verify_eigen_ordering(sys, basis, [0.0, 0.5 * bound_tau, bound_tau]))
    rho = float(np.max(np.abs(np.linalg.eigvalsh(sys.A))))
    taus = np.array([1e-1, 1e-2, 1e-3, 1e-4]) / rho
    rows = verify_residual_split(sys, basis, a0, 0.5 * float(np.max(t_grid)), taus)
    for row in sorted(rows, key=lambda r: r["tau"])[:2]:
        out.append(Check(f"delta_bar tau={row['tau']:.3e}", row["delta_bar"], 0.0, row["delta_bar"] < 0.0))
    for c in out:
        c.name = label + c.name
    return out


def theorem_suite(n_systems=20, max_N=32, max_K=8, t_final=2.0, n_times=21, seed=0):
    """Run every linear-system check on seeded random systems.

    Each system is symmetric negative definite with ``6 <= N <= max_N`` and a
    random orthonormal basis with ``1 <= K <= max_K``. Returns a list of
    :class:`Check` covering the coarse-error bounds (Galerkin and APG at the
    sign-bound tau), eigenvalue ordering and sign, and the per-unit-tau
    residual comparison at the two smallest tau of the grid.
    """
    from .basis import TrialBasis
    from .dynamics import LtiSystem

    rng = np.random.default_rng(seed)
    t_grid = np.linspace(0.0, t_final, n_times)
    checks = []
    for i in range(n_systems):
        N = int(rng.integers(6, max_N + 1))
        K = int(rng.integers(1, min(max_K, N - 1) + 1))
        sys = LtiSystem(random_negative_lti(rng, N))
        V, _ = np.linalg.qr(rng.standard_normal((N, K)))
        basis = TrialBasis(V)
        a0 = rng.standard_normal(K)
        checks.extend(lti_checks(sys, basis, a0, t_grid, label=f"sys{i} "))
    return checks
