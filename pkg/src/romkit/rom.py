"""Projection ROMs: Galerkin, adjoint Petrov-Galerkin (APG) and least-squares
Petrov-Galerkin (LSPG), plus the spectral-radius heuristic for APG's tau.

Reduced coordinates ``a`` may carry a trailing batch axis, matching the
full-order models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .basis import TrialBasis
from .dynamics import DEFAULT_FD_EPS, jac_vec_fd
from .errors import (
    DenseJacobianUnavailable,
    DimensionMismatch,
    InvalidArgument,
    NoConvergence,
    NonPhysicalState,
    RankDeficientNormalEquations,
    SingularJacobian,
    Unstable,
    ZeroSpectralRadius,
)
from .timeint import IntegratorSpec, NewtonInfo, Scheme, make_stepper, step_times

__all__ = [
    "Method",
    "JacMode",
    "RomMethod",
    "galerkin_rhs",
    "apg_rhs",
    "apg_test_basis_rhs",
    "coarse_jacobian",
    "spectral_radius",
    "tau_heuristic",
    "lspg_step",
    "gauss_newton",
    "RomProblem",
    "RunRecord",
    "run_rom",
    "DIVERGENCE_LIMIT",
    "JFNK_FD_EPS",
]

DIVERGENCE_LIMIT = 1e8
# finite differencing an RHS that itself holds a finite difference needs a
# larger step to stay above the inner truncation noise
JFNK_FD_EPS = 1e-4


class Method(str, Enum):
    GALERKIN = "galerkin"
    APG = "apg"
    LSPG = "lspg"


class JacMode(str, Enum):
    FINITE_DIFF = "fd"
    EXACT = "exact"


@dataclass(frozen=True)
class RomMethod:
    """Closure choice and its parameters.

    ``tau`` and ``jac_mode`` only matter for APG, ``scheme`` only for LSPG.
    With ``tau_update`` the APG tau is recomputed as ``C / rho`` from the
    current state before every step instead of held fixed.
    """

    kind: Method = Method.GALERKIN
    tau: float = 0.0
    jac_mode: JacMode = JacMode.FINITE_DIFF
    fd_eps: float = DEFAULT_FD_EPS
    scheme: Scheme = Scheme.IMPLICIT_EULER
    tau_update: bool = False
    C: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "kind", Method(self.kind))
        object.__setattr__(self, "jac_mode", JacMode(self.jac_mode))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.tau >= 0:
            raise InvalidArgument(f"tau must be non-negative, got {self.tau}")
        if not self.fd_eps > 0:
            raise InvalidArgument(f"fd_eps must be positive, got {self.fd_eps}")
        if self.kind is Method.LSPG and not self.scheme.implicit:
            raise InvalidArgument("LSPG needs an implicit scheme; with explicit schemes it is Galerkin")

    @classmethod
    def galerkin(cls):
        return cls(Method.GALERKIN)

    @classmethod
    def apg(cls, tau, jac_mode=JacMode.FINITE_DIFF, fd_eps=DEFAULT_FD_EPS):
        return cls(Method.APG, tau=tau, jac_mode=jac_mode, fd_eps=fd_eps)

    @classmethod
    def lspg(cls, scheme=Scheme.IMPLICIT_EULER):
        return cls(Method.LSPG, scheme=scheme)


def _check(sys, basis):
    if basis.N != sys.dim:
        raise DimensionMismatch(f"basis has {basis.N} rows, system has dim {sys.dim}")


def _col(u):
    # (N,) -> (N, 1) so that u + V broadcasts column-wise
    return u[:, None] if np.ndim(u) == 1 else u


def galerkin_rhs(a, sys, basis):
    """``V^T R(V a)``."""
    _check(sys, basis)
    V = basis.V
    return V.T @ sys.rhs(V @ a)


def apg_rhs(a, sys, basis, tau, jac_mode=JacMode.FINITE_DIFF, eps=DEFAULT_FD_EPS):
    """``V^T [R(u) + tau J[u] P' R(u)]`` with ``u = V a`` and ``P' = I - V V^T``."""
    _check(sys, basis)
    V = basis.V
    u = V @ a
    R = sys.rhs(u)
    Rc = V.T @ R
    Rf = R - V @ Rc
    if JacMode(jac_mode) is JacMode.EXACT:
        JRf = sys.jac_vec(u, Rf)
    else:
        JRf = jac_vec_fd(sys, u, Rf, eps)
    return Rc + tau * (V.T @ JRf)


def apg_test_basis_rhs(a, sys, basis, tau):
    """APG written as a Petrov-Galerkin projection, ``W^T R(u)``.

    ``W = (I + tau P'^T J^T) V`` is assembled from the dense Jacobian, so this
    is a verification path for small systems.
    """
    _check(sys, basis)
    V = basis.V
    u = V @ a
    J = np.asarray(sys.jac_dense(u))
    JtV = J.T @ V
    W = V + tau * (JtV - V @ (V.T @ JtV))
    return W.T @ sys.rhs(u)


def _jac_times(sys, u, M):
    """``J[u] @ M`` using an assembled Jacobian when the model offers one."""
    try:
        J = sys.jac_matrix(u)
    except DenseJacobianUnavailable:
        return sys.jac_vec(_col(u), M)
    return J @ M


def coarse_jacobian(a, sys, basis):
    """``V^T J[V a] V`` (K x K)."""
    _check(sys, basis)
    V = basis.V
    return V.T @ np.asarray(_jac_times(sys, V @ a, V))


def spectral_radius(M, max_iter=200, rtol=1e-8, seed=0):
    """Power-iteration estimate of the spectral radius of a square matrix.

    For dominant complex pairs the one-step ratio oscillates, so when the
    ratio has not settled the estimate is the geometric-mean growth rate
    over the second half of the iterations.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x = np.random.default_rng(seed).standard_normal(M.shape[0])
    x /= np.linalg.norm(x)
    ratios = []
    prev = None
    for _ in range(max_iter):
        y = M @ x
        nrm = float(np.linalg.norm(y))
        if nrm == 0.0:
            return 0.0
        ratios.append(nrm)
        if prev is not None and abs(nrm - prev) <= rtol * nrm:
            return nrm
        prev = nrm
        x = y / nrm
    tail = np.log(ratios[len(ratios) // 2 :])
    return float(np.exp(tail.mean()))


def tau_heuristic(a, sys, basis, C=0.2, max_iter=200, rtol=1e-8):
    """``tau = C / rho(V^T J V)`` evaluated at ``u = V a``."""
    if basis.K < 1:
        raise InvalidArgument("need K >= 1")
    if C == 0:
        return 0.0
    rho = spectral_radius(coarse_jacobian(a, sys, basis), max_iter, rtol)
    if rho < 1e-14:
        raise ZeroSpectralRadius("coarse Jacobian has zero spectral radius")
    return C / rho


# --------------------------------------------------------------------------
# LSPG
# --------------------------------------------------------------------------


def gauss_newton(residual_and_basis, y0, tol=1e-8, max_iter=30, max_backtrack=12):
    """Gauss-Newton for ``min ||r(y)||``.

    ``residual_and_basis(y)`` returns ``(r, W)`` with ``W = dr/dy``. Each
    iteration solves ``W^T W d = -W^T r`` by LU and halves the step until
    the cost does not increase. Stops when the relative cost decrease or
    the relative gradient falls below ``tol``.
    """
    y = np.array(y0, dtype=float, copy=True)
    info = NewtonInfo()
    r, W = residual_and_basis(y)
    cost = float(r @ r)
    g0 = None
    for it in range(max_iter):
        g = W.T @ r
        gn = float(np.abs(g).max())
        info.history.append(np.sqrt(cost))
        if g0 is None:
            g0 = gn
        if gn <= 1e-14 * g0 or not np.isfinite(cost):
            break
        H = W.T @ W
        scale = np.abs(H).max()
        lu, piv = sla.lu_factor(H, check_finite=False)
        if scale == 0 or np.abs(np.diag(lu)).min() < 1e-14 * scale:
            raise RankDeficientNormalEquations("W^T W is numerically singular")
        d = -sla.lu_solve((lu, piv), g, check_finite=False)
        step = 1.0
        for _ in range(max_backtrack):
            r_new, W_new = residual_and_basis(y + step * d)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                break
            step *= 0.5
        else:
            # no descent left within round-off: at the minimiser
            break
        y = y + step * d
        decrease = cost - cost_new
        r, W, cost = r_new, W_new, cost_new
        info.iterations = it + 1
        if decrease <= tol * max(cost + decrease, np.finfo(float).tiny) or np.abs(step * d).max() <= 1e-14 * max(1.0, np.abs(y).max()):
            break
    else:
        info.history.append(np.sqrt(cost))
        raise NoConvergence(f"Gauss-Newton hit {max_iter} iterations", best=y, history=info.history)
    info.history.append(np.sqrt(cost))
    return y, info


def _lspg_weight(scheme):
    return 1.0 if Scheme(scheme) is Scheme.IMPLICIT_EULER else 0.5


def lspg_step(a_prev, sys, basis, dt, scheme=Scheme.IMPLICIT_EULER, tol=1e-8, max_iter=30, return_info=False):
    """One LSPG step: minimise the full-order step residual over ``V a``.

    Implicit Euler residual ``(u - u_prev)/dt - R(u)``; Crank-Nicolson uses
    the trapezoidal average of ``R``.
    """
    _check(sys, basis)
    scheme = Scheme(scheme)
    if not scheme.implicit:
        raise InvalidArgument("LSPG needs an implicit scheme")
    V = basis.V
    w = _lspg_weight(scheme)
    u_prev = V @ a_prev
    R_prev = sys.rhs(u_prev) if scheme is Scheme.CRANK_NICOLSON else 0.0

    def rw(y):
        u = V @ y
        R = sys.rhs(u)
        r = (u - u_prev) / dt - w * R - (1.0 - w) * R_prev
        W = V / dt - w * np.asarray(_jac_times(sys, u, V))
        return r, W

    y, info = gauss_newton(rw, a_prev, tol, max_iter)
    return (y, info) if return_info else y


# --------------------------------------------------------------------------
# problems and runs
# --------------------------------------------------------------------------


@dataclass
class RomProblem:
    """A full-order model, a trial basis, a closure and a time integrator.

    ``hyper`` optionally holds gappy-POD data; Galerkin/APG then use the
    hyper-reduced RHS and LSPG collocates at the sample rows.
    """

    sys: object
    basis: TrialBasis
    method: RomMethod
    integrator: IntegratorSpec
    hyper: object = None
    newton_fd_eps: float = JFNK_FD_EPS

    def __post_init__(self):
        _check(self.sys, self.basis)
        if self.method.kind is Method.LSPG and self.integrator.scheme is not self.method.scheme:
            raise InvalidArgument("LSPG scheme must match the integrator scheme")

    def rhs(self, a):
        m = self.method
        if self.hyper is not None:
            from .hyper import hyper_apg_rhs

            tau = m.tau if m.kind is Method.APG else 0.0
            return hyper_apg_rhs(a, self.sys, self.basis, self.hyper, tau, m.fd_eps)
        if m.kind is Method.APG:
            return apg_rhs(a, self.sys, self.basis, m.tau, m.jac_mode, m.fd_eps)
        return galerkin_rhs(a, self.sys, self.basis)

    def rhs_jacobian(self, a):
        """``d rhs / d a`` for Newton.

        Galerkin uses the exact ``V^T J V``; APG and hyper-reduced RHS are
        finite-differenced column by column in one batched call, with the
        larger step that differencing an already differenced RHS needs.
        """
        if self.method.kind is Method.GALERKIN and self.hyper is None:
            return coarse_jacobian(a, self.sys, self.basis)
        eps = self.newton_fd_eps
        K = a.size
        f0 = self.rhs(a)
        F = self.rhs(a[:, None] + eps * np.eye(K))
        return (F - f0[:, None]) / eps

    def rhs_jvp(self, a, v):
        if self.method.kind is Method.GALERKIN and self.hyper is None:
            V = self.basis.V
            return V.T @ self.sys.jac_vec(V @ a, V @ v)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return np.zeros_like(a)
        eps = JFNK_FD_EPS / nv
        return (self.rhs(a + eps * v) - self.rhs(a)) / eps

    def initial_coords(self, u0):
        return self.basis.project(np.asarray(u0, dtype=float))

    def stepper(self):
        if self.method.kind is Method.LSPG:
            spec = self.integrator
            if self.hyper is not None:
                from .hyper import collocated_lspg_step

                def step(a, dt):
                    return collocated_lspg_step(
                        a, self.sys, self.basis, self.hyper.sample_indices, dt, spec.scheme,
                        spec.newton_tol, spec.newton_max_iter, return_info=True,
                    )
            else:

                def step(a, dt):
                    return lspg_step(a, self.sys, self.basis, dt, spec.scheme, spec.newton_tol, spec.newton_max_iter, return_info=True)

            return step
        return make_stepper(self.rhs, self.integrator, jac=self.rhs_jacobian, jvp=self.rhs_jvp)


@dataclass
class RunRecord:
    """Outcome of one ROM run.

    ``coords`` holds saved reduced states as columns at ``times``. On
    failure ``stable`` is False and the arrays stop at the last good state.
    """

    method: str
    K: int
    dt: float
    tau: float
    times: np.ndarray
    coords: np.ndarray
    stable: bool
    message: str = ""
    wall_time: float = 0.0
    newton_iterations: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)
    fine_ic_norm: float = 0.0

    def states(self, basis):
        return basis.V @ self.coords


def _divergence_check(a, t):
    if not np.all(np.isfinite(a)) or np.abs(a).max() > DIVERGENCE_LIMIT:
        raise Unstable(f"reduced state diverged at t={t:.6g}")


def run_rom(problem, u0, save_every=1):
    """Integrate a ROM from the projection of ``u0``.

    Divergence (non-finite or ``|a| > 1e8``), non-physical reconstructions
    and solver failures end the run and mark it unstable instead of
    raising. The saved arrays then stop at the last saved good state.
    """
    if save_every < 1:
        raise InvalidArgument("save_every must be >= 1")
    spec = problem.integrator
    a = problem.initial_coords(u0)
    fine_ic = float(np.linalg.norm(problem.basis.fine(np.asarray(u0, dtype=float))))
    step = problem.stepper()
    m0 = problem.method
    retau = m0.kind is Method.APG and m0.tau_update
    t = step_times(spec.dt, spec.t_final)
    n = t.size - 1
    saved_t, saved_a = [0.0], [a.copy()]
    newton, krylov = [], []
    stable, msg = True, ""
    t0 = time.perf_counter()
    try:
        with np.errstate(over="raise", invalid="raise"):
            for k in range(n):
                if retau:
                    problem.method = replace(problem.method, tau=tau_heuristic(a, problem.sys, problem.basis, problem.method.C))
                a, info = step(a, t[k + 1] - t[k])
                if info is not None:
                    newton.append(info.iterations)
                    krylov.extend(info.gmres_iterations)
                _divergence_check(a, t[k + 1])
                if (k + 1) % save_every == 0 or k + 1 == n:
                    saved_t.append(float(t[k + 1]))
                    saved_a.append(a.copy())
    except (Unstable, NonPhysicalState, NoConvergence, SingularJacobian, RankDeficientNormalEquations, ZeroSpectralRadius, FloatingPointError) as exc:
        stable, msg = False, f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - t0
    problem.method = m0
    m = m0
    return RunRecord(
        method=m.kind.value,
        K=problem.basis.K,
        dt=spec.dt,
        tau=m.tau if m.kind is Method.APG else 0.0,
        times=np.array(saved_t),
        coords=np.column_stack(saved_a),
        stable=stable,
        message=msg,
        wall_time=wall,
        newton_iterations=newton,
        gmres_iterations=krylov,
        fine_ic_norm=fine_ic,
    )
