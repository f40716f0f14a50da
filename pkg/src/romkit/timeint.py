"""Time integrators and nonlinear solvers.

Everything here works on a generic ``rhs(y) -> dy/dt`` callable, so the same
code marches full-order states and reduced coordinates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .errors import GmresBreakdown, InvalidArgument, NoConvergence, SingularJacobian

__all__ = [
    "Scheme",
    "LinearSolver",
    "IntegratorSpec",
    "NewtonInfo",
    "Trajectory",
    "step_explicit",
    "step_residual",
    "newton_direct",
    "gmres",
    "newton_jfnk_gmres",
    "make_stepper",
    "integrate",
    "step_times",
]


class Scheme(str, Enum):
    EXPLICIT_EULER = "explicit_euler"
    SSP_RK3 = "ssp_rk3"
    IMPLICIT_EULER = "implicit_euler"
    CRANK_NICOLSON = "crank_nicolson"

    @property
    def implicit(self):
        return self in (Scheme.IMPLICIT_EULER, Scheme.CRANK_NICOLSON)


class LinearSolver(str, Enum):
    DIRECT = "direct"
    JFNK_GMRES = "jfnk_gmres"


@dataclass(frozen=True)
class IntegratorSpec:
    """Time-marching settings.

    ``jacobian_refresh="lazy"`` keeps the Newton matrix factorisation across
    iterations and steps, refactoring only when the residual stops
    contracting by at least half per iteration. The converged state is the
    same as full Newton's; only the iteration path differs.
    """

    scheme: Scheme = Scheme.SSP_RK3
    dt: float = 5e-4
    t_final: float = 1.0
    newton_tol: float = 1e-8
    newton_max_iter: int = 30
    linear_solver: LinearSolver = LinearSolver.DIRECT
    gmres_tol: float = 1e-8
    gmres_max_iter: int | None = None
    jacobian_refresh: str = "always"

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "linear_solver", LinearSolver(self.linear_solver))
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        if not self.t_final >= 0:
            raise InvalidArgument(f"t_final must be non-negative, got {self.t_final}")
        if self.newton_tol <= 0 or self.gmres_tol <= 0:
            raise InvalidArgument("solver tolerances must be positive")
        if self.newton_max_iter < 1:
            raise InvalidArgument("newton_max_iter must be >= 1")
        if self.gmres_max_iter is not None and self.gmres_max_iter < 1:
            raise InvalidArgument("gmres_max_iter must be >= 1")
        if self.jacobian_refresh not in ("always", "lazy"):
            raise InvalidArgument(f"jacobian_refresh must be 'always' or 'lazy', got {self.jacobian_refresh!r}")

    @property
    def n_steps(self):
        return step_times(self.dt, self.t_final).size - 1


def step_times(dt, t_final):
    """Times of a march with ``ceil(t_final/dt)`` steps, last step truncated."""
    n = math.ceil(t_final / dt - 1e-12) if t_final > 0 else 0
    t = np.arange(n + 1) * dt
    if n:
        t[-1] = t_final
    return t


@dataclass
class NewtonInfo:
    iterations: int = 0
    history: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)
    factorizations: int = 0
    lu: object = None


# --------------------------------------------------------------------------
# explicit steps and implicit residuals
# --------------------------------------------------------------------------


def step_explicit(rhs, y, dt, scheme=Scheme.SSP_RK3):
    """One explicit step of forward Euler or three-stage SSP-RK3."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    scheme = Scheme(scheme)
    if scheme is Scheme.EXPLICIT_EULER:
        return y + dt * rhs(y)
    if scheme is Scheme.SSP_RK3:
        y1 = y + dt * rhs(y)
        y2 = 0.75 * y + 0.25 * (y1 + dt * rhs(y1))
        return y / 3.0 + 2.0 / 3.0 * (y2 + dt * rhs(y2))
    raise InvalidArgument(f"{scheme.value} is not an explicit scheme")


def step_residual(scheme, rhs, y_prev, dt):
    """Residual ``r(y)`` of one implicit step from ``y_prev``.

    Implicit Euler: ``(y - y_prev)/dt - R(y)``.
    Crank-Nicolson: ``(y - y_prev)/dt - (R(y) + R(y_prev))/2``.
    """
    scheme = Scheme(scheme)
    if scheme is Scheme.IMPLICIT_EULER:
        return lambda y: (y - y_prev) / dt - rhs(y)
    if scheme is Scheme.CRANK_NICOLSON:
        f_prev = rhs(y_prev)
        return lambda y: (y - y_prev) / dt - 0.5 * (rhs(y) + f_prev)
    raise InvalidArgument(f"{scheme.value} is not an implicit scheme")


def _rhs_weight(scheme):
    # d r / d y = I/dt - w * dR/dy
    return 1.0 if Scheme(scheme) is Scheme.IMPLICIT_EULER else 0.5


# --------------------------------------------------------------------------
# Newton with a dense direct solve
# --------------------------------------------------------------------------


def _factor(J):
    J = np.atleast_2d(np.asarray(J, dtype=float))
    scale = np.abs(J).max()
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularJacobian
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(J, check_finite=False)
    if scale == 0 or np.abs(np.diag(lu)).min() < 1e-14 * scale:
        raise SingularJacobian("Newton matrix is numerically singular")
    return lu, piv


def newton_direct(res, jac, y0, tol=1e-10, max_iter=30, lu=None, refresh="always"):
    """Newton's method with LU-factorised linear solves.

    Parameters
    ----------
    res : callable
        Residual ``r(y)``.
    jac : callable
        ``dr/dy`` as a dense matrix.
    y0 : array_like
        Initial guess.
    tol : float
        Convergence threshold on ``max|r|``.
    lu : tuple, optional
        A prior factorisation to start from (lazy refresh only).
    refresh : {"always", "lazy"}
        Refactor every iteration, or only when contraction stalls.

    Returns
    -------
    y : ndarray
    info : NewtonInfo
        ``info.lu`` holds the last factorisation for reuse.
    """
    y = np.array(y0, dtype=float, copy=True)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    info = NewtonInfo()
    best, best_norm = y.copy(), np.inf
    r = np.atleast_1d(res(y))
    prev_norm = np.inf
    for it in range(max_iter + 1):
        norm = float(np.abs(r).max())
        info.history.append(norm)
        if not np.isfinite(norm):
            break
        if norm < best_norm:
            best, best_norm = y.copy(), norm
        if norm <= tol:
            info.iterations = it
            info.lu = lu
            return (y[0] if scalar else y), info
        if it == max_iter:
            break
        if refresh == "always" or lu is None or norm > 0.5 * prev_norm:
            lu = _factor(jac(y))
            info.factorizations += 1
        prev_norm = norm
        y = y - sla.lu_solve(lu, r, check_finite=False)
        r = np.atleast_1d(res(y))
    info.iterations = len(info.history) - 1
    raise NoConvergence(
        f"Newton did not reach tol={tol:g} in {max_iter} iterations (best {best_norm:.3e})",
        best=best[0] if scalar else best,
        history=info.history,
    )


# --------------------------------------------------------------------------
# GMRES and Jacobian-free Newton-Krylov
# --------------------------------------------------------------------------


def gmres(matvec, b, tol=1e-8, max_iter=None):
    """Unrestarted GMRES with modified Gram-Schmidt Arnoldi, started from zero.

    Stops once the residual drops below ``tol * ||b||``. A happy breakdown
    (new Krylov direction below 1e-14) ends the iteration with the exact
    subspace solution; it raises :class:`GmresBreakdown` only if that
    solution still misses the tolerance.

    Returns
    -------
    x : ndarray
    iterations : int
    history : list of float
        Residual norm estimate after each iteration.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    m = n if max_iter is None else min(int(max_iter), n)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return np.zeros_like(b), 0, [0.0]
    Q = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    Q[:, 0] = b / beta
    history = [beta]
    target = tol * beta
    k = 0
    broke = False
    for j in range(m):
        w = np.asarray(matvec(Q[:, j]), dtype=float)
        for i in range(j + 1):
            H[i, j] = Q[:, i] @ w
            w = w - H[i, j] * Q[:, i]
        H[j + 1, j] = np.linalg.norm(w)
        broke = H[j + 1, j] < 1e-14 * max(1.0, np.abs(H[: j + 1, j]).max())
        if not broke:
            Q[:, j + 1] = w / H[j + 1, j]
        for i in range(j):
            a, c = H[i, j], H[i + 1, j]
            H[i, j] = cs[i] * a + sn[i] * c
            H[i + 1, j] = -sn[i] * a + cs[i] * c
        rho = math.hypot(H[j, j], H[j + 1, j])
        if rho == 0.0:
            raise GmresBreakdown("singular Hessenberg matrix in GMRES")
        cs[j], sn[j] = H[j, j] / rho, H[j + 1, j] / rho
        H[j, j] = rho
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        history.append(abs(g[j + 1]))
        if abs(g[j + 1]) <= target or broke:
            break
    z = sla.solve_triangular(H[:k, :k], g[:k], check_finite=False)
    x = Q[:, :k] @ z
    if broke and abs(g[k]) > target:
        raise GmresBreakdown("Krylov space exhausted before reaching the tolerance")
    return x, k, history


def newton_jfnk_gmres(res, jvp, y0, tol=1e-10, gmres_tol=1e-8, max_iter=30, gmres_max_iter=None):
    """Newton's method whose linear solves use only ``jvp(y, v) = dr/dy @ v``.

    Returns ``(y, info)`` with the GMRES iteration count per Newton step in
    ``info.gmres_iterations``.
    """
    y = np.array(np.atleast_1d(y0), dtype=float, copy=True)
    info = NewtonInfo()
    best, best_norm = y.copy(), np.inf
    for it in range(max_iter + 1):
        r = np.asarray(res(y))
        norm = float(np.abs(r).max())
        info.history.append(norm)
        if not np.isfinite(norm):
            break
        if norm < best_norm:
            best, best_norm = y.copy(), norm
        if norm <= tol:
            info.iterations = it
            return y, info
        if it == max_iter:
            break
        dy, k, _ = gmres(lambda v: jvp(y, v), -r, gmres_tol, gmres_max_iter)
        info.gmres_iterations.append(k)
        y = y + dy
    info.iterations = len(info.history) - 1
    raise NoConvergence(
        f"JFNK did not reach tol={tol:g} in {max_iter} iterations (best {best_norm:.3e})",
        best=best,
        history=info.history,
    )


# --------------------------------------------------------------------------
# time loop
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Saved states (columns) with their times and per-step solver stats."""

    times: np.ndarray
    states: np.ndarray
    newton_iterations: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)


def make_stepper(rhs, spec, jac=None, jvp=None):
    """Build ``step(y, dt) -> (y_new, NewtonInfo | None)`` for an ODE ``dy/dt = rhs(y)``.

    ``jac(y)`` must return ``dR/dy`` (dense) for the direct solver and
    ``jvp(y, v)`` its action for JFNK; the step-residual Jacobian is formed
    from them here.
    """
    scheme = spec.scheme
    if not scheme.implicit:
        return lambda y, dt: (step_explicit(rhs, y, dt, scheme), None)

    w = _rhs_weight(scheme)
    state = {"lu": None, "dt": None}

    if spec.linear_solver is LinearSolver.DIRECT:
        if jac is None:
            raise InvalidArgument("direct implicit solves need a Jacobian callable")

        def step(y, dt):
            if state["dt"] != dt:
                state["lu"] = None
                state["dt"] = dt
            r = step_residual(scheme, rhs, y, dt)
            J = lambda z: np.eye(z.size) / dt - w * np.atleast_2d(jac(z))
            lu = state["lu"] if spec.jacobian_refresh == "lazy" else None
            y_new, info = newton_direct(r, J, y, spec.newton_tol, spec.newton_max_iter, lu, spec.jacobian_refresh)
            state["lu"] = info.lu
            return y_new, info

        return step

    if jvp is None:
        raise InvalidArgument("JFNK solves need a Jacobian-vector callable")

    def step(y, dt):
        r = step_residual(scheme, rhs, y, dt)
        Jv = lambda z, v: v / dt - w * jvp(z, v)
        return newton_jfnk_gmres(r, Jv, y, spec.newton_tol, spec.gmres_tol, spec.newton_max_iter, spec.gmres_max_iter)

    return step


def integrate(step, y0, dt, t_final, save_every=1, check=None):
    """March ``step`` from ``y0`` and keep every ``save_every``-th state.

    The initial state and the final state are always kept. ``check(y, t)``
    may raise to abort the run.
    """
    if save_every < 1:
        raise InvalidArgument("save_every must be >= 1")
    t = step_times(dt, t_final)
    y = np.array(y0, dtype=float, copy=True)
    times = [0.0]
    saved = [y.copy()]
    newton, krylov = [], []
    n = t.size - 1
    for k in range(n):
        y, info = step(y, t[k + 1] - t[k])
        if info is not None:
            newton.append(info.iterations)
            krylov.extend(info.gmres_iterations)
        if check is not None:
            check(y, t[k + 1])
        if (k + 1) % save_every == 0 or k + 1 == n:
            times.append(float(t[k + 1]))
            saved.append(y.copy())
    return Trajectory(np.array(times), np.column_stack(saved), newton, krylov)
