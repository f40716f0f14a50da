"""Full-order models du/dt = R(u).

Every model accepts either a single state of shape ``(N,)`` or a batch of
states stacked as columns, shape ``(N, m)``; the RHS is applied column-wise.
Batching is what keeps finite-difference Jacobians affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import (
    DenseJacobianUnavailable,
    DimensionMismatch,
    InvalidArgument,
    NonPhysicalState,
)

__all__ = [
    "FomSystem",
    "FunctionSystem",
    "LtiSystem",
    "Euler1dConfig",
    "Euler1d",
    "CountingSystem",
    "jac_vec_fd",
    "make_diffusion_lti",
    "roe_flux",
    "euler_flux",
    "euler1d_rhs",
]

DEFAULT_FD_EPS = 1e-5
_COMPLEX_STEP = 1e-30


def jac_vec_fd(sys, u, v, eps=DEFAULT_FD_EPS):
    """Forward-difference Jacobian action ``(R(u + eps v) - R(u)) / eps``."""
    if eps <= 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return (sys.rhs(u + eps * v) - sys.rhs(u)) / eps


class FomSystem:
    """Base class for a full-order dynamical system.

    Subclasses set ``dim`` and implement :meth:`rhs`. The defaults give a
    finite-difference Jacobian action and a dense-everywhere stencil, which
    is correct for any model but buys nothing for hyper-reduction.
    """

    dim: int
    fd_eps: float = DEFAULT_FD_EPS
    # rhs and rhs_rows accept complex states (enables complex-step derivatives)
    supports_complex: bool = False

    def rhs(self, u):
        raise NotImplementedError

    def jac_vec(self, u, v):
        return jac_vec_fd(self, u, v, self.fd_eps)

    def jac_dense(self, u):
        raise DenseJacobianUnavailable(f"{type(self).__name__} has no dense Jacobian")

    def jac_matrix(self, u):
        """Jacobian as a dense array or scipy sparse matrix."""
        return self.jac_dense(u)

    @property
    def has_dense_jacobian(self):
        try:
            self.jac_dense(np.zeros(self.dim))
        except DenseJacobianUnavailable:
            return False
        except Exception:
            return True
        return True

    def cell_map(self):
        """Group id per row; rows of one group are always sampled together."""
        return np.arange(self.dim)

    def stencil(self, rows):
        """Sorted rows of the state read when evaluating the RHS at ``rows``."""
        return np.arange(self.dim)

    def rhs_rows(self, u_stencil, stencil_rows, rows):
        """RHS entries at ``rows`` given the state only at ``stencil_rows``."""
        u = np.zeros((self.dim,) + np.shape(u_stencil)[1:], dtype=np.result_type(u_stencil, float))
        u[np.asarray(stencil_rows)] = u_stencil
        return self.rhs(u)[np.asarray(rows)]

    def _check_dim(self, u):
        if np.shape(u)[0] != self.dim:
            raise DimensionMismatch(f"expected leading dimension {self.dim}, got {np.shape(u)}")


class FunctionSystem(FomSystem):
    """Wraps plain callables; handy for scalar and toy test problems."""

    def __init__(self, dim, rhs, jac_dense=None, fd_eps=DEFAULT_FD_EPS):
        self.dim = int(dim)
        self._rhs = rhs
        self._jac = jac_dense
        self.fd_eps = fd_eps

    def rhs(self, u):
        u = np.asarray(u)
        self._check_dim(u)
        if u.ndim == 1:
            return np.asarray(self._rhs(u), dtype=np.result_type(u, float))
        return np.column_stack([self._rhs(u[:, j]) for j in range(u.shape[1])])

    def jac_vec(self, u, v):
        if self._jac is None:
            return super().jac_vec(u, v)
        return self.jac_dense(u) @ np.asarray(v)

    def jac_dense(self, u):
        if self._jac is None:
            return super().jac_dense(u)
        return np.asarray(self._jac(np.asarray(u)), dtype=float)


class LtiSystem(FomSystem):
    """Linear time-invariant system ``R(u) = A u``."""

    supports_complex = True

    def __init__(self, A, is_self_adjoint=None):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got shape {A.shape}")
        A.setflags(write=False)
        self.A = A
        self.dim = A.shape[0]
        if is_self_adjoint is None:
            scale = max(np.abs(A).max(), np.finfo(float).tiny)
            is_self_adjoint = bool(np.abs(A - A.T).max() <= 1e-12 * scale)
        self.is_self_adjoint = is_self_adjoint

    def rhs(self, u):
        u = np.asarray(u)
        self._check_dim(u)
        return self.A @ u

    def jac_vec(self, u, v):
        return self.A @ np.asarray(v)

    def jac_dense(self, u):
        return self.A

    @cached_property
    def _eig(self):
        if self.is_self_adjoint:
            w, S = np.linalg.eigh(self.A)
        else:
            w, S = np.linalg.eig(self.A)
        order = np.argsort(-w.real, kind="stable")
        return w[order], S[:, order]

    @property
    def eigenvalues(self):
        """Eigenvalues sorted descending by real part."""
        return self._eig[0]

    @property
    def eigenvectors(self):
        return self._eig[1]

    def stencil(self, rows):
        rows = np.atleast_1d(rows)
        return np.flatnonzero(np.any(self.A[rows] != 0.0, axis=0))

    def rhs_rows(self, u_stencil, stencil_rows, rows):
        return self.A[np.ix_(np.atleast_1d(rows), np.atleast_1d(stencil_rows))] @ u_stencil


def make_diffusion_lti(n, dx):
    """Second-difference operator ``tridiag(1, -2, 1) / dx**2`` with Dirichlet closure."""
    if n < 2:
        raise InvalidArgument(f"n must be >= 2, got {n}")
    if dx <= 0:
        raise InvalidArgument(f"dx must be positive, got {dx}")
    A = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / dx**2
    return LtiSystem(A, is_self_adjoint=True)


# --------------------------------------------------------------------------
# 1D compressible Euler, first-order Roe finite volume
# --------------------------------------------------------------------------


def _csabs(x):
    # |x| that stays analytic under complex-step differentiation
    if np.iscomplexobj(x):
        return np.where(x.real < 0, -x, x)
    return np.abs(x)


def euler_flux(q, gamma):
    """Analytic flux F(q) for conserved ``q = (rho, rho u, rho E)`` stacked on axis 0."""
    rho, m, E = q
    u = m / rho
    p = (gamma - 1.0) * (E - 0.5 * m * u)
    return np.stack([m, m * u + p, u * (E + p)])


def roe_flux(qL, qR, gamma, entropy_fix=False, fix_fraction=0.1):
    """First-order Roe interface flux between left and right conserved states.

    With ``entropy_fix`` a Harten fix smooths |lambda| below
    ``fix_fraction * c`` on the acoustic waves.
    """
    rhoL, mL, EL = qL
    rhoR, mR, ER = qR
    uL = mL / rhoL
    uR = mR / rhoR
    pL = (gamma - 1.0) * (EL - 0.5 * mL * uL)
    pR = (gamma - 1.0) * (ER - 0.5 * mR * uR)
    HL = (EL + pL) / rhoL
    HR = (ER + pR) / rhoR

    sL = np.sqrt(rhoL)
    sR = np.sqrt(rhoR)
    u = (sL * uL + sR * uR) / (sL + sR)
    H = (sL * HL + sR * HR) / (sL + sR)
    c = np.sqrt((gamma - 1.0) * (H - 0.5 * u * u))

    drho = rhoR - rhoL
    dm = mR - mL
    dE = ER - EL
    a2 = (gamma - 1.0) / (c * c) * (drho * (H - u * u) + u * dm - dE)
    a1 = (drho * (u + c) - dm - c * a2) / (2.0 * c)
    a3 = drho - a1 - a2

    l1 = _csabs(u - c)
    l2 = _csabs(u)
    l3 = _csabs(u + c)
    if entropy_fix:
        delta = fix_fraction * c
        l1 = np.where(l1.real < delta.real, (l1 * l1 + delta * delta) / (2.0 * delta), l1)
        l3 = np.where(l3.real < delta.real, (l3 * l3 + delta * delta) / (2.0 * delta), l3)

    w1 = l1 * a1
    w2 = l2 * a2
    w3 = l3 * a3
    diss = np.stack([
        w1 + w2 + w3,
        w1 * (u - c) + w2 * u + w3 * (u + c),
        w1 * (H - u * c) + w2 * 0.5 * u * u + w3 * (H + u * c),
    ])
    return 0.5 * (euler_flux(qL, gamma) + euler_flux(qR, gamma)) - 0.5 * diss


@dataclass(frozen=True)
class Euler1dConfig:
    """Shock-tube setup on a uniform grid with reflective walls at both ends.

    ``left`` and ``right`` are primitive states ``(rho, u, p)`` either side of
    ``x_split``.
    """

    n_cells: int = 1000
    domain: tuple[float, float] = (0.0, 1.0)
    gamma: float = 1.4
    left: tuple[float, float, float] = (1.0, 0.0, 1.0)
    right: tuple[float, float, float] = (0.125, 0.0, 0.1)
    x_split: float = 0.5
    entropy_fix: bool = False

    def __post_init__(self):
        if int(self.n_cells) < 2:
            raise InvalidArgument(f"n_cells must be >= 2, got {self.n_cells}")
        if not self.domain[1] > self.domain[0]:
            raise InvalidArgument(f"empty domain {self.domain}")
        if self.gamma <= 1.0:
            raise InvalidArgument(f"gamma must exceed 1, got {self.gamma}")
        for name, (rho, _, p) in (("left", self.left), ("right", self.right)):
            if rho <= 0 or p <= 0:
                raise InvalidArgument(f"{name} state needs rho > 0 and p > 0")

    @property
    def dx(self):
        return (self.domain[1] - self.domain[0]) / self.n_cells

    @property
    def centers(self):
        return self.domain[0] + (np.arange(self.n_cells) + 0.5) * self.dx


def _check_physical(q, gamma):
    rho = q[0].real
    if np.any(~(rho > 0)):
        raise NonPhysicalState("non-positive density")
    eint = q[2].real - 0.5 * q[1].real ** 2 / rho
    if np.any(~(eint > 0)):
        raise NonPhysicalState("non-positive internal energy")


def _with_wall_ghosts(q):
    left = q[:, :1].copy()
    right = q[:, -1:].copy()
    left[1] = -left[1]
    right[1] = -right[1]
    return np.concatenate([left, q, right], axis=1)


def euler1d_rhs(state, cfg):
    """Semi-discrete RHS ``-(F_{i+1/2} - F_{i-1/2}) / dx`` for variable-major states.

    ``state`` is ``[rho_0..rho_{n-1}, (rho u)_0.., (rho E)_0..]`` with an
    optional trailing batch axis.
    """
    n = cfg.n_cells
    state = np.asarray(state)
    if state.shape[0] != 3 * n:
        raise DimensionMismatch(f"expected {3 * n} rows, got {state.shape[0]}")
    q = state.reshape((3, n) + state.shape[1:])
    _check_physical(q, cfg.gamma)
    qe = _with_wall_ghosts(q)
    F = roe_flux(qe[:, :-1], qe[:, 1:], cfg.gamma, cfg.entropy_fix)
    dq = -(F[:, 1:] - F[:, :-1]) / cfg.dx
    return dq.reshape(state.shape)


class Euler1d(FomSystem):
    """First-order Roe finite-volume discretisation of the 1D Euler equations."""

    supports_complex = True

    def __init__(self, cfg=None, fd_eps=DEFAULT_FD_EPS):
        self.cfg = cfg if cfg is not None else Euler1dConfig()
        self.n = self.cfg.n_cells
        self.dim = 3 * self.n
        self.fd_eps = fd_eps

    def initial_state(self):
        cfg = self.cfg
        x = cfg.centers
        prim = np.where(x[None, :] <= cfg.x_split, np.array(cfg.left)[:, None], np.array(cfg.right)[:, None])
        rho, u, p = prim
        E = p / (cfg.gamma - 1.0) + 0.5 * rho * u * u
        return np.concatenate([rho, rho * u, E])

    def primitives(self, state):
        rho, m, E = np.asarray(state).reshape((3, self.n) + np.shape(state)[1:])
        u = m / rho
        p = (self.cfg.gamma - 1.0) * (E - 0.5 * m * u)
        return rho, u, p

    def rhs(self, u):
        return euler1d_rhs(u, self.cfg)

    def jac_vec(self, u, v):
        """Exact linearisation via complex-step differentiation."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return self.rhs(u + 1j * _COMPLEX_STEP * v).imag / _COMPLEX_STEP

    def jac_matrix(self, u):
        """Sparse Jacobian assembled from nine coloured complex-step probes."""
        n = self.n
        u = np.asarray(u, dtype=float)
        cells = np.arange(n)
        probes = np.zeros((3 * n, 9))
        for var in range(3):
            for colour in range(3):
                probes[var * n + cells[cells % 3 == colour], 3 * var + colour] = 1.0
        Jp = self.jac_vec(u[:, None], probes)
        rows, cols, vals = [], [], []
        for var in range(3):
            for colour in range(3):
                col_block = Jp[:, 3 * var + colour]
                for shift in (-1, 0, 1):
                    src = cells + shift
                    ok = (src >= 0) & (src < n) & (src % 3 == colour)
                    for out in range(3):
                        r = out * n + cells[ok]
                        rows.append(r)
                        cols.append(var * n + src[ok])
                        vals.append(col_block[r])
        J = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * n, 3 * n),
        )
        return J

    def jac_dense(self, u):
        return self.jac_matrix(u).toarray()

    def cell_map(self):
        return np.tile(np.arange(self.n), 3)

    def stencil(self, rows):
        cells = np.unique(np.atleast_1d(rows) % self.n)
        nbr = np.unique(np.concatenate([cells - 1, cells, cells + 1]))
        nbr = nbr[(nbr >= 0) & (nbr < self.n)]
        return np.concatenate([nbr + k * self.n for k in range(3)])

    def rhs_rows(self, u_stencil, stencil_rows, rows):
        n = self.n
        rows = np.atleast_1d(rows)
        stencil_rows = np.asarray(stencil_rows)
        u_stencil = np.asarray(u_stencil)
        st_cells = stencil_rows[stencil_rows < n]
        ns = st_cells.size
        if stencil_rows.size != 3 * ns:
            raise DimensionMismatch("stencil must hold all three variables of each cell")
        q = u_stencil.reshape((3, ns) + u_stencil.shape[1:])
        _check_physical(q, self.cfg.gamma)

        cells = rows % n
        var = rows // n
        loc = np.searchsorted(st_cells, cells)
        lo = np.searchsorted(st_cells, np.maximum(cells - 1, 0))
        hi = np.searchsorted(st_cells, np.minimum(cells + 1, n - 1))
        qc = q[:, loc]
        ql = q[:, lo].copy()
        qr = q[:, hi].copy()
        at_left = cells == 0
        at_right = cells == n - 1
        # wall ghosts mirror the cell with negated momentum
        ql[:, at_left] = qc[:, at_left]
        ql[1, at_left] = -qc[1, at_left]
        qr[:, at_right] = qc[:, at_right]
        qr[1, at_right] = -qc[1, at_right]
        g = self.cfg.gamma
        fix = self.cfg.entropy_fix
        dq = -(roe_flux(qc, qr, g, fix) - roe_flux(ql, qc, g, fix)) / self.cfg.dx
        return dq[var, np.arange(rows.size)]


@dataclass
class CountingSystem(FomSystem):
    """Delegating wrapper that records how many state rows each RHS call reads."""

    inner: FomSystem
    reads: list = field(default_factory=list)

    def __post_init__(self):
        self.dim = self.inner.dim
        self.fd_eps = self.inner.fd_eps
        self.supports_complex = self.inner.supports_complex

    def rhs(self, u):
        self.reads.append(self.dim)
        return self.inner.rhs(u)

    def jac_vec(self, u, v):
        self.reads.append(self.dim)
        return self.inner.jac_vec(u, v)

    def jac_dense(self, u):
        return self.inner.jac_dense(u)

    def jac_matrix(self, u):
        return self.inner.jac_matrix(u)

    def cell_map(self):
        return self.inner.cell_map()

    def stencil(self, rows):
        return self.inner.stencil(rows)

    def rhs_rows(self, u_stencil, stencil_rows, rows):
        self.reads.append(len(stencil_rows))
        return self.inner.rhs_rows(u_stencil, stencil_rows, rows)

    def reset(self):
        self.reads.clear()
