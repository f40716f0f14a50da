"""Hyper-reduction: gappy POD of the RHS with QR-pivoted sampling, and
collocated LSPG on the same sample rows.

The online routines read the full-order state only at stencil rows and
evaluate the RHS only at sample rows, through ``sys.rhs_rows``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .basis import pod_build
from .errors import DimensionMismatch, InvalidArgument, RankDeficientNormalEquations, RankDeficientSampling
from .rom import _lspg_weight, gauss_newton
from .timeint import Scheme

__all__ = [
    "HyperData",
    "qr_sample",
    "gappy_offline",
    "gappy_reconstruct",
    "hyper_apg_rhs",
    "collocated_lspg_step",
]

PINV_CUTOFF = 1e-12
_COMPLEX_STEP = 1e-30


@dataclass(frozen=True)
class HyperData:
    """Offline products for one RHS basis, sample set and trial basis.

    Attributes
    ----------
    U : (N, r) RHS basis.
    sample_indices : sorted sample rows (the matrix P).
    stencil_indices : sorted rows the RHS at the samples reads.
    pinv : (r, N_p) pseudo-inverse of ``U[sample]``.
    proj : (K, r) product ``V^T U``.
    U_stencil, V_stencil : rows of U and V at the stencil.
    sigma : RHS singular values.
    """

    U: np.ndarray
    sample_indices: np.ndarray
    stencil_indices: np.ndarray
    pinv: np.ndarray
    proj: np.ndarray
    U_stencil: np.ndarray
    V_stencil: np.ndarray
    sigma: np.ndarray

    @property
    def r(self):
        return self.U.shape[1]

    @property
    def n_samples(self):
        return self.sample_indices.size

    @property
    def n_stencil(self):
        return self.stencil_indices.size


def qr_sample(U, target_Np, cell_map=None):
    """Sample rows from a column-pivoted QR of ``U^T``.

    The first ``r`` pivots are always taken. Each picked row pulls in every
    row sharing its ``cell_map`` group. While fewer than ``target_Np`` rows
    are selected, further cells are added in order of decreasing leverage
    (row norm of ``U``).
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    N, r = U.shape
    if target_Np < r:
        raise InvalidArgument(f"target_Np={target_Np} is below r={r}")
    if target_Np > N:
        raise InvalidArgument(f"target_Np={target_Np} exceeds N={N}")
    groups = np.arange(N) if cell_map is None else np.asarray(cell_map)
    if groups.shape != (N,):
        raise DimensionMismatch(f"cell_map needs {N} entries")
    _, _, piv = sla.qr(U.T, mode="economic", pivoting=True)
    primary = piv[:r]
    rest = np.setdiff1d(np.arange(N), primary)
    rest = rest[np.argsort(-np.linalg.norm(U[rest], axis=1), kind="stable")]

    members = {}
    for row, g in enumerate(groups):
        members.setdefault(g, []).append(row)
    chosen_groups = []
    seen = set()
    count = 0
    for i, row in enumerate(np.concatenate([primary, rest])):
        if i >= r and count >= target_Np:
            break
        g = groups[row]
        if g in seen:
            continue
        seen.add(g)
        chosen_groups.append(g)
        count += len(members[g])
    rows = np.concatenate([members[g] for g in chosen_groups])
    return np.unique(rows)


def _pinv(M, cutoff=PINV_CUTOFF):
    W, s, Zt = np.linalg.svd(M, full_matrices=False)
    keep = s > cutoff * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    return (Zt[keep].T / s[keep]) @ W[:, keep].T, int(keep.sum())


def gappy_offline(rhs_snapshots, r, target_Np, sys, basis, sample_indices=None):
    """Build :class:`HyperData` from RHS snapshots.

    ``sys`` supplies the row grouping (``cell_map``) and the stencil closure
    (``stencil``). Pass ``sample_indices`` to skip the QR selection, e.g.
    for full sampling.
    """
    Uall, sigma = pod_build(rhs_snapshots)
    if r < 1 or r > Uall.shape[1]:
        raise RankDeficientSampling(f"r={r} but the RHS snapshots have rank {Uall.shape[1]}")
    U = Uall[:, :r]
    if basis.N != U.shape[0]:
        raise DimensionMismatch("basis and snapshots disagree on N")
    if sample_indices is None:
        sample = qr_sample(U, target_Np, sys.cell_map())
    else:
        sample = np.unique(np.asarray(sample_indices, dtype=int))
    stencil = np.unique(np.asarray(sys.stencil(sample), dtype=int))
    if not np.all(np.isin(sample, stencil)):
        raise InvalidArgument("stencil must contain every sample row")
    pinv, rank = _pinv(U[sample])
    if rank < r:
        raise RankDeficientSampling(f"sampled RHS basis has rank {rank} < r={r}")
    V = basis.V
    return HyperData(
        U=U,
        sample_indices=sample,
        stencil_indices=stencil,
        pinv=pinv,
        proj=V.T @ U,
        U_stencil=U[stencil],
        V_stencil=V[stencil],
        sigma=sigma,
    )


def gappy_reconstruct(values_at_samples, hyper):
    """U-coordinates of a field known only at the sample rows."""
    return hyper.pinv @ values_at_samples


def hyper_apg_rhs(a, sys, basis, hyper, tau, eps=1e-5):
    """Hyper-reduced APG right-hand side; ``tau = 0`` gives hyper-reduced Galerkin.

    1. restrict the state to the stencil, ``u_s = V_s a``;
    2. RHS coordinates ``a_R = pinv R(u_s)`` from the sample rows;
    3. reconstruct the RHS on the stencil, ``U_s a_R``;
    4. remove its coarse part, ``U_s a_R - V_s (V^T U) a_R``;
    5. finite-difference the sampled RHS along that direction, ``a_J``;
    6. return ``V^T U (a_R + tau a_J)``.
    """
    st = hyper.stencil_indices
    sm = hyper.sample_indices
    u_s = hyper.V_stencil @ a
    R_p = sys.rhs_rows(u_s, st, sm)
    a_R = hyper.pinv @ R_p
    if tau == 0:
        return hyper.proj @ a_R
    Rf_s = hyper.U_stencil @ a_R - hyper.V_stencil @ (hyper.proj @ a_R)
    JRf_p = (sys.rhs_rows(u_s + eps * Rf_s, st, sm) - R_p) / eps
    a_J = hyper.pinv @ JRf_p
    return hyper.proj @ (a_R + tau * a_J)


def _rows_jac_times(sys, u_s, stencil, rows, M_s):
    """``(J[u] M)[rows]`` from stencil data, by complex step when the model allows."""
    if getattr(sys, "supports_complex", False):
        return sys.rhs_rows(u_s[:, None] + 1j * _COMPLEX_STEP * M_s, stencil, rows).imag / _COMPLEX_STEP
    eps = 1e-7
    base = sys.rhs_rows(u_s, stencil, rows)
    return (sys.rhs_rows(u_s[:, None] + eps * M_s, stencil, rows) - base[:, None]) / eps


def collocated_lspg_step(a_prev, sys, basis, sample_indices, dt, scheme=Scheme.IMPLICIT_EULER, tol=1e-8, max_iter=30, return_info=False):
    """LSPG step minimising the step residual at the sample rows only."""
    scheme = Scheme(scheme)
    if not scheme.implicit:
        raise InvalidArgument("LSPG needs an implicit scheme")
    sample = np.unique(np.asarray(sample_indices, dtype=int))
    if sample.size < basis.K:
        raise RankDeficientNormalEquations(f"{sample.size} sample rows cannot fix K={basis.K} coordinates")
    stencil = np.unique(np.asarray(sys.stencil(sample), dtype=int))
    V_s = basis.V[stencil]
    V_p = basis.V[sample]
    w = _lspg_weight(scheme)
    up_s = V_s @ a_prev
    up_p = V_p @ a_prev
    R_prev = sys.rhs_rows(up_s, stencil, sample) if scheme is Scheme.CRANK_NICOLSON else 0.0

    def rw(y):
        u_s = V_s @ y
        R = sys.rhs_rows(u_s, stencil, sample)
        r = (V_p @ y - up_p) / dt - w * R - (1.0 - w) * R_prev
        W = V_p / dt - w * _rows_jac_times(sys, u_s, stencil, sample, V_s)
        return r, W

    y, info = gauss_newton(rw, a_prev, tol, max_iter)
    return (y, info) if return_info else y
