"""POD bases, energy truncation and the coarse/fine projectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySnapshots,
    InvalidArgument,
    InvalidCriterion,
    NonOrthonormalBlock,
    OverlappingBlocks,
)

__all__ = [
    "TrialBasis",
    "BlockLayout",
    "pod_build",
    "truncate_energy",
    "assemble_block_basis",
    "global_basis",
    "per_variable_basis",
]

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class BlockLayout:
    """Variable ``var`` occupies rows ``[row_start, row_stop)`` and ``n_cols`` columns."""

    var: int
    row_start: int
    row_stop: int
    n_cols: int


class TrialBasis:
    """Orthonormal coarse basis ``V`` (N x K) with matrix-free projectors.

    The fine-scale complement is never formed; ``fine(x)`` is ``x - V V^T x``.
    """

    def __init__(self, V, block_layout=None, singular_values=None, check=True):
        V = np.array(V, dtype=float)
        if V.ndim != 2:
            raise DimensionMismatch(f"basis must be 2-D, got shape {V.shape}")
        if V.shape[1] > V.shape[0]:
            raise DimensionMismatch(f"K={V.shape[1]} exceeds N={V.shape[0]}")
        if check:
            gram_err = np.abs(V.T @ V - np.eye(V.shape[1])).max() if V.shape[1] else 0.0
            if gram_err > ORTHO_TOL:
                raise NonOrthonormalBlock(f"columns not orthonormal (max |V^T V - I| = {gram_err:.2e})")
        V.setflags(write=False)
        self.V = V
        self.block_layout = tuple(block_layout) if block_layout is not None else None
        self.singular_values = singular_values

    @property
    def N(self):
        return self.V.shape[0]

    @property
    def K(self):
        return self.V.shape[1]

    def project(self, u):
        """Generalised coordinates ``V^T u``."""
        return self.V.T @ u

    def lift(self, a):
        """Reconstruction ``V a``."""
        return self.V @ a

    def coarse(self, x):
        return self.V @ (self.V.T @ x)

    def fine(self, x):
        return x - self.V @ (self.V.T @ x)


def pod_build(snapshots, rank_tol=1e-12):
    """Thin SVD of a snapshot matrix.

    Returns the left singular vectors and the descending singular values,
    dropping trailing directions with ``sigma <= rank_tol * sigma_1``.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.size == 0 or S.shape[1] == 0:
        raise EmptySnapshots("snapshot matrix has no columns")
    if not np.all(np.isfinite(S)):
        raise InvalidArgument("snapshot matrix has non-finite entries")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    if s[0] == 0.0:
        return U[:, :0], s[:0]
    keep = s > rank_tol * s[0]
    return U[:, keep], s[keep]


def truncate_energy(sigma, criterion):
    """Smallest K whose leading squared singular values reach ``criterion`` of the total."""
    if not 0.0 < criterion <= 1.0:
        raise InvalidCriterion(f"criterion must lie in (0, 1], got {criterion}")
    s2 = np.asarray(sigma, dtype=float) ** 2
    total = s2.sum()
    if total == 0.0:
        return 0
    if criterion == 1.0:
        return int(np.count_nonzero(s2))
    frac = np.cumsum(s2) / total
    # guard the boundary against cumulative round-off
    return int(np.searchsorted(frac, criterion * (1.0 - 1e-14)) + 1)


def assemble_block_basis(per_var_bases, N=None):
    """Block-diagonal basis from ``[(rows, V_i), ...]``.

    ``rows`` is a ``range`` or a ``(start, stop)`` pair; the blocks must not
    overlap, and if ``N`` is given they must cover ``0..N-1``.
    """
    blocks = []
    for var, (rows, Vi) in enumerate(per_var_bases):
        start, stop = (rows.start, rows.stop) if isinstance(rows, range) else (int(rows[0]), int(rows[1]))
        Vi = np.atleast_2d(np.asarray(Vi, dtype=float))
        if Vi.shape[0] != stop - start:
            raise DimensionMismatch(f"block {var}: {Vi.shape[0]} rows for range [{start}, {stop})")
        if Vi.shape[1] and np.abs(Vi.T @ Vi - np.eye(Vi.shape[1])).max() > ORTHO_TOL:
            raise NonOrthonormalBlock(f"block {var} is not orthonormal")
        blocks.append((var, start, stop, Vi))
    order = sorted(blocks, key=lambda b: b[1])
    for a, b in zip(order, order[1:]):
        if b[1] < a[2]:
            raise OverlappingBlocks(f"blocks {a[0]} and {b[0]} overlap")
    n_rows = max(b[2] for b in blocks) if N is None else N
    if N is not None:
        covered = sum(b[2] - b[1] for b in blocks)
        if covered != N or order[0][1] != 0 or order[-1][2] != N:
            raise DimensionMismatch(f"blocks do not partition {N} rows")
    K = sum(b[3].shape[1] for b in blocks)
    V = np.zeros((n_rows, K))
    layout = []
    col = 0
    for var, start, stop, Vi in blocks:
        V[start:stop, col : col + Vi.shape[1]] = Vi
        layout.append(BlockLayout(var, start, stop, Vi.shape[1]))
        col += Vi.shape[1]
    return TrialBasis(V, layout, check=False)


def per_variable_basis(snapshots, n_vars, modes=None, criterion=None):
    """Separate POD per conserved variable, assembled block-diagonally.

    Rows are taken as ``n_vars`` equal consecutive blocks. Each block keeps
    either ``modes`` columns or enough for the energy ``criterion``.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.shape[0] % n_vars:
        raise DimensionMismatch(f"{S.shape[0]} rows do not split into {n_vars} variables")
    if (modes is None) == (criterion is None):
        raise InvalidArgument("give exactly one of modes or criterion")
    n = S.shape[0] // n_vars
    parts, sigmas = [], []
    for v in range(n_vars):
        rows = range(v * n, (v + 1) * n)
        U, s = pod_build(S[v * n : (v + 1) * n])
        k = truncate_energy(s, criterion) if criterion is not None else int(modes)
        if k > U.shape[1]:
            raise InvalidArgument(f"variable {v}: asked for {k} modes, rank is {U.shape[1]}")
        parts.append((rows, U[:, :k]))
        sigmas.append(s)
    basis = assemble_block_basis(parts, N=S.shape[0])
    return TrialBasis(basis.V, basis.block_layout, singular_values=sigmas, check=False)


def global_basis(snapshots, modes=None, criterion=None):
    """Single POD over all rows."""
    if (modes is None) == (criterion is None):
        raise InvalidArgument("give exactly one of modes or criterion")
    U, s = pod_build(snapshots)
    k = truncate_energy(s, criterion) if criterion is not None else int(modes)
    if k > U.shape[1]:
        raise InvalidArgument(f"asked for {k} modes, rank is {U.shape[1]}")
    return TrialBasis(U[:, :k], singular_values=s, check=False)
