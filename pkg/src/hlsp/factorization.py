"""Rank-revealing QR kernels and null-space bases.

Q factors are never formed explicitly; they are kept as sequences of
elementary Householder reflections and Givens rotations that can be applied
to vectors or matrices. The staged factorization reuses a constant bottom
block that was factorized once and only refactorizes the rows stacked on
top of it, eliminating sparse columns by Givens rotations when their
density is below a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

DEFAULT_RANK_TOL = 1e-10
DEFAULT_DENSITY_THRESHOLD = 0.4


class OrthoTransform:
    """Product of elementary orthogonal row operations.

    Operations are stored in application order for Q^T. Applying Q itself
    runs them backwards (each elementary factor is its own inverse up to
    the sign convention of the Givens rotation).
    """

    def __init__(self, m):
        self.m = m
        self.ops = []

    def add_householder(self, rows, v, tau):
        self.ops.append(("h", rows, v, tau))

    def add_givens(self, i, k, c, s):
        self.ops.append(("g", i, k, c, s))

    def _apply_householder(self, b, rows, v, tau):
        sub = b[rows]
        b[rows] = sub - np.outer(tau * v, v @ sub)

    def _apply_givens(self, b, i, k, c, s):
        bi = b[i].copy()
        bk = b[k]
        b[i] = c * bi - s * bk
        b[k] = s * bi + c * bk

    def apply_transpose(self, b):
        """Return Q^T b for a vector or matrix with m rows."""
        out = np.atleast_2d(np.asarray(b, dtype=float).copy())
        was_vec = np.asarray(b).ndim == 1
        if was_vec:
            out = out.T
        for op in self.ops:
            if op[0] == "h":
                self._apply_householder(out, op[1], op[2], op[3])
            else:
                self._apply_givens(out, op[1], op[2], op[3], op[4])
        return out[:, 0] if was_vec else out

    def apply(self, b):
        """Return Q b for a vector or matrix with m rows."""
        out = np.atleast_2d(np.asarray(b, dtype=float).copy())
        was_vec = np.asarray(b).ndim == 1
        if was_vec:
            out = out.T
        for op in reversed(self.ops):
            if op[0] == "h":
                self._apply_householder(out, op[1], op[2], op[3])
            else:
                # transpose of the rotation: flip the sign of s
                self._apply_givens(out, op[1], op[2], op[3], -op[4])
        return out[:, 0] if was_vec else out


def _householder_vector(x):
    """Reflection (v, tau, beta) with (I - tau v v^T) x = beta e1, or None."""
    normx = np.linalg.norm(x)
    if normx == 0.0:
        return None
    beta = -np.copysign(normx, x[0]) if x[0] != 0.0 else -normx
    v = x.astype(float).copy()
    v[0] -= beta
    tau = 2.0 / (v @ v)
    return v, tau, beta


def _givens_pair(a, b):
    """Rotation (c, s, r) with [c -s; s c] @ [a, b] = [r, 0]."""
    r = np.hypot(a, b)
    if r == 0.0:
        return 1.0, 0.0, 0.0
    return a / r, -b / r, r


@dataclass
class Rrqr:
    """Column-pivoted Householder QR with rank detection.

    A @ P = Q @ [[R, T], [0, 0]]. ``perm`` holds the pivot order: column j
    of A @ P is A[:, perm[j]]. ``rank`` counts the diagonal entries of R
    that survived the relative tolerance against the largest initial
    column norm.
    """

    q: OrthoTransform
    r: np.ndarray
    t: np.ndarray
    perm: np.ndarray
    rank: int
    tol: float
    shape: tuple
    scale: float

    @property
    def ncols(self):
        return self.shape[1]

    def reconstruct(self):
        m, k = self.shape
        block = np.zeros((m, k))
        block[: self.rank, : self.rank] = self.r
        block[: self.rank, self.rank :] = self.t
        full = self.q.apply(block)
        out = np.empty_like(full)
        out[:, self.perm] = full
        return out

    def solve_basic(self, rhs):
        """Basic least-squares solution: permuted free variables at zero.

        Accepts a vector or a matrix of stacked right-hand sides.
        """
        m, k = self.shape
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != m:
            raise ValueError(f"rhs length {rhs.shape[0]} != row count {m}")
        x = np.zeros((k,) + rhs.shape[1:])
        if self.rank == 0:
            return x
        c = self.q.apply_transpose(rhs)[: self.rank]
        y = solve_triangular(self.r, c)
        x[self.perm[: self.rank]] = y
        return x

    def residual_norm(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if self.shape[0] == 0:
            return 0.0
        c = self.q.apply_transpose(rhs)
        return float(np.linalg.norm(c[self.rank :]))

    def solve_transpose_basic(self, c):
        """Basic solution of (A P)^T-shaped system A^T lam = c.

        Forward-substitutes R^T over the leading ``rank`` permuted
        components of c; the orthogonal complement of the row space is
        left at zero.
        """
        m, _ = self.shape
        lam = np.zeros(m)
        if self.rank == 0:
            return lam
        c = np.asarray(c, dtype=float)
        c1 = c[self.perm[: self.rank]]
        y = solve_triangular(self.r, c1, trans="T")
        padded = np.zeros(m)
        padded[: self.rank] = y
        return self.q.apply(padded)


def rrqr(matrix, tol=DEFAULT_RANK_TOL, counter=None):
    """Column-pivoted Householder QR with greedy max-norm pivoting.

    Rank is the number of pivots whose remaining column norm exceeds
    ``tol`` times the largest initial column norm. Empty inputs yield
    rank 0.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    m, k = a.shape
    work = a.copy()
    perm = np.arange(k)
    q = OrthoTransform(m)
    scale = 0.0
    if m > 0 and k > 0:
        scale = float(np.max(np.linalg.norm(work, axis=0)))
    rank = 0
    for j in range(min(m, k)):
        norms = np.linalg.norm(work[j:, j:], axis=0)
        p = int(np.argmax(norms))
        if norms[p] <= tol * scale:
            break
        if p != 0:
            work[:, [j, j + p]] = work[:, [j + p, j]]
            perm[[j, j + p]] = perm[[j + p, j]]
        hh = _householder_vector(work[j:, j])
        if hh is None:
            break
        v, tau, beta = hh
        rows = np.arange(j, m)
        q.add_householder(rows, v, tau)
        work[j:, j:] -= np.outer(tau * v, v @ work[j:, j:])
        work[j, j] = beta
        work[j + 1 :, j] = 0.0
        rank += 1
    if counter is not None:
        counter.count_factorization(m, k)
    return Rrqr(
        q=q,
        r=work[:rank, :rank].copy(),
        t=work[:rank, rank:].copy(),
        perm=perm,
        rank=rank,
        tol=tol,
        shape=(m, k),
        scale=scale,
    )


def nullspace_basis(f: Rrqr):
    """Non-orthogonal null-space basis Z = P [[-R^-1 T], [I]].

    A @ Z vanishes to factorization accuracy and the identity block makes
    the columns structurally independent. Full-rank input yields a k x 0
    matrix.
    """
    k = f.ncols
    nr = k - f.rank
    bracket = np.zeros((k, nr))
    if f.rank > 0 and nr > 0:
        bracket[: f.rank, :] = -solve_triangular(f.r, f.t)
    if nr > 0:
        bracket[f.rank :, :] = np.eye(nr)
    z = np.zeros((k, nr))
    z[f.perm] = bracket
    return z


@dataclass
class ColumnElimination:
    """Transform choice for zeroing the subdiagonal of one column."""

    kind: str  # "givens_sequence" | "householder"
    transform: OrthoTransform
    head: float

    def apply_transpose(self, b):
        return self.transform.apply_transpose(b)


def sparse_column_elimination(column, density, threshold=DEFAULT_DENSITY_THRESHOLD):
    """Pick and build the transform that zeros column[1:] against column[0].

    Givens rotations touch only the nonzero entries and are selected iff
    ``density`` is strictly below ``threshold``; otherwise a single
    Householder reflection treats the column as dense. Both choices are
    orthogonal and numerically equivalent.
    """
    col = np.asarray(column, dtype=float)
    m = col.shape[0]
    ops = OrthoTransform(m)
    kind = "givens_sequence" if density < threshold else "householder"
    work = col.copy()
    if m > 1:
        if kind == "givens_sequence":
            for i in range(1, m):
                if work[i] == 0.0:
                    continue
                c, s, r = _givens_pair(work[0], work[i])
                ops.add_givens(0, i, c, s)
                work[0] = r
                work[i] = 0.0
        else:
            hh = _householder_vector(work)
            if hh is not None:
                v, tau, beta = hh
                ops.add_householder(np.arange(m), v, tau)
                work[0] = beta
                work[1:] = 0.0
    return ColumnElimination(kind=kind, transform=ops, head=float(work[0]))


@dataclass
class StagedFactorization:
    """Three-stage RRQR of a stack [B; A] over a prefactorized A.

    Stage 1 is the retained factorization of the constant block A. Stage 2
    eliminates B against the triangular stage-1 factor column by column,
    skipping the structural zeros below the diagonal; stage 3 is a
    column-pivoted RRQR of the remaining block. Columns are eliminated by
    Givens rotations while their tracked density stays below the
    threshold.
    """

    stage1: Rrqr
    stage23: OrthoTransform
    triangular: np.ndarray  # combined (r1 + r3) x (r1 + r3) upper block
    free_block: np.ndarray  # columns beyond the combined rank
    col_order: np.ndarray
    rank: int
    rank3: int
    m_top: int
    shape: tuple
    givens_columns: int = 0
    householder_columns: int = 0

    def solve_basic(self, rhs_top, rhs_bottom):
        """Basic LS solution of [B; A] x = [rhs_top; rhs_bottom]."""
        r1 = self.stage1.rank
        k = self.shape[1]
        rhs_bottom = np.asarray(rhs_bottom, dtype=float)
        rhs_top = np.asarray(rhs_top, dtype=float)
        c_a = self.stage1.q.apply_transpose(rhs_bottom) if rhs_bottom.size else rhs_bottom
        stacked = np.concatenate([c_a[:r1], rhs_top])
        d = self.stage23.apply_transpose(stacked) if stacked.size else stacked
        x = np.zeros(k)
        if self.rank > 0:
            y = solve_triangular(self.triangular, d[: self.rank])
            x[self.col_order[: self.rank]] = y
        return x

    def residual_norm(self, rhs_top, rhs_bottom):
        r1 = self.stage1.rank
        rhs_bottom = np.asarray(rhs_bottom, dtype=float)
        rhs_top = np.asarray(rhs_top, dtype=float)
        tail = 0.0
        if rhs_bottom.size:
            c_a = self.stage1.q.apply_transpose(rhs_bottom)
            tail = float(np.sum(c_a[r1:] ** 2))
        else:
            c_a = rhs_bottom
        stacked = np.concatenate([c_a[:r1], rhs_top])
        d = self.stage23.apply_transpose(stacked) if stacked.size else stacked
        return float(np.sqrt(tail + np.sum(d[self.rank :] ** 2)))


def staged_rrqr(
    b_block,
    stage1: Rrqr,
    density_threshold=DEFAULT_DENSITY_THRESHOLD,
    tol=DEFAULT_RANK_TOL,
    counter=None,
):
    """Factorize the stack [B; A] reusing the retained RRQR of A.

    ``b_block`` rows sit on top of the already factorized constant block.
    Per-column density (nonzeros over rows still to eliminate) picks the
    Givens path below the threshold and a dense Householder reflection at
    or above it.
    """
    b = np.asarray(b_block, dtype=float)
    if b.ndim != 2:
        raise ValueError("expected a 2-d B block")
    m_b, k = b.shape
    if k != stage1.ncols:
        raise ValueError(
            f"B has {k} columns but the constant block was factorized with "
            f"{stage1.ncols}"
        )
    r1 = stage1.rank
    # rows 0..r1-1 hold the triangular stage-1 factor, rows r1.. hold B
    work = np.zeros((r1 + m_b, k))
    work[:r1, :r1] = stage1.r
    work[:r1, r1:] = stage1.t
    if m_b:
        work[r1:, :] = b[:, stage1.perm]
    ops = OrthoTransform(r1 + m_b)
    givens_cols = 0
    householder_cols = 0

    def eliminate(pivot, col, lo):
        """Zero work[lo:, col] against work[pivot, col] in place."""
        nonlocal givens_cols, householder_cols
        sub = work[lo:, col]
        nnz = int(np.count_nonzero(sub))
        if nnz == 0:
            return
        density = nnz / sub.shape[0]
        if density < density_threshold:
            givens_cols += 1
            for off in np.nonzero(sub)[0]:
                i = lo + off
                c, s, r = _givens_pair(work[pivot, col], work[i, col])
                ops.add_givens(pivot, i, c, s)
                rowp = work[pivot, col:].copy()
                rowi = work[i, col:]
                work[pivot, col:] = c * rowp - s * rowi
                work[i, col:] = s * rowp + c * rowi
                work[pivot, col] = r
                work[i, col] = 0.0
        else:
            householder_cols += 1
            rows = np.concatenate([[pivot], np.arange(lo, r1 + m_b)])
            x = work[rows, col]
            hh = _householder_vector(x)
            if hh is None:
                return
            v, tau, beta = hh
            ops.add_householder(rows, v, tau)
            block = work[np.ix_(rows, np.arange(col, k))]
            block -= np.outer(tau * v, v @ block)
            work[np.ix_(rows, np.arange(col, k))] = block
            work[pivot, col] = beta
            work[lo:, col] = 0.0

    # stage 2: per column, only the B rows below the triangular pivot carry
    # nonzeros, so the structural zeros of the stage-1 factor are skipped
    if m_b:
        for j in range(r1):
            eliminate(j, j, r1)

    # stage 3: column-pivoted elimination of the remaining bottom-right block
    pi = np.arange(k - r1)
    rank3 = 0
    if m_b and k > r1:
        scale3 = float(np.max(np.linalg.norm(work[r1:, r1:], axis=0)))
        for j in range(min(m_b, k - r1)):
            col = r1 + j
            row = r1 + j
            norms = np.linalg.norm(work[row:, col:], axis=0)
            p = int(np.argmax(norms))
            if norms[p] <= tol * scale3 or scale3 == 0.0:
                break
            if p != 0:
                work[:, [col, col + p]] = work[:, [col + p, col]]
                pi[[j, j + p]] = pi[[j + p, j]]
            eliminate(row, col, row + 1)
            rank3 += 1

    rank = r1 + rank3
    col_order = np.concatenate([stage1.perm[:r1], stage1.perm[r1:][pi]]).astype(int)
    if counter is not None:
        counter.count_factorization(m_b, k)
    return StagedFactorization(
        stage1=stage1,
        stage23=ops,
        triangular=work[:rank, :rank].copy(),
        free_block=work[:rank, rank:].copy(),
        col_order=col_order,
        rank=rank,
        rank3=rank3,
        m_top=m_b,
        shape=(m_b + stage1.shape[0], k),
        givens_columns=givens_cols,
        householder_columns=householder_cols,
    )


def ls_basic_solution(f, rhs):
    """Basic least-squares solution through a plain or staged factorization.

    For a staged factorization the rhs is split as [top; bottom] in the
    stacking order of the factorized rows.
    """
    if isinstance(f, StagedFactorization):
        rhs = np.asarray(rhs, dtype=float)
        m_b = f.m_top
        return f.solve_basic(rhs[:m_b], rhs[m_b:])
    return f.solve_basic(rhs)


def rrqr_append_row(fact: Rrqr, row, tol=None):
    """Extend a factorization by one bottom row via Givens updates.

    The existing pivot order is kept; if the appended row is independent
    of the current range, the strongest leftover entry becomes a new
    pivot. The result satisfies the same reconstruction contract as a
    fresh factorization but its pivots are no longer globally greedy.
    """
    row = np.asarray(row, dtype=float)
    m, k = fact.shape
    if row.shape[0] != k:
        raise ValueError(f"row length {row.shape[0]} != column count {k}")
    tol = fact.tol if tol is None else tol
    q = OrthoTransform(m + 1)
    q.ops = list(fact.q.ops)
    r = np.zeros((fact.rank, fact.rank))
    r[:, :] = fact.r
    t = fact.t.copy()
    perm = fact.perm.copy()
    u = row[perm].copy()
    scale = max(fact.scale, float(np.max(np.abs(row))) if k else 0.0)
    rank = fact.rank
    for j in range(rank):
        if u[j] == 0.0:
            continue
        c, s, rj = _givens_pair(r[j, j], u[j])
        q.add_givens(j, m, c, s)
        rj_row = np.concatenate([r[j, j:], t[j, :]])
        u_row = u[j:].copy()
        new_rj = c * rj_row - s * u_row
        new_u = s * rj_row + c * u_row
        r[j, j:] = new_rj[: rank - j]
        t[j, :] = new_rj[rank - j :]
        u[j:] = new_u
        r[j, j] = rj
        u[j] = 0.0
    leftover = u[rank:]
    if leftover.size and np.max(np.abs(leftover)) > tol * scale:
        p = int(np.argmax(np.abs(leftover)))
        if p != 0:
            t[:, [0, p]] = t[:, [p, 0]]
            perm[[rank, rank + p]] = perm[[rank + p, rank]]
            leftover[[0, p]] = leftover[[p, 0]]
        if rank < m:
            # the new pivot row lives in the appended physical row; rotate
            # it into triangular slot ``rank`` (picks up a sign flip)
            q.add_givens(rank, m, 0.0, 1.0)
            leftover = -leftover
        new_r = np.zeros((rank + 1, rank + 1))
        new_r[:rank, :rank] = r
        new_r[:rank, rank] = t[:, 0]
        new_r[rank, rank] = leftover[0]
        new_t = np.zeros((rank + 1, max(k - rank - 1, 0)))
        new_t[:rank, :] = t[:, 1:]
        new_t[rank, :] = leftover[1:]
        r = new_r
        t = new_t
        rank += 1
    return Rrqr(
        q=q,
        r=r,
        t=t,
        perm=perm,
        rank=rank,
        tol=tol,
        shape=(m + 1, k),
        scale=scale,
    )
