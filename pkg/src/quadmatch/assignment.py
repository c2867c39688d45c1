"""Assignment solvers and matching-level objectives.

The hard combinatorial side of the package: an exact maximum-score
linear assignment (Hungarian) with a deterministic lexicographic
tie-break, an entropic doubly-stochastic relaxation (Sinkhorn), the
quadratic assignment objective, and the structured / smoothed
assignment losses used to train and verify the contrastive pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .numcore import as_matrix, logsumexp_rows

__all__ = [
    "Assignment",
    "hungarian",
    "sinkhorn",
    "qap_objective",
    "structured_linear_loss",
    "smoothed_linear_loss",
    "matching_accuracy",
]


@dataclass(frozen=True)
class Assignment:
    """A hard n-to-m matching: 0/1 matrix, one match per row.

    Every row sums to exactly one and every column to at most one, so
    unmatched columns are allowed when ``n < m``.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"assignment must be 2-D, got shape {m.shape}")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("assignment entries must be 0 or 1")
        if not np.all(m.sum(axis=1) == 1.0):
            raise ValueError("every assignment row must sum to 1")
        if np.any(m.sum(axis=0) > 1.0):
            raise ValueError("assignment columns must sum to at most 1")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def cols(self) -> np.ndarray:
        """Matched column index per row."""
        return np.argmax(self.matrix, axis=1)

    @classmethod
    def from_cols(cls, cols, n_cols: int) -> "Assignment":
        cols = np.asarray(cols, dtype=np.int64)
        m = np.zeros((cols.size, int(n_cols)))
        m[np.arange(cols.size), cols] = 1.0
        return cls(m)

    @classmethod
    def identity(cls, n: int) -> "Assignment":
        return cls(np.eye(n))


def hungarian(similarity) -> Assignment:
    """Maximum-total-similarity assignment over rows of ``similarity``.

    Requires ``n <= m``; every row gets matched, columns may stay free.
    Among equally scoring optima, the returned assignment is the
    lexicographically smallest column sequence (row 0 takes the lowest
    feasible column, then row 1, and so on).
    """
    s = as_matrix(similarity, "similarity")
    n, m = s.shape
    if n > m:
        raise ValueError(f"need n <= m, got {n}x{m}")
    rows, cols = linear_sum_assignment(s, maximize=True)
    best = float(s[rows, cols].sum())
    fixed = _lexicographic_refit(s, best)
    if fixed is None:
        # Tolerance starvation; keep the solver's own optimal matching.
        fixed = cols
    return Assignment.from_cols(fixed, m)


def _lexicographic_refit(s: np.ndarray, best: float) -> np.ndarray | None:
    """Rebuild an optimal assignment choosing the lowest column per row.

    Fixes rows top-down; a column is accepted if forcing it still allows
    the remaining rows to reach the optimal total.  Ties in ``best`` are
    resolved toward low column indices, which makes the solver output
    independent of scipy's internal traversal order.
    """
    n, m = s.shape
    tol = 1e-9 * max(1.0, abs(best))
    chosen = np.empty(n, dtype=np.int64)
    used = np.zeros(m, dtype=bool)
    prefix = 0.0
    for i in range(n):
        accepted = False
        for j in range(m):
            if used[j]:
                continue
            cand = prefix + s[i, j]
            if i + 1 < n:
                free = ~used
                free[j] = False
                sub = s[i + 1 :, free]
                rr, cc = linear_sum_assignment(sub, maximize=True)
                cand += float(sub[rr, cc].sum())
            if cand >= best - tol:
                chosen[i] = j
                used[j] = True
                prefix += s[i, j]
                accepted = True
                break
        if not accepted:
            return None
    return chosen


def sinkhorn(similarity, iterations: int, epsilon: float) -> np.ndarray:
    """Doubly-stochastic relaxation of a square similarity matrix.

    Alternately row- and column-normalizes ``exp(similarity / epsilon)``
    for at most ``iterations`` rounds, stopping early once both marginal
    residuals fall below 1e-9.  The global maximum is subtracted before
    exponentiation, which also makes the result invariant to adding a
    constant to the input.
    """
    s = as_matrix(similarity, "similarity")
    n, m = s.shape
    if n != m:
        raise ValueError(f"sinkhorn needs a square matrix, got {n}x{m}")
    iterations = int(iterations)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    epsilon = float(epsilon)
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    k = np.exp((s - s.max()) / epsilon)
    k = np.maximum(k, 1e-300)  # guard against fully underflowed rows
    for _ in range(iterations):
        k = k / k.sum(axis=1, keepdims=True)
        k = k / k.sum(axis=0, keepdims=True)
        row_res = np.abs(k.sum(axis=1) - 1.0).max()
        col_res = np.abs(k.sum(axis=0) - 1.0).max()
        if row_res < 1e-9 and col_res < 1e-9:
            break
    return k


def qap_objective(y: Assignment, f_a, f_b, s) -> float:
    """Quadratic edge affinity plus linear node affinity of a matching.

    ``trace(Y^T F_A Y F_B) + trace(S^T Y)`` for adjacency matrices
    ``F_A`` (n x n), ``F_B`` (m x m) and node similarity ``S`` (n x m).
    """
    f_a = as_matrix(f_a, "f_a")
    f_b = as_matrix(f_b, "f_b")
    s = as_matrix(s, "s")
    ym = y.matrix
    n, m = ym.shape
    if f_a.shape != (n, n):
        raise ValueError(f"f_a must be {n}x{n}, got {f_a.shape}")
    if f_b.shape != (m, m):
        raise ValueError(f"f_b must be {m}x{m}, got {f_b.shape}")
    if s.shape != (n, m):
        raise ValueError(f"s must be {n}x{m}, got {s.shape}")
    quad = float(np.trace(ym.T @ f_a @ ym @ f_b))
    lin = float(np.trace(s.T @ ym))
    return quad + lin


def _assignment_score(s: np.ndarray, y: Assignment) -> float:
    """``trace(S Y^T)``: the total similarity collected by a matching."""
    return float(np.sum(s * y.matrix))


def structured_linear_loss(s, y_gt: Assignment) -> float:
    """Gap between the best achievable matching score and the annotated one.

    Computes ``max_Y trace(S Y^T) - trace(S Y_gt^T)`` with the max taken
    exactly by the Hungarian solver.  Nonnegative; zero exactly when the
    annotation is already an optimal assignment for ``S``.
    """
    s = as_matrix(s, "s")
    if s.shape != y_gt.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {y_gt.shape}")
    best = _assignment_score(s, hungarian(s))
    value = best - _assignment_score(s, y_gt)
    # The max dominates mathematically; clamp float dust from ties.
    return value if value > 0.0 else 0.0


def smoothed_linear_loss(s, y_gt: Assignment, tau: float) -> float:
    """Log-sum-exp smoothing of the structured assignment loss.

    ``-sum_{(i,j) in Y_gt} S_ij + sum_i tau*log(sum_j exp(S_ij/tau))``.
    The hard row-max of the structured loss is replaced by its smooth
    envelope, so the loss is differentiable in ``S``.
    """
    s = as_matrix(s, "s")
    if s.shape != y_gt.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {y_gt.shape}")
    gt_cols = y_gt.cols
    gt_score = float(sum(s[i, gt_cols[i]] for i in range(s.shape[0])))
    return -gt_score + float(logsumexp_rows(s, tau).sum())


def matching_accuracy(y_pred: Assignment, y_gt: Assignment) -> float:
    """Fraction of rows whose predicted column equals the annotated one."""
    if y_pred.shape != y_gt.shape:
        raise ValueError(f"shape mismatch: {y_pred.shape} vs {y_gt.shape}")
    return float(np.mean(y_pred.cols == y_gt.cols))
