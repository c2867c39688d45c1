"""Dense float64 matrix primitives shared by the rest of the package.

Everything operates on plain 2-D ``numpy.ndarray`` values in row-major
order.  All public functions validate their inputs, never mutate them,
and keep results finite; softmax-style reductions use max-subtraction so
that small temperatures (0.07 is the default downstream) cannot
overflow.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_matrix",
    "as_vector",
    "matmul",
    "row_softmax",
    "logsumexp_rows",
    "frobenius_sq",
    "outer",
    "hadamard",
    "l2_normalize_rows",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite 2-D float64 array and return it.

    Raises ``ValueError`` if the input is not 2-D or contains NaN/Inf.
    The returned array is float64 but may share memory with the input.
    """
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Validate ``v`` as a finite 1-D float64 array and return it."""
    out = np.asarray(v, dtype=np.float64)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return tau


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with explicit dimension checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(s, tau: float) -> np.ndarray:
    """Row-wise softmax of ``s / tau``; every output row sums to one.

    Stabilized by subtracting the row maximum before exponentiation, so
    arbitrarily large logits divided by a small temperature stay finite.
    """
    s = as_matrix(s, "s")
    tau = _check_tau(tau)
    z = s / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logsumexp_rows(s, tau: float) -> np.ndarray:
    """Per row i: ``tau * log(sum_j exp(s_ij / tau))``, max-stabilized.

    Smooth upper envelope of the row maximum; as ``tau -> 0`` it
    approaches ``max_j s_ij`` from above.
    """
    s = as_matrix(s, "s")
    tau = _check_tau(tau)
    m = s.max(axis=1)
    return m + tau * np.log(np.exp((s - m[:, None]) / tau).sum(axis=1))


def frobenius_sq(a) -> float:
    """Squared Frobenius norm: the sum of squared entries."""
    a = as_matrix(a, "a")
    return float(np.sum(a * a))


def outer(u, v) -> np.ndarray:
    """Outer product ``u[i] * v[j]``."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    return np.outer(u, v)


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two same-shape matrices."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    return a * b


def l2_normalize_rows(a) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises ``ValueError`` on an exactly-zero row; the direction of such
    a row is undefined.
    """
    a = as_matrix(a, "a")
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero row")
    return a / norms[:, None]
