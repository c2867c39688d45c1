"""Contrastive and consistency losses with closed-form gradients.

All losses operate on two aligned embedding matrices ``p_a`` and
``p_b`` of shape ``(n, d)`` whose rows correspond: row ``i`` of one
matrix is the positive partner of row ``i`` of the other.  Gradients
are derived analytically (no autodiff anywhere in the package) and are
exercised against finite differences in the test-suite.

Three building blocks combine into the quadratic objective:

* a symmetric InfoNCE term on the cross-similarity ``S = p_a p_b^T``,
* a within-graph consistency term ``||p_a p_a^T - p_b p_b^T||_F^2``,
* a cross-graph consistency term ``||S - S^T||_F^2``.

The robust variants blend the InfoNCE labels with soft targets from a
momentum teacher and down-weight the consistency residuals with
teacher-derived per-edge confidences, which is what makes training
tolerate corrupted keypoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import _check_tau, as_matrix, hadamard, outer, row_softmax

__all__ = [
    "LossConfig",
    "LossReport",
    "alignment_cross_entropy",
    "infonce",
    "infonce_grad",
    "within_consistency",
    "within_consistency_grad",
    "cross_consistency",
    "cross_consistency_grad",
    "quadratic_loss",
    "node_confidence",
    "edge_confidence",
    "robust_infonce",
    "robust_infonce_grad",
    "robust_graph",
    "robust_graph_parts",
    "robust_graph_grad",
    "robust_quadratic",
]


@dataclass(frozen=True)
class LossConfig:
    """Hyper-parameters shared by the loss family.

    ``alpha`` is the *ceiling* of the teacher-blend coefficient; the
    momentum trainer ramps the live value from zero up to it.
    """

    tau: float = 0.07
    alpha: float = 0.4
    within_weight: float = 1.0
    cross_weight: float = 1.0

    def __post_init__(self):
        _check_tau(self.tau)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.within_weight < 0.0 or self.cross_weight < 0.0:
            raise ValueError("consistency weights must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    """Loss value broken into its terms, plus embedding gradients.

    ``infonce``/``distill``/``within``/``cross`` are the individual
    terms exactly as they enter ``total`` (the consistency terms carry
    the edge-confidence weighting in the robust path).  Gradients are
    with respect to ``p_a`` and ``p_b``; teacher inputs are constants.
    """

    total: float
    infonce: float
    within: float
    cross: float
    distill: float = 0.0
    grad_pa: np.ndarray | None = field(default=None, repr=False)
    grad_pb: np.ndarray | None = field(default=None, repr=False)


def _paired(p_a, p_b) -> tuple[np.ndarray, np.ndarray]:
    a = as_matrix(p_a, "p_a")
    b = as_matrix(p_b, "p_b")
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return a, b


def alignment_cross_entropy(s, tau: float) -> float:
    """Mean cross-entropy of row-softmaxed ``s`` against its diagonal.

    ``-(1/n) * sum_i log softmax(s_i / tau)_i`` -- one direction of the
    InfoNCE objective, written on an arbitrary similarity matrix.
    Requires a square input so the diagonal is the positive class.
    """
    s = as_matrix(s, "s")
    n, m = s.shape
    if n != m:
        raise ValueError(f"need a square similarity matrix, got {n}x{m}")
    p = row_softmax(s, tau)
    return float(-np.mean(np.log(np.diag(p))))


def infonce(p_a, p_b, tau: float) -> float:
    """Symmetric InfoNCE between two aligned embedding matrices.

    Cross-entropy of ``softmax(p_a p_b^T / tau)`` rows against the
    identity, averaged over rows, summed over both directions.
    """
    a, b = _paired(p_a, p_b)
    s = a @ b.T
    return alignment_cross_entropy(s, tau) + alignment_cross_entropy(s.T, tau)


def infonce_grad(p_a, p_b, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`infonce` with respect to both inputs."""
    a, b = _paired(p_a, p_b)
    _check_tau(tau)
    n = a.shape[0]
    s = a @ b.T
    rho = row_softmax(s, tau)        # row play: a-rows classify b-rows
    rho_t = row_softmax(s.T, tau)    # column play, on the transpose
    eye = np.eye(n)
    g_s = ((rho - eye) + (rho_t - eye).T) / (n * tau)
    return g_s @ b, g_s.T @ a


def within_consistency(p_a, p_b) -> float:
    """Squared Frobenius gap of the two self-similarity (Gram) matrices."""
    a, b = _paired(p_a, p_b)
    d = a @ a.T - b @ b.T
    return float(np.sum(d * d))


def within_consistency_grad(p_a, p_b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _paired(p_a, p_b)
    d = a @ a.T - b @ b.T  # symmetric
    return 4.0 * d @ a, -4.0 * d @ b


def cross_consistency(p_a, p_b) -> float:
    """Asymmetry of the cross-similarity: ``||S - S^T||_F^2``."""
    a, b = _paired(p_a, p_b)
    s = a @ b.T
    c = s - s.T
    return float(np.sum(c * c))


def cross_consistency_grad(p_a, p_b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _paired(p_a, p_b)
    s = a @ b.T
    c = s - s.T  # antisymmetric
    return 4.0 * c @ b, -4.0 * c @ a


def quadratic_loss(p_a, p_b, config: LossConfig) -> LossReport:
    """InfoNCE plus weighted within- and cross-graph consistency.

    The clean-data objective: no teacher, no confidence weighting.
    Component values in the report are stored unweighted except through
    ``total``.
    """
    a, b = _paired(p_a, p_b)
    nce = infonce(a, b, config.tau)
    win = within_consistency(a, b)
    crs = cross_consistency(a, b)
    g_nce_a, g_nce_b = infonce_grad(a, b, config.tau)
    g_win_a, g_win_b = within_consistency_grad(a, b)
    g_crs_a, g_crs_b = cross_consistency_grad(a, b)
    ww, wc = config.within_weight, config.cross_weight
    return LossReport(
        total=nce + ww * win + wc * crs,
        infonce=nce,
        within=win,
        cross=crs,
        grad_pa=g_nce_a + ww * g_win_a + wc * g_crs_a,
        grad_pb=g_nce_b + ww * g_win_b + wc * g_crs_b,
    )


def node_confidence(p_hat_a, p_hat_b, tau: float, mode: str = "softmax") -> np.ndarray:
    """Per-keypoint reliability scores from teacher embeddings.

    A keypoint is trusted when the teacher cross-similarity
    ``p_hat_a p_hat_b^T`` concentrates on the diagonal in both its row
    and its column, which corrupted keypoints fail to do.

    ``mode='softmax'`` averages the diagonal of the row- and
    column-softmaxed similarity (always in ``(0, 1)``).
    ``mode='raw'`` instead uses the plain ratio of the diagonal entry
    to its row/column sum, clipped into ``[0, 1]``; it needs sums
    bounded away from zero and is mainly of diagnostic interest.
    """
    a, b = _paired(p_hat_a, p_hat_b)
    s = a @ b.T
    if mode == "softmax":
        row = np.diag(row_softmax(s, tau))
        col = np.diag(row_softmax(s.T, tau))
        return 0.5 * (row + col)
    if mode == "raw":
        row_sum = s.sum(axis=1)
        col_sum = s.sum(axis=0)
        if np.any(np.abs(row_sum) < 1e-12) or np.any(np.abs(col_sum) < 1e-12):
            raise ValueError("raw confidence undefined: similarity sums near zero")
        ratio = 0.5 * (np.diag(s) / row_sum + np.diag(s) / col_sum)
        return np.clip(ratio, 0.0, 1.0)
    raise ValueError(f"unknown confidence mode: {mode!r}")


def edge_confidence(scores) -> np.ndarray:
    """Pairwise edge weights: the outer product of node confidences."""
    return outer(scores, scores)


def robust_infonce(p_a, p_b, p_hat_a, p_hat_b, tau: float, alpha: float) -> float:
    """InfoNCE with labels partially soft-relabelled by a teacher.

    ``(1 - alpha)`` of the usual identity-target term plus ``alpha``
    of the cross-entropy against the teacher's own softmaxed similarity
    rows, in both directions.  ``alpha = 0`` recovers :func:`infonce`.
    """
    a, b = _paired(p_a, p_b)
    ta, tb = _paired(p_hat_a, p_hat_b)
    if ta.shape != a.shape:
        raise ValueError(f"teacher shape {ta.shape} != student shape {a.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    hard = infonce(a, b, tau)
    s = a @ b.T
    s_hat = ta @ tb.T
    soft = _soft_cross_entropy(row_softmax(s_hat, tau), s, tau)
    soft += _soft_cross_entropy(row_softmax(s_hat.T, tau), s.T, tau)
    return (1.0 - alpha) * hard + alpha * soft


def _soft_cross_entropy(targets: np.ndarray, s: np.ndarray, tau: float) -> float:
    """Row-mean cross-entropy of ``softmax(s/tau)`` against fixed targets."""
    logq = np.log(row_softmax(s, tau))
    return float(-np.mean(np.sum(targets * logq, axis=1)))


def robust_infonce_grad(
    p_a, p_b, p_hat_a, p_hat_b, tau: float, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`robust_infonce` w.r.t. the student embeddings."""
    a, b = _paired(p_a, p_b)
    ta, tb = _paired(p_hat_a, p_hat_b)
    _check_tau(tau)
    n = a.shape[0]
    s = a @ b.T
    s_hat = ta @ tb.T
    rho = row_softmax(s, tau)
    rho_t = row_softmax(s.T, tau)
    eye = np.eye(n)
    g_hard = ((rho - eye) + (rho_t - eye).T) / (n * tau)
    t_row = row_softmax(s_hat, tau)
    t_col = row_softmax(s_hat.T, tau)
    g_soft = ((rho - t_row) + (rho_t - t_col).T) / (n * tau)
    g_s = (1.0 - alpha) * g_hard + alpha * g_soft
    return g_s @ b, g_s.T @ a


def _edge_weight_matrix(edge_weights, n: int) -> np.ndarray:
    """Validate a confidence-weight matrix: square, matching, symmetric.

    Symmetry is structural (weights come from node-score outer
    products) and the closed-form gradients below rely on it, so an
    asymmetric matrix is a caller bug worth failing loudly on.
    """
    w = as_matrix(edge_weights, "edge_weights")
    if w.shape != (n, n):
        raise ValueError(f"edge_weights must be {n}x{n}, got {w.shape}")
    if not np.allclose(w, w.T, rtol=1e-12, atol=1e-12):
        raise ValueError("edge_weights must be symmetric")
    return w


def robust_graph_parts(p_a, p_b, edge_weights) -> tuple[float, float]:
    """Confidence-weighted within- and cross-consistency residuals.

    Returns ``(||W o (p_a p_a^T - p_b p_b^T)||_F^2,
    ||W o (S - S^T)||_F^2)`` where ``o`` is the elementwise product and
    ``W`` is treated as a constant.  With ``W`` all ones this equals
    the unweighted consistency pair.
    """
    a, b = _paired(p_a, p_b)
    w = _edge_weight_matrix(edge_weights, a.shape[0])
    d = a @ a.T - b @ b.T
    s = a @ b.T
    c = s - s.T
    wd = hadamard(w, d)
    wc = hadamard(w, c)
    return float(np.sum(wd * wd)), float(np.sum(wc * wc))


def robust_graph(p_a, p_b, edge_weights) -> float:
    """Sum of the two weighted consistency residuals."""
    win, crs = robust_graph_parts(p_a, p_b, edge_weights)
    return win + crs


def robust_graph_grad(
    p_a, p_b, edge_weights
) -> tuple[np.ndarray, np.ndarray]:
    a, b = _paired(p_a, p_b)
    w = _edge_weight_matrix(edge_weights, a.shape[0])
    d = a @ a.T - b @ b.T
    s = a @ b.T
    c = s - s.T
    w2 = w * w
    m = w2 * d  # symmetric, since w is
    nmat = w2 * c
    g_a = 4.0 * m @ a + 4.0 * nmat @ b
    g_b = -4.0 * m @ b - 4.0 * nmat @ a
    return g_a, g_b


def robust_quadratic(
    p_a,
    p_b,
    p_hat_a,
    p_hat_b,
    config: LossConfig,
    edge_weights=None,
    alpha: float | None = None,
) -> LossReport:
    """Full noise-robust objective with gradients.

    Teacher-blended InfoNCE plus edge-confidence-weighted consistency
    terms.  ``edge_weights`` defaults to the outer product of the
    teacher node confidences; pass an explicit matrix to override
    (e.g. all ones to disable down-weighting).  ``alpha`` defaults to
    ``config.alpha``; the trainer passes its ramped value here.
    """
    a, b = _paired(p_a, p_b)
    ta, tb = _paired(p_hat_a, p_hat_b)
    if ta.shape != a.shape:
        raise ValueError(f"teacher shape {ta.shape} != student shape {a.shape}")
    if alpha is None:
        alpha = config.alpha
    if edge_weights is None:
        edge_weights = edge_confidence(node_confidence(ta, tb, config.tau))
    hard = infonce(a, b, config.tau)
    s = a @ b.T
    s_hat = ta @ tb.T
    soft = _soft_cross_entropy(row_softmax(s_hat, config.tau), s, config.tau)
    soft += _soft_cross_entropy(row_softmax(s_hat.T, config.tau), s.T, config.tau)
    win, crs = robust_graph_parts(a, b, edge_weights)
    nce_blend = (1.0 - alpha) * hard + alpha * soft
    ww, wc = config.within_weight, config.cross_weight
    g_nce_a, g_nce_b = robust_infonce_grad(a, b, ta, tb, config.tau, alpha)
    g_gr_a, g_gr_b = _weighted_graph_grad(a, b, edge_weights, ww, wc)
    return LossReport(
        total=nce_blend + ww * win + wc * crs,
        infonce=hard,
        within=win,
        cross=crs,
        distill=soft,
        grad_pa=g_nce_a + g_gr_a,
        grad_pb=g_nce_b + g_gr_b,
    )


def _weighted_graph_grad(a, b, w, ww: float, wc: float):
    """Like :func:`robust_graph_grad` but with separate term weights."""
    w = _edge_weight_matrix(w, a.shape[0])
    d = a @ a.T - b @ b.T
    s = a @ b.T
    c = s - s.T
    w2 = w * w
    m = w2 * d
    nmat = w2 * c
    g_a = 4.0 * ww * m @ a + 4.0 * wc * nmat @ b
    g_b = -4.0 * ww * m @ b - 4.0 * wc * nmat @ a
    return g_a, g_b
