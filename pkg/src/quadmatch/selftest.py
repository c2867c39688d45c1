"""Built-in verification of the package's mathematical claims.

Five cheap, seeded check groups that re-derive the core guarantees at
runtime (useful after an install or a refactor, without the full test
suite):

* ``smoothing-identity`` -- the smoothed assignment loss with an
  identity annotation equals ``n * tau`` times the diagonal
  cross-entropy, for random similarities and several temperatures.
* ``gradient-checks`` -- every analytic gradient (losses and encoder
  backward) against central finite differences.
* ``assignment-oracle`` -- the Hungarian solver against brute-force
  enumeration on small instances.
* ``sinkhorn-marginals`` -- the relaxation reaches doubly-stochastic
  marginals within the iteration budget.
* ``teacher-decay`` -- with a frozen student, the teacher gap shrinks
  geometrically at exactly the momentum rate.

``gradient_bias`` deliberately corrupts the analytic gradients before
comparison; any visible bias must turn ``gradient-checks`` red, which
demonstrates the harness can actually fail.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .assignment import Assignment, hungarian, sinkhorn, smoothed_linear_loss
from .encoder import EncoderParams, backward, ema_update, forward, init_params
from .losses import (
    LossConfig,
    alignment_cross_entropy,
    cross_consistency,
    cross_consistency_grad,
    edge_confidence,
    infonce,
    infonce_grad,
    node_confidence,
    robust_graph,
    robust_graph_grad,
    robust_infonce,
    robust_infonce_grad,
    within_consistency,
    within_consistency_grad,
)

__all__ = ["run_selftest", "draw_encoder_instance", "GROUPS"]

GROUPS = (
    "smoothing-identity",
    "gradient-checks",
    "assignment-oracle",
    "sinkhorn-marginals",
    "teacher-decay",
)


def _check_smoothing_identity(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(30):
        n = int(rng.integers(2, 9))
        s = rng.normal(size=(n, n))
        for tau in (0.07, 0.5, 1.0):
            lhs = smoothed_linear_loss(s, Assignment.identity(n), tau)
            rhs = n * tau * alignment_cross_entropy(s, tau)
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    return worst < 1e-9, f"max relative gap {worst:.3e}"


def _fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    g = np.zeros_like(x)
    flat = x.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        hi = f(x)
        flat[k] = orig - h
        lo = f(x)
        flat[k] = orig
        g.ravel()[k] = (hi - lo) / (2.0 * h)
    return g


def _rel_gap(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1e-8, np.abs(analytic).max(), np.abs(numeric).max())
    return float(np.abs(analytic - numeric).max() / scale)


def draw_encoder_instance(
    rng: np.random.Generator, dims, n_rows: int = 5, activation: str = "ramp"
) -> tuple[EncoderParams, np.ndarray]:
    """A random (params, input) pair safe for finite differencing.

    Rejects draws where some pre-activation sits on a ramp kink or a
    pre-normalization row is nearly zero; at those points the loss is
    not smooth and central differences are meaningless.
    """
    while True:
        params = init_params(dims, seed=int(rng.integers(1 << 31)), activation=activation)
        x = rng.normal(size=(n_rows, dims[0]))
        h = x
        ok = True
        last = len(params.weights) - 1
        for k, (w, b) in enumerate(zip(params.weights, params.biases)):
            z = h @ w + b
            if k < last:
                if activation == "ramp":
                    if np.abs(z).min() < 1e-3:
                        ok = False
                        break
                    h = np.maximum(z, 0.0)
                else:
                    h = np.tanh(z)
            elif np.linalg.norm(z, axis=1).min() < 0.1:
                ok = False
        if ok:
            return params, x


def _check_gradients(rng: np.random.Generator, bias: float) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(4):
        n, d = int(rng.integers(3, 6)), int(rng.integers(3, 7))
        a = rng.normal(size=(n, d))
        b = rng.normal(size=(n, d))
        ta = rng.normal(size=(n, d))
        tb = rng.normal(size=(n, d))
        w = edge_confidence(node_confidence(ta, tb, 0.5))
        cases = [
            (lambda x, y: infonce(x, y, 0.2), lambda x, y: infonce_grad(x, y, 0.2)),
            (within_consistency, within_consistency_grad),
            (cross_consistency, cross_consistency_grad),
            (
                lambda x, y: robust_infonce(x, y, ta, tb, 0.2, 0.3),
                lambda x, y: robust_infonce_grad(x, y, ta, tb, 0.2, 0.3),
            ),
            (
                lambda x, y: robust_graph(x, y, w),
                lambda x, y: robust_graph_grad(x, y, w),
            ),
        ]
        for value_fn, grad_fn in cases:
            ga, gb = grad_fn(a, b)
            fa = _fd(lambda x: value_fn(x, b), a.copy())
            fb = _fd(lambda y: value_fn(a, y), b.copy())
            worst = max(worst, _rel_gap(ga + bias, fa), _rel_gap(gb + bias, fb))
    # Encoder backward: differentiate a fixed linear functional of the output.
    for _ in range(2):
        params, x = draw_encoder_instance(rng, [4, 6, 5, 3])
        probe = rng.normal(size=(5, 3))

        def scalar(p):
            out, _ = forward(p, x)
            return float(np.sum(out * probe))

        out, cache = forward(params, x)
        grads = backward(cache, probe)
        for li in range(len(params.weights)):
            for attr in ("weights", "biases"):
                arr = getattr(params, attr)[li].copy()
                analytic = getattr(grads, attr)[li]

                def scalar_at(v, li=li, attr=attr):
                    pieces = {
                        "weights": list(params.weights),
                        "biases": list(params.biases),
                    }
                    pieces[attr][li] = v
                    return scalar(
                        EncoderParams(
                            tuple(pieces["weights"]),
                            tuple(pieces["biases"]),
                            params.activation,
                        )
                    )

                numeric = _fd(scalar_at, arr)
                worst = max(worst, _rel_gap(analytic + bias, numeric))
    return worst < 1e-5, f"max relative gap {worst:.3e}"


def _check_assignment_oracle(rng: np.random.Generator) -> tuple[bool, str]:
    checked = 0
    for _ in range(40):
        n = int(rng.integers(2, 6))
        s = rng.normal(size=(n, n))
        cols = hungarian(s).cols
        # Same summation order on both sides so equality can be exact.
        got = sum(float(s[i, cols[i]]) for i in range(n))
        best = max(
            sum(float(s[i, perm[i]]) for i in range(n))
            for perm in permutations(range(n))
        )
        if got != best:
            return False, f"objective {got!r} != brute force {best!r}"
        checked += 1
    return True, f"{checked} instances matched brute force exactly"


def _check_sinkhorn(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(20):
        s = rng.normal(size=(5, 5))
        p = sinkhorn(s, iterations=100, epsilon=1.0)
        worst = max(
            worst,
            float(np.abs(p.sum(axis=1) - 1.0).max()),
            float(np.abs(p.sum(axis=0) - 1.0).max()),
        )
    return worst < 1e-6, f"max marginal deviation {worst:.3e}"


def _check_teacher_decay(rng: np.random.Generator) -> tuple[bool, str]:
    student = init_params([3, 8, 4], seed=int(rng.integers(1 << 31)))
    teacher = init_params([3, 8, 4], seed=int(rng.integers(1 << 31)))
    t = 0.995
    gap0 = [tw - sw for tw, sw in zip(teacher.weights, student.weights)]
    worst = 0.0
    for k in range(1, 101):
        teacher = ema_update(teacher, student, t)
        factor = t**k
        for g0, tw, sw in zip(gap0, teacher.weights, student.weights):
            expected = factor * g0
            actual = tw - sw
            mask = expected != 0.0
            if mask.any():
                worst = max(
                    worst,
                    float(
                        np.abs(actual[mask] - expected[mask]).max()
                        / np.abs(expected[mask]).max()
                    ),
                )
    return worst < 1e-12, f"max relative drift {worst:.3e}"


def run_selftest(gradient_bias: float = 0.0, seed: int = 0) -> dict[str, tuple[bool, str]]:
    """Run every check group; returns ``{group: (passed, detail)}``."""
    rng = np.random.default_rng([seed, 999])
    return {
        "smoothing-identity": _check_smoothing_identity(rng),
        "gradient-checks": _check_gradients(rng, gradient_bias),
        "assignment-oracle": _check_assignment_oracle(rng),
        "sinkhorn-marginals": _check_sinkhorn(rng),
        "teacher-decay": _check_teacher_decay(rng),
    }
