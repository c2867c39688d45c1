"""Scikit-learn style front door for the whole pipeline.

:class:`GraphMatcher` wraps data validation, training, and decoding
behind the familiar ``fit`` / ``transform`` / ``predict`` / ``score``
surface, so the library drops into sklearn-ish workflows (parameter
grids, cloning, pipelines that pass lists of pair objects through).
The estimator is a thin veneer: all behavior lives in the underlying
modules, and the fitted state is the ordinary training-state object.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .assignment import Assignment, matching_accuracy
from .encoder import forward
from .evaluation import evaluate, mean_similarities, predict as predict_pair
from .synthetic import GraphPair, pair_features
from .trainer import TrainConfig, train

__all__ = ["GraphMatcher", "check_pairs"]


def check_pairs(X, min_pairs: int = 1) -> list[GraphPair]:
    """Validate an iterable of graph pairs and return it as a list.

    All pairs must share one descriptor dimensionality, since they are
    consumed by a single encoder.
    """
    pairs = list(X)
    if len(pairs) < min_pairs:
        raise ValueError(f"need at least {min_pairs} pair(s), got {len(pairs)}")
    for k, pair in enumerate(pairs):
        if not isinstance(pair, GraphPair):
            raise TypeError(
                f"X[{k}] is {type(pair).__name__}, expected GraphPair"
            )
    d = pairs[0].desc_a.shape[1]
    for k, pair in enumerate(pairs):
        if pair.desc_a.shape[1] != d:
            raise ValueError(
                f"X[{k}] has descriptor dim {pair.desc_a.shape[1]}, expected {d}"
            )
    return pairs


class GraphMatcher(BaseEstimator):
    """Noise-robust keypoint matcher with an sklearn interface.

    Parameters mirror the training configuration one-to-one.  ``fit``
    takes a list of :class:`~quadmatch.synthetic.GraphPair` objects
    (the ``y`` is ignored -- supervision is carried by each pair's own
    annotation), ``predict`` returns one hard assignment per pair, and
    ``score`` is mean matching accuracy.

    Examples
    --------
    >>> from quadmatch.synthetic import make_category, make_dataset
    >>> cats = [make_category("c0", 8, 6, seed=0)]
    >>> pairs = make_dataset(cats, 12, seed=1)
    >>> m = GraphMatcher(epochs=2, seed=0).fit(pairs)
    >>> len(m.predict(pairs[:3]))
    3
    """

    def __init__(
        self,
        learning_rate: float = 3e-4,
        batch_size: int = 8,
        epochs: int = 20,
        momentum_t: float = 0.995,
        alpha_max: float = 0.4,
        tau: float = 0.07,
        within_weight: float = 3.0,
        cross_weight: float = 3.0,
        hidden_dims=(64, 64),
        embed_dim: int = 32,
        activation: str = "ramp",
        ablation: str = "full",
        seed: int = 0,
        eval_with_teacher: bool = False,
    ):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.momentum_t = momentum_t
        self.alpha_max = alpha_max
        self.tau = tau
        self.within_weight = within_weight
        self.cross_weight = cross_weight
        self.hidden_dims = hidden_dims
        self.embed_dim = embed_dim
        self.activation = activation
        self.ablation = ablation
        self.seed = seed
        self.eval_with_teacher = eval_with_teacher

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            momentum_t=self.momentum_t,
            alpha_max=self.alpha_max,
            tau=self.tau,
            within_weight=self.within_weight,
            cross_weight=self.cross_weight,
            hidden_dims=tuple(self.hidden_dims),
            embed_dim=self.embed_dim,
            activation=self.activation,
            ablation=self.ablation,
            seed=self.seed,
            eval_with_teacher=self.eval_with_teacher,
        )

    def fit(self, X, y=None) -> "GraphMatcher":
        """Train student (and teacher) encoders on a list of pairs."""
        pairs = check_pairs(X)
        self.state_ = train(pairs, self._train_config())
        self.history_ = self.state_.history
        return self

    @property
    def params_(self):
        """The encoder used for inference (teacher when so configured)."""
        check_is_fitted(self, "state_")
        if self.eval_with_teacher:
            return self.state_.teacher
        return self.state_.student

    def transform(self, X) -> list[tuple[np.ndarray, np.ndarray]]:
        """Unit-norm embeddings ``(p_a, p_b)`` for each pair, storage order."""
        check_is_fitted(self, "state_")
        out = []
        for pair in check_pairs(X):
            x_a, x_b = pair_features(pair)
            p_a, _ = forward(self.params_, x_a)
            p_b, _ = forward(self.params_, x_b)
            out.append((p_a, p_b))
        return out

    def predict(self, X) -> list[Assignment]:
        """Hard assignment for each pair via the exact solver."""
        check_is_fitted(self, "state_")
        return [predict_pair(self.params_, pair) for pair in check_pairs(X)]

    def score(self, X, y=None) -> float:
        """Mean matching accuracy against each pair's own annotation."""
        check_is_fitted(self, "state_")
        pairs = check_pairs(X)
        preds = self.predict(pairs)
        return float(
            np.mean([matching_accuracy(p, pair.gt) for p, pair in zip(preds, pairs)])
        )

    def diagnostics(self, X) -> dict:
        """Accuracy plus similarity means, as used by the benchmark."""
        check_is_fitted(self, "state_")
        pairs = check_pairs(X)
        summary = evaluate(self.params_, pairs)
        mc, mn = mean_similarities(self.params_, pairs)
        return summary | {"mean_clean_sim": mc, "mean_noisy_sim": mn}
