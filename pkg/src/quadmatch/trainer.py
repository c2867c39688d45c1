"""Momentum-distillation training loop for the matching encoder.

A student encoder is optimized with Adam on the (robust) quadratic
objective; a teacher encoder tracks the student as an exponential
moving average and supplies the soft InfoNCE targets and per-keypoint
confidences.  The teacher's influence (the blend coefficient) ramps
linearly from zero over the first epoch, giving the student time to
become worth imitating, and then stays at its ceiling.

Everything is a pure function over immutable parameter objects except
:class:`TrainState`, which is the one mutable record the loop threads
through.  Runs are bit-reproducible from ``TrainConfig.seed``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assignment import hungarian, matching_accuracy
from .encoder import (
    EncoderGrads,
    EncoderParams,
    backward,
    ema_update,
    forward,
    init_params,
)
from .losses import LossConfig, quadratic_loss, robust_quadratic
from .numcore import _check_tau
from .synthetic import GraphPair, align_keypoints, pair_features

__all__ = [
    "ABLATIONS",
    "TrainConfig",
    "AdamMoments",
    "TrainState",
    "alpha_schedule",
    "init_moments",
    "adam_step",
    "train_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

# Which ingredients each ablation keeps: (teacher distillation, within
# weight on?, cross weight on?).
ABLATIONS = {
    "full": (True, True, True),
    "no_distill": (False, True, True),
    "no_graph": (True, False, False),
    "infonce_only": (False, False, False),
    "infonce_within": (False, True, False),
    "infonce_cross": (False, False, True),
}

_INIT_STREAM = 101
_SHUFFLE_STREAM = 102


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one training run."""

    learning_rate: float = 3e-4
    batch_size: int = 8
    epochs: int = 20
    momentum_t: float = 0.995
    alpha_max: float = 0.4
    tau: float = 0.07
    within_weight: float = 3.0
    cross_weight: float = 3.0
    hidden_dims: tuple[int, ...] = (64, 64)
    embed_dim: int = 32
    activation: str = "ramp"
    ablation: str = "full"
    seed: int = 0
    eval_with_teacher: bool = False

    def __post_init__(self):
        _check_tau(self.tau)
        if self.ablation not in ABLATIONS:
            raise ValueError(
                f"unknown ablation {self.ablation!r}; choose from {sorted(ABLATIONS)}"
            )
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.momentum_t <= 1.0:
            raise ValueError("momentum_t must lie in [0, 1]")
        if not 0.0 <= self.alpha_max <= 1.0:
            raise ValueError("alpha_max must lie in [0, 1]")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    @property
    def uses_teacher(self) -> bool:
        return ABLATIONS[self.ablation][0]

    def loss_config(self) -> LossConfig:
        _, use_within, use_cross = ABLATIONS[self.ablation]
        return LossConfig(
            tau=self.tau,
            alpha=self.alpha_max,
            within_weight=self.within_weight if use_within else 0.0,
            cross_weight=self.cross_weight if use_cross else 0.0,
        )


@dataclass(frozen=True)
class AdamMoments:
    """First/second moment accumulators, one per parameter array."""

    m_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]


@dataclass
class TrainState:
    """Everything the loop carries between steps."""

    student: EncoderParams
    teacher: EncoderParams
    moments: AdamMoments
    step: int = 0
    steps_per_epoch: int = 1
    history: list = field(default_factory=list)


def alpha_schedule(step: int, steps_per_epoch: int, alpha_max: float) -> float:
    """Teacher-blend coefficient at a given (0-based) optimizer step.

    Zero at step 0, linear up to ``alpha_max`` at one epoch's worth of
    steps, constant afterwards.
    """
    if steps_per_epoch < 1:
        raise ValueError("steps_per_epoch must be >= 1")
    if step < 0:
        raise ValueError("step must be >= 0")
    return alpha_max * min(1.0, step / steps_per_epoch)


def init_moments(params: EncoderParams) -> AdamMoments:
    zeros_w = lambda: tuple(np.zeros_like(w) for w in params.weights)  # noqa: E731
    zeros_b = lambda: tuple(np.zeros_like(b) for b in params.biases)  # noqa: E731
    return AdamMoments(zeros_w(), zeros_b(), zeros_w(), zeros_b())


def adam_step(
    params: EncoderParams,
    grads: EncoderGrads,
    moments: AdamMoments,
    lr: float,
    step: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[EncoderParams, AdamMoments]:
    """One Adam update with bias correction; ``step`` is 1-based."""
    if step < 1:
        raise ValueError("Adam step count is 1-based")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step

    def update(p, g, m, v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        p = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        return p, m, v

    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, moments.m_weights, moments.v_weights):
        p, m, v = update(p, g, m, v)
        new_w.append(p)
        new_mw.append(m)
        new_vw.append(v)
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(params.biases, grads.biases, moments.m_biases, moments.v_biases):
        p, m, v = update(p, g, m, v)
        new_b.append(p)
        new_mb.append(m)
        new_vb.append(v)
    return (
        EncoderParams(tuple(new_w), tuple(new_b), params.activation),
        AdamMoments(tuple(new_mw), tuple(new_mb), tuple(new_vw), tuple(new_vb)),
    )


def _add_grads(a: EncoderGrads, b: EncoderGrads) -> EncoderGrads:
    return EncoderGrads(
        tuple(x + y for x, y in zip(a.weights, b.weights)),
        tuple(x + y for x, y in zip(a.biases, b.biases)),
    )


def _scale_grads(g: EncoderGrads, c: float) -> EncoderGrads:
    return EncoderGrads(tuple(c * w for w in g.weights), tuple(c * b for b in g.biases))


def train_step(state: TrainState, batch, config: TrainConfig) -> dict:
    """One optimizer step on a batch of pairs; mutates ``state``.

    Per-pair losses are computed on matched embedding rows, parameter
    gradients are averaged over the batch, the student takes an Adam
    step, and (when distillation is on) the teacher then drifts toward
    the updated student.  Returns the batch-mean loss terms.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    loss_cfg = config.loss_config()
    alpha = alpha_schedule(state.step, state.steps_per_epoch, config.alpha_max)
    total_grads: EncoderGrads | None = None
    sums = {"total": 0.0, "infonce": 0.0, "within": 0.0, "cross": 0.0, "distill": 0.0}
    for pair in batch:
        x_a, x_b = align_keypoints(pair)
        p_a, cache_a = forward(state.student, x_a)
        p_b, cache_b = forward(state.student, x_b)
        if config.uses_teacher:
            t_a, _ = forward(state.teacher, x_a)
            t_b, _ = forward(state.teacher, x_b)
            report = robust_quadratic(p_a, p_b, t_a, t_b, loss_cfg, alpha=alpha)
        else:
            report = quadratic_loss(p_a, p_b, loss_cfg)
        pair_grads = _add_grads(
            backward(cache_a, report.grad_pa), backward(cache_b, report.grad_pb)
        )
        total_grads = pair_grads if total_grads is None else _add_grads(total_grads, pair_grads)
        sums["total"] += report.total
        sums["infonce"] += report.infonce
        sums["within"] += report.within
        sums["cross"] += report.cross
        sums["distill"] += report.distill
    mean_grads = _scale_grads(total_grads, 1.0 / len(batch))
    state.student, state.moments = adam_step(
        state.student, mean_grads, state.moments, config.learning_rate, state.step + 1
    )
    if config.uses_teacher:
        state.teacher = ema_update(state.teacher, state.student, config.momentum_t)
    state.step += 1
    return {k: v / len(batch) for k, v in sums.items()} | {"alpha": alpha}


def _init_state(config: TrainConfig, d_in: int, n_pairs: int) -> TrainState:
    dims = [d_in, *config.hidden_dims, config.embed_dim]
    student = init_params(dims, seed=[config.seed, _INIT_STREAM], activation=config.activation)
    teacher = EncoderParams(student.weights, student.biases, student.activation)
    steps_per_epoch = max(1, math.ceil(n_pairs / config.batch_size))
    return TrainState(
        student=student,
        teacher=teacher,
        moments=init_moments(student),
        steps_per_epoch=steps_per_epoch,
    )


def _quick_accuracy(params: EncoderParams, pairs) -> float:
    """Mean matching accuracy of Hungarian on the embedding similarity."""
    scores = []
    for pair in pairs:
        x_a, x_b = pair_features(pair)
        p_a, _ = forward(params, x_a)
        p_b, _ = forward(params, x_b)
        pred = hungarian(p_a @ p_b.T)
        scores.append(matching_accuracy(pred, pair.gt))
    return float(np.mean(scores))


def train(dataset, config: TrainConfig, eval_pairs=None) -> TrainState:
    """Run the full training loop over a list of pairs.

    The pair order is reshuffled every epoch from the run seed.  When
    ``eval_pairs`` is given, matching accuracy on them
    is recorded in the history after each epoch (using the teacher's
    embeddings instead of the student's if the config asks for it).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if not all(isinstance(p, GraphPair) for p in dataset):
        raise ValueError("dataset must contain GraphPair objects")
    d_in = align_keypoints(dataset[0])[0].shape[1]
    state = _init_state(config, d_in, len(dataset))
    rng = np.random.default_rng([config.seed, _SHUFFLE_STREAM])
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_sums: dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(dataset), config.batch_size):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            metrics = train_step(state, batch, config)
            n_batches += 1
            for k, v in metrics.items():
                epoch_sums[k] = epoch_sums.get(k, 0.0) + v
        record = {"epoch": epoch} | {k: v / n_batches for k, v in epoch_sums.items()}
        if eval_pairs is not None:
            eval_params = state.teacher if config.eval_with_teacher else state.student
            record["eval_accuracy"] = _quick_accuracy(eval_params, eval_pairs)
        state.history.append(record)
    return state


def _config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["hidden_dims"] = list(config.hidden_dims)
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["hidden_dims"] = tuple(d["hidden_dims"])
    return TrainConfig(**d)


def _params_record(params: EncoderParams) -> dict:
    return {
        "activation": params.activation,
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def _params_from_record(rec: dict) -> EncoderParams:
    return EncoderParams(
        tuple(np.asarray(layer["weight"]) for layer in rec["layers"]),
        tuple(np.asarray(layer["bias"]) for layer in rec["layers"]),
        rec["activation"],
    )


def save_checkpoint(state: TrainState, config: TrainConfig, path) -> None:
    """Persist a run (config, both encoders, optimizer state, history)."""
    payload = {
        "config": _config_to_dict(config),
        "student": _params_record(state.student),
        "teacher": _params_record(state.teacher),
        "moments": {
            "m_weights": [a.tolist() for a in state.moments.m_weights],
            "m_biases": [a.tolist() for a in state.moments.m_biases],
            "v_weights": [a.tolist() for a in state.moments.v_weights],
            "v_biases": [a.tolist() for a in state.moments.v_biases],
        },
        "step": state.step,
        "steps_per_epoch": state.steps_per_epoch,
        "history": state.history,
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    payload = json.loads(Path(path).read_text())
    config = _config_from_dict(payload["config"])
    moments = AdamMoments(
        tuple(np.asarray(a) for a in payload["moments"]["m_weights"]),
        tuple(np.asarray(a) for a in payload["moments"]["m_biases"]),
        tuple(np.asarray(a) for a in payload["moments"]["v_weights"]),
        tuple(np.asarray(a) for a in payload["moments"]["v_biases"]),
    )
    state = TrainState(
        student=_params_from_record(payload["student"]),
        teacher=_params_from_record(payload["teacher"]),
        moments=moments,
        step=int(payload["step"]),
        steps_per_epoch=int(payload["steps_per_epoch"]),
        history=list(payload["history"]),
    )
    return state, config
