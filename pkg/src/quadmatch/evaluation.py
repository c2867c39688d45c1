"""Inference, diagnostics, and the synthetic noise benchmark.

Prediction runs the trained encoder on both (unaligned) sides of a
pair and decodes the embedding similarity with the exact assignment
solver.  Diagnostics look at the per-keypoint similarity a model
assigns to the annotated partner, split into keypoints that survived
corruption and keypoints that were displaced -- a well-trained robust
model separates the two populations cleanly.

The benchmark builds a fixed grid of cells (corruption level x method
x seed), trains one model per cell, and collects accuracy and the two
similarity means into a CSV.  Everything is seeded and the CSV is
written in sorted order with ``repr`` floats, so two runs with the same
flags produce byte-identical files.  A sweep can resume from a
manifest of already-finished cells.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .assignment import Assignment, hungarian, matching_accuracy
from .encoder import EncoderParams, forward
from .synthetic import (
    GraphPair,
    NoiseConfig,
    generate_pair,
    inject_noise,
    make_category,
    pair_features,
)
from .trainer import ABLATIONS, TrainConfig, train

__all__ = [
    "BenchmarkConfig",
    "predict",
    "evaluate",
    "diagonal_similarities",
    "mean_similarities",
    "similarity_histogram",
    "write_histogram_json",
    "make_benchmark",
    "run_cell",
    "sweep_noise",
    "ablation_grid",
    "write_sweep_csv",
    "write_plot_script",
    "CSV_HEADER",
]

CSV_HEADER = "eta,method,seed,accuracy,mean_clean_sim,mean_noisy_sim"

_CAT_STREAM = 11
_TRAIN_PAIR_STREAM = 12
_TEST_PAIR_STREAM = 13
_TRAIN_NOISE_STREAM = 21


@dataclass(frozen=True)
class BenchmarkConfig:
    """Shape of the synthetic benchmark data.

    ``train_pairs``/``test_pairs`` are totals, split as evenly as
    possible over the categories.
    """

    categories: int = 5
    keypoints: int = 10
    train_pairs: int = 200
    test_pairs: int = 100
    d_desc: int = 6
    jitter: float = 0.4
    warp: float = 1.0
    kernel_width: float = 0.06
    min_separation: float = 0.14
    epochs: int = 20
    both_sides: bool = False

    def __post_init__(self):
        if self.categories < 1 or self.keypoints < 1:
            raise ValueError("categories and keypoints must be positive")
        if self.train_pairs < 1 or self.test_pairs < 1:
            raise ValueError("pair counts must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def predict(params: EncoderParams, pair: GraphPair) -> Assignment:
    """Match a pair: encode both sides, solve on the cosine similarity."""
    x_a, x_b = pair_features(pair)
    p_a, _ = forward(params, x_a)
    p_b, _ = forward(params, x_b)
    return hungarian(p_a @ p_b.T)


def diagonal_similarities(params: EncoderParams, pair: GraphPair) -> tuple[np.ndarray, np.ndarray]:
    """Similarity of each keypoint to its annotated partner, with flags.

    Returns ``(sims, noise_flags)`` where ``sims[i]`` is the cosine
    similarity between the embedding of A-row ``i`` and the embedding
    of the B-row its annotation points to.
    """
    x_a, x_b = pair_features(pair)
    p_a, _ = forward(params, x_a)
    p_b, _ = forward(params, x_b)
    sims = np.sum(p_a * p_b[pair.gt.cols], axis=1)
    return sims, pair.noise_flags.copy()


def mean_similarities(params: EncoderParams, pairs) -> tuple[float, float]:
    """Mean annotated-partner similarity over intact and displaced keypoints.

    Either mean is ``nan`` when its population is empty (e.g. no
    displaced keypoints in a clean evaluation set).
    """
    clean: list[float] = []
    noisy: list[float] = []
    for pair in pairs:
        sims, flags = diagonal_similarities(params, pair)
        clean.extend(sims[~flags])
        noisy.extend(sims[flags])
    mc = float(np.mean(clean)) if clean else float("nan")
    mn = float(np.mean(noisy)) if noisy else float("nan")
    return mc, mn


def evaluate(params: EncoderParams, pairs) -> dict:
    """Mean matching accuracy over a list of pairs, with per-pair detail."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one pair to evaluate")
    per_pair = [matching_accuracy(predict(params, p), p.gt) for p in pairs]
    return {
        "accuracy": float(np.mean(per_pair)),
        "per_pair": per_pair,
        "n_pairs": len(pairs),
    }


HISTOGRAM_VERSION = 1


def similarity_histogram(params: EncoderParams, pairs, bins: int = 40) -> dict:
    """Histogram of annotated-partner similarities over ``[-1, 1]``.

    Returns bin edges plus separate counts for intact and displaced
    keypoints (values clipped into range first, so every keypoint is
    counted exactly once); useful for eyeballing how well a model
    separates the two populations.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    clean: list[float] = []
    noisy: list[float] = []
    for pair in pairs:
        sims, flags = diagonal_similarities(params, pair)
        sims = np.clip(sims, -1.0, 1.0)
        clean.extend(sims[~flags])
        noisy.extend(sims[flags])
    clean_counts, _ = np.histogram(clean, bins=edges)
    noisy_counts, _ = np.histogram(noisy, bins=edges)
    return {
        "version": HISTOGRAM_VERSION,
        "bin_edges": edges,
        "clean_counts": clean_counts,
        "noisy_counts": noisy_counts,
    }


def write_histogram_json(histogram: dict, path) -> None:
    """Serialize a :func:`similarity_histogram` result as versioned JSON."""
    payload = {
        "version": histogram["version"],
        "bin_edges": np.asarray(histogram["bin_edges"]).tolist(),
        "clean_counts": np.asarray(histogram["clean_counts"]).tolist(),
        "noisy_counts": np.asarray(histogram["noisy_counts"]).tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def make_benchmark(
    bench: BenchmarkConfig, eta: float, seed: int
) -> tuple[list[GraphPair], list[GraphPair]]:
    """Build the train and test pair lists for one benchmark cell.

    Corruption touches only the *training* split -- the point of the
    benchmark is noisy supervision, so test pairs stay clean and
    accuracy is always measured against clean truth.  The clean pairs
    depend only on ``seed``, not on ``eta``; raising the corruption
    level re-corrupts the same underlying data, so accuracy changes
    across ``eta`` are attributable to the noise.
    """
    eta_tag = int(round(eta * 1000))
    categories = [
        make_category(
            f"cat{ci:02d}",
            bench.keypoints,
            bench.d_desc,
            seed=[seed, _CAT_STREAM, ci],
            kernel_width=bench.kernel_width,
            min_separation=bench.min_separation,
        )
        for ci in range(bench.categories)
    ]

    def build(total: int, pair_stream: int) -> list[GraphPair]:
        pairs = []
        for ci, count in enumerate(_split_counts(total, bench.categories)):
            for pi in range(count):
                pairs.append(
                    generate_pair(
                        None,
                        categories[ci],
                        bench.jitter,
                        seed=[seed, pair_stream, ci, pi],
                        warp=bench.warp,
                    )
                )
        return pairs

    train_pairs = build(bench.train_pairs, _TRAIN_PAIR_STREAM)
    if eta > 0.0:
        train_pairs = [
            inject_noise(
                pair,
                NoiseConfig(
                    eta=eta,
                    seed=[seed, _TRAIN_NOISE_STREAM, eta_tag, k],
                    both_sides=bench.both_sides,
                ),
            )
            for k, pair in enumerate(train_pairs)
        ]
    test_pairs = build(bench.test_pairs, _TEST_PAIR_STREAM)
    return train_pairs, test_pairs


def run_cell(
    bench: BenchmarkConfig,
    eta: float,
    method: str,
    seed: int,
    base_config: TrainConfig | None = None,
) -> dict:
    """Train and score one benchmark cell; returns a CSV-ready row.

    Accuracy is measured on the clean test split; the similarity means
    are measured on the (corrupted) training split, whose noise flags
    say which keypoints were displaced.  ``method`` is one of the
    ablation names; ``base_config`` supplies the remaining training
    hyper-parameters (defaults used if omitted).
    """
    if method not in ABLATIONS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(ABLATIONS)}")
    if base_config is None:
        base_config = TrainConfig()
    config = replace(base_config, ablation=method, seed=seed, epochs=bench.epochs)
    train_pairs, test_pairs = make_benchmark(bench, eta, seed)
    state = train(train_pairs, config)
    params = state.teacher if config.eval_with_teacher else state.student
    summary = evaluate(params, test_pairs)
    mc, mn = mean_similarities(params, train_pairs)
    return {
        "eta": float(eta),
        "method": method,
        "seed": int(seed),
        "accuracy": summary["accuracy"],
        "mean_clean_sim": mc,
        "mean_noisy_sim": mn,
    }


def _cell_key(eta: float, method: str, seed: int) -> str:
    return f"{float(eta)!r}|{method}|{int(seed)}"


def _manifest_fingerprint(bench: BenchmarkConfig, base_config: TrainConfig) -> dict:
    cfg = asdict(base_config)
    cfg["hidden_dims"] = list(base_config.hidden_dims)
    # ablation/seed/epochs vary per cell; they are not part of the identity
    for flexible in ("ablation", "seed", "epochs"):
        cfg.pop(flexible)
    return {"bench": asdict(bench), "train": cfg}


def _load_manifest(path: Path, fingerprint: dict) -> dict[str, dict]:
    done: dict[str, dict] = {}
    if not path.exists():
        return done
    lines = path.read_text().strip().split("\n")
    if not lines or not lines[0]:
        return done
    header = json.loads(lines[0])
    if header.get("kind") != "manifest":
        raise ValueError(f"{path} is not a sweep manifest")
    if header.get("fingerprint") != fingerprint:
        raise ValueError(
            f"manifest {path} was written for a different benchmark configuration; "
            "delete it or use a fresh path"
        )
    for line in lines[1:]:
        row = json.loads(line)
        done[_cell_key(row["eta"], row["method"], row["seed"])] = row
    return done


def _cell_worker(args) -> dict:
    bench, eta, method, seed, base_config = args
    return run_cell(bench, eta, method, seed, base_config)


def sweep_noise(
    bench: BenchmarkConfig,
    etas,
    methods,
    seeds,
    out_csv=None,
    manifest_path=None,
    jobs: int = 1,
    base_config: TrainConfig | None = None,
) -> list[dict]:
    """Train/score every (eta, method, seed) cell of the grid.

    Results are returned (and written, when ``out_csv`` is given)
    sorted by cell coordinates, independent of execution order, so a
    repeated run produces an identical file.  With ``manifest_path``,
    finished cells are appended to a journal as they complete and
    skipped on a re-run, which makes long sweeps resumable.
    """
    if base_config is None:
        base_config = TrainConfig()
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    fingerprint = _manifest_fingerprint(bench, base_config)
    done: dict[str, dict] = {}
    manifest = Path(manifest_path) if manifest_path is not None else None
    if manifest is not None:
        done = _load_manifest(manifest, fingerprint)
        if not manifest.exists():
            manifest.write_text(
                json.dumps({"kind": "manifest", "fingerprint": fingerprint}) + "\n"
            )
    todo = [
        (eta, method, seed)
        for eta in etas
        for method in methods
        for seed in seeds
        if _cell_key(eta, method, seed) not in done
    ]

    def record(row: dict) -> None:
        done[_cell_key(row["eta"], row["method"], row["seed"])] = row
        if manifest is not None:
            with manifest.open("a") as fh:
                fh.write(json.dumps(row) + "\n")

    if jobs == 1 or len(todo) <= 1:
        for eta, method, seed in todo:
            record(run_cell(bench, eta, method, seed, base_config))
    else:
        tasks = [(bench, eta, method, seed, base_config) for eta, method, seed in todo]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_cell_worker, t) for t in tasks]
            for fut in as_completed(futures):
                record(fut.result())
    rows = sorted(done.values(), key=lambda r: (r["eta"], r["method"], r["seed"]))
    if out_csv is not None:
        write_sweep_csv(rows, out_csv)
    return rows


def ablation_grid(
    train_pairs,
    test_pairs,
    config: TrainConfig,
    tags=tuple(sorted(ABLATIONS)),
) -> list[dict]:
    """Train one model per ablation tag on identical data and seed.

    Unlike :func:`sweep_noise` (which rebuilds data per cell), every
    tag here sees exactly the same pair lists, so the rows isolate the
    effect of the removed ingredient.  Similarity means come from the
    training pairs, accuracy from the test pairs.
    """
    rows = []
    for tag in tags:
        if tag not in ABLATIONS:
            raise ValueError(f"unknown ablation tag {tag!r}")
        tag_config = replace(config, ablation=tag)
        state = train(train_pairs, tag_config)
        params = state.teacher if tag_config.eval_with_teacher else state.student
        summary = evaluate(params, test_pairs)
        mc, mn = mean_similarities(params, train_pairs)
        rows.append(
            {
                "method": tag,
                "seed": int(config.seed),
                "accuracy": summary["accuracy"],
                "mean_clean_sim": mc,
                "mean_noisy_sim": mn,
            }
        )
    return rows


def write_sweep_csv(rows, path) -> None:
    """Serialize rows with full-precision ``repr`` floats (no rounding)."""
    lines = [CSV_HEADER]
    for row in rows:
        lines.append(
            f"{float(row['eta'])!r},{row['method']},{int(row['seed'])},"
            f"{float(row['accuracy'])!r},{float(row['mean_clean_sim'])!r},"
            f"{float(row['mean_noisy_sim'])!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_plot_script(csv_path, script_path, methods) -> None:
    """Emit a gnuplot script rendering seed-averaged accuracy vs noise.

    The core stays free of plotting dependencies; any gnuplot can turn
    the sweep CSV into the noise-robustness curve.
    """
    csv_name = Path(csv_path).name
    lines = [
        "set datafile separator ','",
        "set key top right",
        "set xlabel 'noise rate'",
        "set ylabel 'matching accuracy'",
        "set yrange [0:1]",
        "plot \\",
    ]
    plots = [
        f"  '{csv_name}' every ::1 using 1:(strcol(2) eq '{m}' ? $4 : 1/0) "
        f"smooth unique with linespoints title '{m}'"
        for m in methods
    ]
    lines.append(", \\\n".join(plots))
    Path(script_path).write_text("\n".join(lines) + "\n")
