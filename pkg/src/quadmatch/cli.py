"""Command-line entry point.

Subcommands::

    generate   write a synthetic pair dataset (optionally corrupted)
    train      fit an encoder on a dataset file, save a checkpoint
    eval       score a checkpoint on a dataset file
    sweep      train/score a (noise level x method x seed) grid -> CSV
    ablate     the sweep restricted to one noise level, many methods
    selftest   run the built-in verification groups

Settings resolve as flags > ``--config`` JSON file > built-in
defaults, and every command first echoes its fully resolved
configuration as one JSON line, so a run's output records exactly what
produced it.  Relative dataset paths are looked up under
``$QUADMATCH_DATA_DIR`` when that variable is set.  Output contains no
timestamps; identical invocations produce identical bytes.

Exit codes: 0 success, 1 bad usage, 2 unreadable or inconsistent
input data, 3 a verification group failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .evaluation import (
    BenchmarkConfig,
    evaluate,
    similarity_histogram,
    sweep_noise,
    write_histogram_json,
    write_plot_script,
)
from .selftest import run_selftest
from .synthetic import (
    NoiseConfig,
    generate_pair,
    inject_noise,
    make_category,
    save_dataset,
    load_dataset,
)
from .trainer import (
    ABLATIONS,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["main", "build_parser"]

_BENCH = BenchmarkConfig()
_TRAIN = TrainConfig()


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t != ""]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t != ""]


def _dims(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t != "")


def _methods(text: str) -> list[str]:
    names = [t for t in text.split(",") if t != ""]
    for name in names:
        if name not in ABLATIONS:
            raise argparse.ArgumentTypeError(
                f"unknown method {name!r}; choose from {sorted(ABLATIONS)}"
            )
    return names


def _data_path(path: str) -> str:
    """Resolve a dataset path against $QUADMATCH_DATA_DIR if relative."""
    base = os.environ.get("QUADMATCH_DATA_DIR")
    if base and not Path(path).is_absolute():
        return str(Path(base) / path)
    return path


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, metavar="FILE",
                   help="JSON file of settings; explicit flags win")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, default=_TRAIN.learning_rate)
    p.add_argument("--batch-size", type=int, default=_TRAIN.batch_size)
    p.add_argument("--momentum", type=float, default=_TRAIN.momentum_t,
                   help="teacher moving-average coefficient")
    p.add_argument("--alpha-max", type=float, default=_TRAIN.alpha_max,
                   help="ceiling of the teacher-blend ramp")
    p.add_argument("--tau", type=float, default=_TRAIN.tau)
    p.add_argument("--within-weight", type=float, default=_TRAIN.within_weight)
    p.add_argument("--cross-weight", type=float, default=_TRAIN.cross_weight)
    p.add_argument("--hidden-dims", type=_dims, default=_TRAIN.hidden_dims,
                   metavar="D1,D2", help="comma-separated hidden layer sizes")
    p.add_argument("--embed-dim", type=int, default=_TRAIN.embed_dim)
    p.add_argument("--activation", choices=("ramp", "tanh"),
                   default=_TRAIN.activation)
    p.add_argument("--eval-with-teacher", action="store_true",
                   help="use the teacher encoder for evaluation")


def _add_bench_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--categories", type=int, default=_BENCH.categories)
    p.add_argument("--keypoints", type=int, default=_BENCH.keypoints)
    p.add_argument("--train-pairs", type=int, default=_BENCH.train_pairs)
    p.add_argument("--test-pairs", type=int, default=_BENCH.test_pairs)
    p.add_argument("--d-desc", type=int, default=_BENCH.d_desc)
    p.add_argument("--jitter", type=float, default=_BENCH.jitter)
    p.add_argument("--warp", type=float, default=_BENCH.warp)
    p.add_argument("--kernel-width", type=float, default=_BENCH.kernel_width)
    p.add_argument("--min-separation", type=float, default=_BENCH.min_separation)
    p.add_argument("--epochs", type=int, default=_BENCH.epochs)
    p.add_argument("--both-sides", action="store_true",
                   help="corrupt keypoints in both views")


def build_parser(overrides: dict[str, dict] | None = None) -> argparse.ArgumentParser:
    """Build the CLI parser, optionally seeding per-command defaults.

    ``overrides`` maps a command name to settings loaded from its
    ``--config`` file; they replace built-in defaults but lose to
    explicit flags.  Unknown settings raise ``ValueError``.
    """
    parser = _Parser(prog="quadmatch", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--out", required=True, help="dataset file to write (JSON lines)")
    g.add_argument("--n-pairs", type=int, default=200,
                   help="total pairs, spread over the categories")
    g.add_argument("--categories", type=int, default=_BENCH.categories)
    g.add_argument("--keypoints", type=int, default=_BENCH.keypoints)
    g.add_argument("--d-desc", type=int, default=_BENCH.d_desc)
    g.add_argument("--jitter", type=float, default=_BENCH.jitter)
    g.add_argument("--warp", type=float, default=_BENCH.warp)
    g.add_argument("--kernel-width", type=float, default=_BENCH.kernel_width)
    g.add_argument("--min-separation", type=float, default=_BENCH.min_separation)
    g.add_argument("--eta", type=float, default=0.0,
                   help="fraction of keypoints to displace per pair")
    g.add_argument("--both-sides", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    _add_config_flag(g)

    t = sub.add_parser("train", help="fit an encoder on a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--out-checkpoint", required=True,
                   help="checkpoint file to write; per-epoch history goes "
                        "to the same name plus .history.csv")
    t.add_argument("--eval-data", default=None,
                   help="optional dataset scored after every epoch")
    t.add_argument("--epochs", type=int, default=_TRAIN.epochs)
    t.add_argument("--ablation", choices=sorted(ABLATIONS), default="full")
    t.add_argument("--seed", type=int, default=0)
    _add_train_flags(t)
    _add_config_flag(t)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--use-teacher", action="store_true",
                   help="score the teacher encoder instead of the student")
    e.add_argument("--histogram-out", default=None, metavar="FILE",
                   help="also write the partner-similarity histogram as JSON")

    s = sub.add_parser("sweep", help="noise-level grid -> CSV")
    s.add_argument("--out-csv", required=True, help="CSV file to write; a "
                   "gnuplot script goes to the same name plus .gnuplot")
    s.add_argument("--etas", type=_floats, default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
                   metavar="E1,E2,...")
    s.add_argument("--methods", type=_methods,
                   default=["full", "no_distill"], metavar="M1,M2,...")
    s.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4], metavar="S1,S2,...")
    s.add_argument("--manifest", default=None,
                   help="journal of finished cells; enables resume")
    s.add_argument("--jobs", type=int, default=1,
                   help="worker processes for independent cells")
    _add_bench_flags(s)
    _add_train_flags(s)
    _add_config_flag(s)

    a = sub.add_parser("ablate", help="method comparison at one noise level")
    a.add_argument("--out-csv", required=True, help="CSV file to write")
    a.add_argument("--eta", type=float, default=0.3)
    a.add_argument("--methods", type=_methods,
                   default=sorted(ABLATIONS), metavar="M1,M2,...")
    a.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4], metavar="S1,S2,...")
    a.add_argument("--manifest", default=None)
    a.add_argument("--jobs", type=int, default=1)
    _add_bench_flags(a)
    _add_train_flags(a)
    _add_config_flag(a)

    st = sub.add_parser("selftest", help="run the built-in verification groups")
    st.add_argument("--gradient-bias", type=float, default=0.0,
                    help="corrupt analytic gradients by this much "
                         "(sanity check that the harness can fail)")
    st.add_argument("--seed", type=int, default=0)

    if overrides:
        lookup = {"generate": g, "train": t, "eval": e, "sweep": s,
                  "ablate": a, "selftest": st}
        for command, settings in overrides.items():
            sp = lookup[command]
            known = {action.dest for action in sp._actions}
            unknown = sorted(set(settings) - known)
            if unknown:
                raise ValueError(
                    f"config file has unknown settings for {command}: {unknown}"
                )
            sp.set_defaults(**settings)
    return parser


def _config_file_overrides(argv: list[str]) -> dict[str, dict]:
    """Pre-scan argv for the subcommand and its ``--config`` file."""
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if command is None or path is None:
        return {}
    settings = json.loads(Path(path).read_text())
    if not isinstance(settings, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    if "hidden_dims" in settings:
        settings["hidden_dims"] = tuple(settings["hidden_dims"])
    return {command: settings}


def _echo_config(command: str, settings: dict) -> None:
    print("config " + json.dumps({"command": command} | settings, sort_keys=True))


def _train_config_from(args, ablation: str, seed: int, epochs: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=epochs,
        momentum_t=args.momentum,
        alpha_max=args.alpha_max,
        tau=args.tau,
        within_weight=args.within_weight,
        cross_weight=args.cross_weight,
        hidden_dims=tuple(args.hidden_dims),
        embed_dim=args.embed_dim,
        activation=args.activation,
        ablation=ablation,
        seed=seed,
        eval_with_teacher=args.eval_with_teacher,
    )


def _config_dict(cfg) -> dict:
    d = asdict(cfg)
    if "hidden_dims" in d:
        d["hidden_dims"] = list(d["hidden_dims"])
    return d


def _split_total(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _cmd_generate(args) -> int:
    if args.n_pairs < 1:
        raise ValueError("--n-pairs must be positive")
    categories = [
        make_category(
            f"cat{ci:02d}", args.keypoints, args.d_desc,
            seed=[args.seed, 11, ci], kernel_width=args.kernel_width,
            min_separation=args.min_separation,
        )
        for ci in range(args.categories)
    ]
    pairs = []
    for ci, count in enumerate(_split_total(args.n_pairs, args.categories)):
        for pi in range(count):
            pairs.append(
                generate_pair(None, categories[ci], args.jitter,
                              seed=[args.seed, ci, pi], warp=args.warp)
            )
    if args.eta > 0.0:
        eta_tag = int(round(args.eta * 1000))
        pairs = [
            inject_noise(
                pair,
                NoiseConfig(eta=args.eta, seed=[args.seed, 21, eta_tag, k],
                            both_sides=args.both_sides),
            )
            for k, pair in enumerate(pairs)
        ]
    out = _data_path(args.out)
    save_dataset(pairs, out)
    flagged = sum(int(pair.noise_flags.sum()) for pair in pairs)
    print(
        f"wrote {len(pairs)} pairs of {args.keypoints} keypoints "
        f"({flagged} displaced) to {out}"
    )
    return 0


def _write_history_csv(state, config: TrainConfig, path: str) -> None:
    columns = ["epoch", "total", "infonce", "within", "cross", "distill"]
    if any("eval_accuracy" in row for row in state.history):
        columns.append("eval_accuracy")
    lines = [
        "# config " + json.dumps(_config_dict(config), sort_keys=True),
        ",".join(columns),
    ]
    for row in state.history:
        lines.append(",".join(
            str(row[c]) if c == "epoch" else repr(float(row[c]))
            for c in columns if c in row
        ))
    Path(path).write_text("\n".join(lines) + "\n")


def _cmd_train(args) -> int:
    config = _train_config_from(args, args.ablation, args.seed, args.epochs)
    dataset = load_dataset(_data_path(args.data))
    eval_pairs = load_dataset(_data_path(args.eval_data)) if args.eval_data else None
    state = train(dataset, config, eval_pairs=eval_pairs)
    save_checkpoint(state, config, args.out_checkpoint)
    history_path = args.out_checkpoint + ".history.csv"
    _write_history_csv(state, config, history_path)
    if state.history:
        last = state.history[-1]
        line = f"final epoch {last['epoch']}: loss {last['total']:.6f}"
        if "eval_accuracy" in last:
            line += f", eval accuracy {last['eval_accuracy']:.4f}"
        print(line)
    print(f"wrote checkpoint to {args.out_checkpoint}, history to {history_path}")
    return 0


def _cmd_eval(args) -> int:
    state, config = load_checkpoint(args.checkpoint)
    params = state.teacher if args.use_teacher else state.student
    pairs = load_dataset(_data_path(args.data))
    print(json.dumps(evaluate(params, pairs), sort_keys=True))
    if args.histogram_out:
        write_histogram_json(similarity_histogram(params, pairs), args.histogram_out)
        print(f"wrote histogram to {args.histogram_out}")
    return 0


def _cmd_sweep(args, etas: list[float], methods: list[str]) -> int:
    bench = BenchmarkConfig(
        categories=args.categories,
        keypoints=args.keypoints,
        train_pairs=args.train_pairs,
        test_pairs=args.test_pairs,
        d_desc=args.d_desc,
        jitter=args.jitter,
        warp=args.warp,
        kernel_width=args.kernel_width,
        min_separation=args.min_separation,
        epochs=args.epochs,
        both_sides=args.both_sides,
    )
    base = _train_config_from(args, "full", 0, args.epochs)
    rows = sweep_noise(
        bench, etas, methods, args.seeds,
        out_csv=args.out_csv, manifest_path=args.manifest, jobs=args.jobs,
        base_config=base,
    )
    script_path = args.out_csv + ".gnuplot"
    write_plot_script(args.out_csv, script_path, methods)
    print(f"wrote {len(rows)} rows to {args.out_csv}, plot script to {script_path}")
    return 0


def _cmd_selftest(args) -> int:
    results = run_selftest(gradient_bias=args.gradient_bias, seed=args.seed)
    all_ok = True
    for group, (ok, detail) in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {group}: {detail}")
        all_ok &= ok
    if not all_ok:
        print("selftest FAILED")
        return 3
    print("selftest passed")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        overrides = _config_file_overrides(argv)
        parser = build_parser(overrides)
    except (OSError, ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    settings = {k: v for k, v in vars(args).items() if k != "command"}
    if "hidden_dims" in settings:
        settings["hidden_dims"] = list(settings["hidden_dims"])
    _echo_config(args.command, settings)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "sweep":
            return _cmd_sweep(args, args.etas, args.methods)
        if args.command == "ablate":
            return _cmd_sweep(args, [args.eta], args.methods)
        if args.command == "selftest":
            return _cmd_selftest(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
