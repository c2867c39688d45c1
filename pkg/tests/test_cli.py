"""Command-line surface: flags, exit codes, config files, reproducible outputs."""

import json

import pytest

from quadmatch.cli import main
from quadmatch.synthetic import load_dataset
from quadmatch.trainer import load_checkpoint

FAST_TRAIN = ["--hidden-dims", "8", "--embed-dim", "6", "--batch-size", "4"]


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_dataset(tmp_path, capsys, name="data.jsonl", n_pairs=6, eta=0.0, seed=0):
    path = tmp_path / name
    argv = ["generate", "--out", str(path), "--n-pairs", str(n_pairs),
            "--categories", "2", "--keypoints", "5", "--d-desc", "4",
            "--seed", str(seed)]
    if eta > 0:
        argv += ["--eta", str(eta)]
    code, _, _ = run(argv, capsys)
    assert code == 0
    return path


class TestGenerate:
    def test_writes_loadable_dataset_and_reports(self, tmp_path, capsys):
        path = tmp_path / "pairs.jsonl"
        code, out, err = run(
            ["generate", "--out", str(path), "--n-pairs", "6",
             "--categories", "2", "--keypoints", "5", "--d-desc", "4"],
            capsys)
        assert code == 0
        assert out.startswith("config ")
        assert f"wrote 6 pairs of 5 keypoints (0 displaced) to {path}" in out
        pairs = load_dataset(path)
        assert len(pairs) == 6
        assert {p.category.label for p in pairs} == {"cat00", "cat01"}

    def test_corruption_counts_reported(self, tmp_path, capsys):
        path = tmp_path / "noisy.jsonl"
        code, out, _ = run(
            ["generate", "--out", str(path), "--n-pairs", "4",
             "--categories", "2", "--keypoints", "5", "--d-desc", "4",
             "--eta", "0.4"],
            capsys)
        assert code == 0
        # floor(0.4 * 5) = 2 displaced keypoints in each of 4 pairs.
        assert "(8 displaced)" in out
        pairs = load_dataset(path)
        assert all(int(p.noise_flags.sum()) == 2 for p in pairs)

    def test_same_seed_gives_identical_bytes(self, tmp_path, capsys):
        a = write_dataset(tmp_path, capsys, "a.jsonl", seed=3)
        b = write_dataset(tmp_path, capsys, "b.jsonl", seed=3)
        assert a.read_bytes() == b.read_bytes()
        c = write_dataset(tmp_path, capsys, "c.jsonl", seed=4)
        assert a.read_bytes() != c.read_bytes()

    def test_relative_out_lands_in_data_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("QUADMATCH_DATA_DIR", str(tmp_path))
        code, out, _ = run(
            ["generate", "--out", "rel.jsonl", "--n-pairs", "2",
             "--categories", "1", "--keypoints", "4", "--d-desc", "3"],
            capsys)
        assert code == 0
        assert (tmp_path / "rel.jsonl").exists()
        assert str(tmp_path / "rel.jsonl") in out

    def test_absolute_out_ignores_data_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("QUADMATCH_DATA_DIR", str(tmp_path / "elsewhere"))
        path = tmp_path / "abs.jsonl"
        code, _, _ = run(
            ["generate", "--out", str(path), "--n-pairs", "2",
             "--categories", "1", "--keypoints", "4", "--d-desc", "3"],
            capsys)
        assert code == 0
        assert path.exists()

    def test_bad_count_is_a_config_error(self, tmp_path, capsys):
        code, _, err = run(
            ["generate", "--out", str(tmp_path / "x.jsonl"), "--n-pairs", "0"],
            capsys)
        assert code == 2
        assert "error:" in err


class TestTrainEval:
    def test_train_writes_checkpoint_and_history(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        ckpt = tmp_path / "run.ckpt"
        code, out, _ = run(
            ["train", "--data", str(data), "--out-checkpoint", str(ckpt),
             "--epochs", "2", "--seed", "1", *FAST_TRAIN],
            capsys)
        assert code == 0
        assert f"wrote checkpoint to {ckpt}" in out
        state, config = load_checkpoint(ckpt)
        assert config.epochs == 2
        assert config.seed == 1
        assert config.hidden_dims == (8,)
        assert len(state.history) == 2
        history = (tmp_path / "run.ckpt.history.csv").read_text().splitlines()
        assert history[0].startswith("# config ")
        assert history[1] == "epoch,total,infonce,within,cross,distill"
        assert len(history) == 4  # comment + header + one row per epoch
        assert history[2].split(",")[0] == "0"

    def test_eval_data_adds_accuracy_column(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys, "train.jsonl")
        holdout = write_dataset(tmp_path, capsys, "test.jsonl", seed=9)
        ckpt = tmp_path / "run.ckpt"
        code, out, _ = run(
            ["train", "--data", str(data), "--eval-data", str(holdout),
             "--out-checkpoint", str(ckpt), "--epochs", "1", *FAST_TRAIN],
            capsys)
        assert code == 0
        assert "eval accuracy" in out
        header = (tmp_path / "run.ckpt.history.csv").read_text().splitlines()[1]
        assert header.endswith(",eval_accuracy")

    def test_ablation_flag_lands_in_checkpoint(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        ckpt = tmp_path / "nd.ckpt"
        code, _, _ = run(
            ["train", "--data", str(data), "--out-checkpoint", str(ckpt),
             "--epochs", "1", "--ablation", "no_distill", *FAST_TRAIN],
            capsys)
        assert code == 0
        _, config = load_checkpoint(ckpt)
        assert config.ablation == "no_distill"

    def test_eval_prints_accuracy_json(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        ckpt = tmp_path / "run.ckpt"
        run(["train", "--data", str(data), "--out-checkpoint", str(ckpt),
             "--epochs", "1", *FAST_TRAIN], capsys)
        code, out, _ = run(
            ["eval", "--checkpoint", str(ckpt), "--data", str(data)], capsys)
        assert code == 0
        payload = json.loads(out.splitlines()[1])  # line 0 is the config echo
        assert 0.0 <= payload["accuracy"] <= 1.0
        assert payload["n_pairs"] == 6

    def test_eval_histogram_output(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        ckpt = tmp_path / "run.ckpt"
        run(["train", "--data", str(data), "--out-checkpoint", str(ckpt),
             "--epochs", "1", *FAST_TRAIN], capsys)
        hist_path = tmp_path / "hist.json"
        code, out, _ = run(
            ["eval", "--checkpoint", str(ckpt), "--data", str(data),
             "--histogram-out", str(hist_path)],
            capsys)
        assert code == 0
        payload = json.loads(hist_path.read_text())
        assert payload["version"] == 1
        assert sum(payload["clean_counts"]) + sum(payload["noisy_counts"]) == 30

    def test_missing_checkpoint_is_a_config_error(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        code, _, err = run(
            ["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
             "--data", str(data)],
            capsys)
        assert code == 2
        assert "error:" in err

    def test_train_reads_relative_data_from_data_dir(self, tmp_path, capsys,
                                                     monkeypatch):
        monkeypatch.setenv("QUADMATCH_DATA_DIR", str(tmp_path))
        write_dataset(tmp_path, capsys, "d.jsonl")
        ckpt = tmp_path / "env.ckpt"
        code, _, _ = run(
            ["train", "--data", "d.jsonl", "--out-checkpoint", str(ckpt),
             "--epochs", "1", *FAST_TRAIN],
            capsys)
        assert code == 0
        assert ckpt.exists()


SWEEP_ARGS = ["--categories", "2", "--keypoints", "5", "--train-pairs", "6",
              "--test-pairs", "4", "--d-desc", "4", "--epochs", "1",
              *FAST_TRAIN]


class TestSweepAndAblate:
    def test_sweep_writes_csv_and_plot_script(self, tmp_path, capsys):
        csv = tmp_path / "sweep.csv"
        code, out, _ = run(
            ["sweep", "--out-csv", str(csv), "--etas", "0,0.4",
             "--methods", "full", "--seeds", "0", *SWEEP_ARGS],
            capsys)
        assert code == 0
        assert "wrote 2 rows" in out
        lines = csv.read_text().splitlines()
        assert lines[0] == "eta,method,seed,accuracy,mean_clean_sim,mean_noisy_sim"
        assert len(lines) == 3
        script = (tmp_path / "sweep.csv.gnuplot").read_text()
        assert "sweep.csv" in script and "plot" in script

    def test_sweep_is_reproducible_byte_for_byte(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["--etas", "0,0.4", "--methods", "full", "--seeds", "0,1",
                *SWEEP_ARGS]
        assert run(["sweep", "--out-csv", str(a), *args], capsys)[0] == 0
        assert run(["sweep", "--out-csv", str(b), *args], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_sweep_manifest_resume(self, tmp_path, capsys):
        csv = tmp_path / "sweep.csv"
        manifest = tmp_path / "sweep.manifest"
        args = ["sweep", "--out-csv", str(csv), "--manifest", str(manifest),
                "--etas", "0,0.4", "--methods", "full", "--seeds", "0",
                *SWEEP_ARGS]
        assert run(args, capsys)[0] == 0
        first = csv.read_bytes()
        assert manifest.exists()
        csv.unlink()
        assert run(args, capsys)[0] == 0  # all cells come from the journal
        assert csv.read_bytes() == first

    def test_ablate_compares_methods_at_one_eta(self, tmp_path, capsys):
        csv = tmp_path / "ablate.csv"
        code, _, _ = run(
            ["ablate", "--out-csv", str(csv), "--eta", "0.4",
             "--methods", "full,no_distill,infonce_only", "--seeds", "0",
             *SWEEP_ARGS],
            capsys)
        assert code == 0
        lines = csv.read_text().splitlines()
        methods = [line.split(",")[1] for line in lines[1:]]
        assert sorted(methods) == ["full", "infonce_only", "no_distill"]
        assert all(line.split(",")[0] == "0.4" for line in lines[1:])

    def test_unknown_method_token_is_a_usage_error(self, tmp_path, capsys):
        code, _, err = run(
            ["sweep", "--out-csv", str(tmp_path / "x.csv"),
             "--methods", "full,nonsense", *SWEEP_ARGS],
            capsys)
        assert code == 1
        assert "unknown method" in err


class TestConfigFile:
    def test_config_file_overrides_defaults(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "hidden_dims": [8],
                                   "embed_dim": 6}))
        ckpt = tmp_path / "run.ckpt"
        code, _, _ = run(
            ["train", "--data", str(data), "--out-checkpoint", str(ckpt),
             "--config", str(cfg)],
            capsys)
        assert code == 0
        _, config = load_checkpoint(ckpt)
        assert config.epochs == 1
        assert config.hidden_dims == (8,)

    def test_explicit_flag_beats_config_file(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 5, "hidden_dims": [8],
                                   "embed_dim": 6}))
        ckpt = tmp_path / "run.ckpt"
        code, _, _ = run(
            ["train", "--data", str(data), "--out-checkpoint", str(ckpt),
             "--config", str(cfg), "--epochs", "2"],
            capsys)
        assert code == 0
        _, config = load_checkpoint(ckpt)
        assert config.epochs == 2  # flag wins over file

    def test_config_equals_syntax(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "hidden_dims": [8],
                                   "embed_dim": 6}))
        ckpt = tmp_path / "run.ckpt"
        code, _, _ = run(
            ["train", "--data", str(data), "--out-checkpoint", str(ckpt),
             f"--config={cfg}"],
            capsys)
        assert code == 0

    def test_unknown_key_is_a_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochz": 3}))
        code, _, err = run(
            ["train", "--data", "d", "--out-checkpoint", "c",
             "--config", str(cfg)],
            capsys)
        assert code == 2
        assert "error:" in err

    def test_malformed_json_is_a_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        code, _, err = run(
            ["train", "--data", "d", "--out-checkpoint", "c",
             "--config", str(cfg)],
            capsys)
        assert code == 2
        assert "error:" in err

    def test_non_object_config_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2, 3]")
        code, _, err = run(
            ["generate", "--out", "x.jsonl", "--config", str(cfg)], capsys)
        assert code == 2
        assert "JSON object" in err

    def test_echo_line_reflects_merged_settings(self, tmp_path, capsys):
        data = write_dataset(tmp_path, capsys)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "hidden_dims": [8],
                                   "embed_dim": 6}))
        code, out, _ = run(
            ["train", "--data", str(data),
             "--out-checkpoint", str(tmp_path / "c.ckpt"),
             "--config", str(cfg)],
            capsys)
        assert code == 0
        echoed = json.loads(out.splitlines()[0].removeprefix("config "))
        assert echoed["command"] == "train"
        assert echoed["epochs"] == 1
        assert echoed["hidden_dims"] == [8]


class TestUsageErrors:
    def test_no_subcommand(self, capsys):
        code, _, err = run([], capsys)
        assert code == 1
        assert "usage" in err.lower()

    def test_unknown_subcommand(self, capsys):
        assert run(["frobnicate"], capsys)[0] == 1

    def test_unknown_flag(self, capsys):
        assert run(["selftest", "--wat"], capsys)[0] == 1

    def test_missing_required_flag(self, capsys):
        assert run(["generate"], capsys)[0] == 1


class TestSelftestCommand:
    def test_all_groups_pass(self, capsys):
        code, out, _ = run(["selftest"], capsys)
        assert code == 0
        lines = out.splitlines()
        pass_lines = [l for l in lines if l.startswith("PASS ")]
        assert len(pass_lines) == 5
        assert lines[-1] == "selftest passed"

    def test_gradient_bias_is_detected(self, capsys):
        # Negative control: deliberately biasing the analytic gradients
        # must make the gradient group (and only its exit path) fail.
        code, out, _ = run(["selftest", "--gradient-bias", "0.5"], capsys)
        assert code == 3
        assert any(l.startswith("FAIL gradient-checks") for l in out.splitlines())
        assert "selftest FAILED" in out
