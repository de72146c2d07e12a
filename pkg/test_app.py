import json
from pathlib import Path

import pytest

from palp_lab.app import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, OUT_ENV, build_parser, resolve_config, run
from palp_lab.denoiser import read_meta
from palp_lab.denoiser.checkpoint import file_hash
from palp_lab.evalkit import write_metrics_csv
from palp_lab.models.metrics import MetricRow
from palp_lab.models.role import RunMode


@pytest.fixture(autouse=True)
def _no_out_env(monkeypatch):
    monkeypatch.delenv(OUT_ENV, raising=False)


def _tiny_flags(base, out, seed=7):
    return [
        "--base", str(base), "--out", str(out), "--seed", str(seed),
        "--steps", "2", "--batch", "2", "--eval-samples", "2", "--no-progress",
    ]


def _run_dirs(out: Path, command: str) -> dict[str, Path]:
    """run_id -> directory for every finished run of a command."""
    return {path.name: path for path in sorted(out.glob(f"{command}-*")) if (path / "manifest.json").exists()}


def _manifest(run_dir: Path) -> dict:
    return json.loads((run_dir / "manifest.json").read_text())


def test_usage_errors_exit_with_one(capsys):
    assert run([]) == EXIT_CONFIG
    assert run(["frobnicate"]) == EXIT_CONFIG
    assert run(["personalize", "--bogus"]) == EXIT_CONFIG
    assert run(["personalize", "--mode", "dreambooth"]) == EXIT_CONFIG
    assert "❌ Config error" in capsys.readouterr().out


def test_help_exits_with_zero():
    assert run(["--help"]) == EXIT_OK
    assert run(["personalize", "--help"]) == EXIT_OK


def test_bad_config_files_exit_with_one(tmp_path):
    garbage = tmp_path / "garbage.json"
    garbage.write_text("{not json")
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"learning_rate": 0.1}))

    for path in (garbage, listing, unknown, tmp_path / "missing.json"):
        assert run(["personalize", "--config", str(path)]) == EXIT_CONFIG
    assert run(["personalize", "--steps", "0"]) == EXIT_CONFIG
    assert run(["ablate", str(tmp_path / "missing-grid.json")]) == EXIT_CONFIG


def test_runtime_failures_exit_with_two(tmp_path, base_checkpoint, capsys):
    assert run(["personalize", "--out", str(tmp_path)]) == EXIT_RUNTIME
    assert run(["personalize", "--out", str(tmp_path), "--base", str(tmp_path / "missing.bin")]) == EXIT_RUNTIME
    # the default t grid reaches past the tiny schedule
    assert run(["probe", "--out", str(tmp_path), "--base", str(base_checkpoint)]) == EXIT_RUNTIME
    assert "❌ Error" in capsys.readouterr().out


def test_config_precedence(tmp_path, monkeypatch):
    config = tmp_path / "lab.json"
    config.write_text(json.dumps({"seed": 3, "steps": 7, "lr": 1e-3, "out": "from-file"}))
    parser = build_parser()

    resolved = resolve_config(parser.parse_args(["personalize", "--config", str(config), "--steps", "9"]))
    assert (resolved.seed, resolved.steps, resolved.lr, resolved.out) == (3, 9, 1e-3, "from-file")
    assert resolved.batch == 32

    monkeypatch.setenv(OUT_ENV, "from-env")
    assert resolve_config(parser.parse_args(["personalize", "--config", str(config)])).out == "from-env"
    assert resolve_config(parser.parse_args(["personalize", "--out", "from-flag"])).out == "from-flag"


def test_flags_map_onto_config_fields():
    args = build_parser().parse_args([
        "personalize", "--mode", "sds", "--lambda", "0.5", "--no-share-noise", "--no-rescale",
        "--subject", "square", "--weighting", "one_minus_alpha_bar",
    ])
    config = resolve_config(args)
    assert config.mode is RunMode.SDS
    assert config.lambda_palp == 0.5
    assert not config.share_noise and not config.rescale
    assert config.subject_class == "square"
    assert config.train_config().guidance.rescale is False

    pretrain = resolve_config(build_parser().parse_args(["pretrain", "--steps", "5", "--lr", "0.01"]))
    assert (pretrain.pretrain_steps, pretrain.pretrain_lr, pretrain.steps) == (5, 0.01, 500)


def test_multi_uses_composition_scales(tmp_path):
    parser = build_parser()
    multi = resolve_config(parser.parse_args(["multi"]))
    assert (multi.alpha, multi.beta) == (7.5, 1.0)
    single = resolve_config(parser.parse_args(["personalize"]))
    assert (single.alpha, single.beta) == (15.0, 7.5)

    config = tmp_path / "lab.json"
    config.write_text(json.dumps({"alpha": 3.0}))
    overridden = resolve_config(parser.parse_args(["multi", "--config", str(config), "--beta", "2"]))
    assert (overridden.alpha, overridden.beta) == (3.0, 2.0)


def test_zero_lambda_checkpoint_is_byte_identical_to_baseline(tmp_path, base_checkpoint):
    out = tmp_path / "runs"
    flags = _tiny_flags(base_checkpoint, out)
    assert run(["personalize", *flags, "--mode", "baseline"]) == EXIT_OK
    assert run(["personalize", *flags, "--mode", "palp", "--lambda", "0"]) == EXIT_OK

    runs = _run_dirs(out, "personalize")
    assert len(runs) == 2
    by_mode = {_manifest(path)["config"]["mode"]: path for path in runs.values()}
    baseline, palp = by_mode["baseline"], by_mode["palp"]
    assert file_hash(baseline / "checkpoint.bin") == file_hash(palp / "checkpoint.bin")
    kind, _ = read_meta(palp / "checkpoint.bin")
    assert kind == "adapter"


def test_rerun_reproduces_artifacts(tmp_path, base_checkpoint):
    out = tmp_path / "runs"
    flags = [*_tiny_flags(base_checkpoint, out), "--mode", "palp"]
    assert run(["personalize", *flags]) == EXIT_OK
    (run_dir,) = _run_dirs(out, "personalize").values()
    checkpoint = file_hash(run_dir / "checkpoint.bin")
    metrics = (run_dir / "metrics.csv").read_text()

    assert run(["personalize", *flags]) == EXIT_OK
    assert list(_run_dirs(out, "personalize").values()) == [run_dir]
    assert file_hash(run_dir / "checkpoint.bin") == checkpoint
    assert (run_dir / "metrics.csv").read_text() == metrics

    manifest = _manifest(run_dir)
    assert manifest["run_id"] == run_dir.name
    assert manifest["seed"] == 7
    assert manifest["finished_at"] is not None
    assert str(run_dir / "checkpoint.bin") in manifest["checkpoint_paths"]
    assert (run_dir / "grids" / "step0002.pgm").exists()

    assert run(["personalize", *_tiny_flags(base_checkpoint, out, seed=8), "--mode", "palp"]) == EXIT_OK
    assert len(_run_dirs(out, "personalize")) == 2


def test_multi_command(tmp_path, base_checkpoint):
    out = tmp_path / "runs"
    assert run(["multi", *_tiny_flags(base_checkpoint, out), "--mode", "baseline"]) == EXIT_OK
    (run_dir,) = _run_dirs(out, "multi").values()
    assert (run_dir / "checkpoint.bin").exists()
    assert _manifest(run_dir)["config"]["alpha"] == 7.5


def test_multi_command_with_artwork_and_subject_prompts(tmp_path, base_checkpoint):
    out = tmp_path / "runs"
    flags = [*_tiny_flags(base_checkpoint, out), "--composition", "artwork"]
    assert run(["multi", *flags, "--subject-prompt", "photo,[V1]", "--subject-prompt", "sketch,[V2],plain"]) == EXIT_OK
    (run_dir,) = _run_dirs(out, "multi").values()
    config = _manifest(run_dir)["config"]
    assert config["composition"] == "artwork"
    assert config["subject_prompts"] == ["photo,[V1]", "sketch,[V2],plain"]

    assert run(["multi", *flags, "--subject-prompt", "photo,[V2]", "--subject-prompt", "sketch,[V1]"]) == EXIT_RUNTIME
    assert run(["multi", *flags, "--composition", "collage"]) == EXIT_CONFIG


def test_ablate_command(tmp_path, base_checkpoint):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({
        "modes": ["baseline"], "share_noise": [True], "rescale": [True], "seeds": [0],
        "steps": [1, 2], "include_base_reference": False,
    }))
    out = tmp_path / "runs"
    assert run(["ablate", str(grid), *_tiny_flags(base_checkpoint, out), "--workers", "1"]) == EXIT_OK
    (run_dir,) = _run_dirs(out, "ablate").values()
    assert (run_dir / "metrics.csv").read_text().startswith("run_id,mode,step")
    assert list((run_dir / "grids").glob("*.pgm"))


def test_probe_command(tmp_path, base_checkpoint):
    out = tmp_path / "runs"
    assert run(["probe", "--base", str(base_checkpoint), "--out", str(out), "--t-grid", "9,5,0"]) == EXIT_OK
    (run_dir,) = _run_dirs(out, "probe").values()
    probe = json.loads((run_dir / "probe.json").read_text())
    assert probe["t_grid"] == [9, 5, 0]
    assert len(probe["whiteness"]) == 3
    assert (run_dir / "grids" / "x0hat.png").exists()


def test_pretrain_command(tmp_path):
    out = tmp_path / "runs"
    flags = ["--out", str(out), "--steps", "2", "--timesteps", "10", "--n-per-cell", "1", "--no-progress"]
    assert run(["pretrain", *flags]) == EXIT_RUNTIME
    assert not list(out.glob("pretrain-*/checkpoint.bin"))

    assert run(["pretrain", *flags, "--no-require-target"]) == EXIT_OK
    (run_dir,) = _run_dirs(out, "pretrain").values()
    kind, meta = read_meta(run_dir / "checkpoint.bin")
    assert kind == "base"
    assert meta["extra"]["schedule"]["T"] == 10
    assert set(json.loads((run_dir / "pretrain.json").read_text())) == {
        "initial_val_loss", "final_val_loss", "reached_target",
    }


def test_report_and_calibrate_commands(tmp_path):
    out = tmp_path / "runs"
    row = MetricRow(run_id="a", mode="palp", step=2, text_align=0.7, subject_sim=0.6, loss=0.2, seed=0)
    metrics = write_metrics_csv([row], tmp_path / "a.csv")
    assert run(["report", str(metrics), "--out", str(out)]) == EXIT_OK
    (report_dir,) = _run_dirs(out, "report").values()
    assert "| a | palp | 2 |" in (report_dir / "summary.md").read_text()

    assert run(["calibrate", "--n", "24", "--out", str(out)]) == EXIT_OK
    (calibrate_dir,) = _run_dirs(out, "calibrate").values()
    calibration = json.loads((calibrate_dir / "calibration.json").read_text())
    assert calibration["n_images"] == 24
    assert set(calibration["accuracy"]) == {"style", "class", "background"}
