import json
import logging
from pathlib import Path
from typing import Any, Sequence

from palp_lab.denoiser import ModelState, load_adapter, load_base, read_meta, save_adapter, save_base
from palp_lab.diffusion import NoiseSchedule, build_schedule
from palp_lab.evalkit import calibrate_oracles, report, write_grid, write_metrics_csv, x0hat_probe
from palp_lab.models.config import AblationGrid, GuidanceConfig, LabConfig
from palp_lab.models.manifest import RunManifest
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import PromptRole, RunMode
from palp_lab.trainer import (
    PersonalizationResult,
    SubjectSet,
    ablation_run,
    composition_subjects,
    multi_subject_personalize,
    personalize_baseline,
    personalize_palp,
    pretrain,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.csv"
MANIFEST_NAME = "manifest.json"
GRID_SAMPLES = 8


class LabRunner:
    """
    Runs one lab command and persists its artifacts under <output_root>/<run_id>/.

    The run id is derived from the command, its resolved configuration and the seed, so
    rerunning identical inputs writes to (and reproduces) the same directory.
    """

    def __init__(self, config: LabConfig, output_root: str):
        self.__config = config
        self.__output_root = output_root
        print("🚀 PALP lab runner initialized")
        print(f"📁 Output root: {self.__output_root}")

    @property
    def config(self) -> LabConfig:
        return self.__config

    def _start(self, command: str, extra: dict[str, Any] | None = None) -> RunManifest:
        settings = {**self.__config.model_dump(mode="json", exclude={"out", "progress", "workers"}), **(extra or {})}
        manifest = RunManifest.create(command, settings, self.__config.seed, self.__output_root)
        Path(manifest.output_dir).mkdir(parents=True, exist_ok=True)
        print(f"📋 Run {manifest.run_id}")
        return manifest

    def _finish(self, manifest: RunManifest) -> RunManifest:
        manifest.finish()
        path = Path(manifest.output_dir) / MANIFEST_NAME
        path.write_text(manifest.model_dump_json(indent=2))
        return manifest

    def _load_base(self, path: str | None = None) -> tuple[ModelState, NoiseSchedule]:
        path = path or self.__config.base
        if not path:
            raise FileNotFoundError("No base checkpoint given (set 'base' or pass --base)")
        _, meta = read_meta(path)
        schedule = meta.get("extra", {}).get("schedule", {})
        s = build_schedule(**schedule) if schedule else build_schedule()
        return load_base(path), s

    def _write_result(self, manifest: RunManifest, result: PersonalizationResult) -> None:
        out = Path(manifest.output_dir)
        manifest.add_checkpoint(str(save_adapter(result.state, out / CHECKPOINT_NAME)))
        manifest.add_artifact(str(write_metrics_csv(result.metrics, out / METRICS_NAME)))
        for step, evaluation in result.evaluations.items():
            for path in write_grid(evaluation.images[:GRID_SAMPLES], out / "grids" / f"step{step:04d}"):
                manifest.add_artifact(str(path))

    def pretrain(self) -> RunManifest:
        config = self.__config.pretrain_config()
        manifest = self._start("pretrain", {"pretrain": config.model_dump(mode="json", exclude={"progress"})})
        result = pretrain(config)
        schedule = {"T": config.timesteps, "beta_min": config.beta_min, "beta_max": config.beta_max}
        path = save_base(result.state, Path(manifest.output_dir) / CHECKPOINT_NAME, {"schedule": schedule})
        manifest.add_checkpoint(str(path))
        summary = Path(manifest.output_dir) / "pretrain.json"
        summary.write_text(json.dumps({
            "initial_val_loss": result.initial_val_loss,
            "final_val_loss": result.final_val_loss,
            "reached_target": result.reached_target,
        }, indent=2, sort_keys=True))
        manifest.add_artifact(str(summary))
        print(f"📉 Validation loss {result.initial_val_loss:.4f} -> {result.final_val_loss:.4f}")
        return self._finish(manifest)

    def personalize(self) -> RunManifest:
        base, s = self._load_base()
        manifest = self._start("personalize")
        subject = SubjectSet.toy(self.__config.subject_images, self.__config.seed, self.__config.subject_class)
        target = Prompt.parse(self.__config.target_prompt)
        config = self.__config.train_config()
        if self.__config.mode is RunMode.BASELINE:
            result = personalize_baseline(base, subject, config, s, target, run_id=manifest.run_id)
        else:
            result = personalize_palp(base, subject, target, config, s, run_id=manifest.run_id)
        self._write_result(manifest, result)
        return self._finish(manifest)

    def multi(self) -> RunManifest:
        base, s = self._load_base()
        manifest = self._start("multi")
        subjects = composition_subjects(self.__config.composition, self.__config.subject_images, self.__config.seed)
        prompts = None
        if self.__config.subject_prompts:
            prompts = [Prompt.parse(text, PromptRole.PERSONALIZATION) for text in self.__config.subject_prompts]
        target = Prompt.parse(self.__config.target_prompt) if "[V1]" in self.__config.target_prompt else None
        result = multi_subject_personalize(
            base, subjects, target, self.__config.train_config(), s, prompts, run_id=manifest.run_id,
        )
        self._write_result(manifest, result)
        return self._finish(manifest)

    def ablate(self, grid: AblationGrid) -> RunManifest:
        base, s = self._load_base()
        manifest = self._start("ablate", {"grid": grid.model_dump(mode="json", exclude={"workers"})})
        subject = SubjectSet.toy(self.__config.subject_images, self.__config.seed, self.__config.subject_class)
        target = Prompt.parse(self.__config.target_prompt)
        out = Path(manifest.output_dir)
        result = ablation_run(
            base, subject, target, grid, self.__config.train_config(), s, csv_path=out / METRICS_NAME,
        )
        manifest.add_artifact(str(out / METRICS_NAME))
        for run_id, run in result.runs.items():
            if run.evaluations:
                last = max(run.evaluations)
                for path in write_grid(run.evaluations[last].images[:GRID_SAMPLES], out / "grids" / run_id):
                    manifest.add_artifact(str(path))
        return self._finish(manifest)

    def probe(self, prompt: Prompt, t_grid: Sequence[int], adapter: str | None = None) -> RunManifest:
        base, s = self._load_base()
        state = load_adapter(base, adapter) if adapter else base
        manifest = self._start("probe", {"prompt": prompt.to_dict(), "t_grid": list(t_grid), "adapter": adapter})
        strip = x0hat_probe(state, prompt, t_grid, self.__config.seed, s)
        out = Path(manifest.output_dir)
        for path in write_grid(strip.images, out / "grids" / "x0hat", cols=len(t_grid)):
            manifest.add_artifact(str(path))
        summary = out / "probe.json"
        summary.write_text(json.dumps({"t_grid": list(strip.t_grid), "whiteness": list(strip.whiteness)}, indent=2))
        manifest.add_artifact(str(summary))
        return self._finish(manifest)

    def report(self, metric_paths: Sequence[str]) -> RunManifest:
        manifest = self._start("report", {"inputs": list(metric_paths)})
        for path in report(metric_paths, manifest.output_dir):
            manifest.add_artifact(str(path))
        return self._finish(manifest)

    def calibrate(self, n: int) -> RunManifest:
        manifest = self._start("calibrate", {"n": n})
        calibration = calibrate_oracles(n, self.__config.seed)
        path = Path(manifest.output_dir) / "calibration.json"
        path.write_text(json.dumps({**calibration.model_dump(), "passed": calibration.passed}, indent=2, sort_keys=True))
        manifest.add_artifact(str(path))
        status = "✅" if calibration.passed else "⚠️"
        print(f"{status} Oracle accuracy: {calibration.accuracy}")
        return self._finish(manifest)


def composition_defaults() -> dict[str, float]:
    preset = GuidanceConfig.composition()
    return {"alpha": preset.alpha, "beta": preset.beta}
