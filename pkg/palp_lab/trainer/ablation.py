import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from palp_lab.denoiser import ModelState
from palp_lab.diffusion import NoiseSchedule
from palp_lab.evalkit.report import write_metrics_csv
from palp_lab.models.config import AblationGrid, GuidanceConfig, TrainConfig
from palp_lab.models.metrics import MetricRow
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import RunMode
from palp_lab.trainer.personalize import PersonalizationResult, decompose, evaluate, personalize
from palp_lab.trainer.subject import SubjectSet

logger = logging.getLogger(__name__)

BASE_REFERENCE = "base"


@dataclass(frozen=True)
class AblationCell:
    mode: RunMode
    share_noise: bool
    rescale: bool
    seed: int
    lambda_palp: float | None = None

    @property
    def run_id(self) -> str:
        if self.mode is RunMode.BASELINE:
            return f"baseline-seed{self.seed}"
        weight = "" if self.lambda_palp is None else f"-lambda{self.lambda_palp:g}"
        return f"{self.mode.value}-share{int(self.share_noise)}-rescale{int(self.rescale)}{weight}-seed{self.seed}"

    def train_config(self, config: TrainConfig, grid: AblationGrid) -> TrainConfig:
        guidance = GuidanceConfig(**{
            **config.guidance.model_dump(),
            "mode": self.mode.guidance_mode,
            "share_noise": self.share_noise,
            "rescale": self.rescale,
        })
        update = {
            "seed": self.seed,
            "steps": max(grid.steps),
            "early_stop_grid": tuple(grid.steps),
            "guidance": guidance,
            "progress": config.progress and grid.workers == 1,
        }
        if self.lambda_palp is not None:
            update["lambda_palp"] = self.lambda_palp
        return config.model_copy(update=update)


@dataclass(frozen=True, eq=False)
class AblationResult:
    rows: tuple[MetricRow, ...]
    runs: dict[str, PersonalizationResult]


def ablation_cells(grid: AblationGrid) -> list[AblationCell]:
    """Baseline once per seed (noise sharing, rescale and lambda do not apply); guided modes over every switch."""
    cells = []
    for mode in grid.modes:
        for seed in grid.seeds:
            if mode is RunMode.BASELINE:
                cells.append(AblationCell(mode, False, False, seed))
                continue
            for share_noise in grid.share_noise:
                for rescale in grid.rescale:
                    for lambda_palp in grid.lambdas or (None,):
                        cells.append(AblationCell(mode, share_noise, rescale, seed, lambda_palp))
    return cells


def base_reference(
        base: ModelState,
        subject: SubjectSet,
        target: Prompt,
        config: TrainConfig,
        s: NoiseSchedule,
        seed: int,
) -> MetricRow:
    """The pretrained model prompted with the class word instead of the placeholder, as step 0."""
    table = base.table.base().add_placeholder(subject.placeholder, subject.class_token)
    y_c = decompose(target, table)
    evaluation = evaluate(base.base(), y_c, y_c, [subject.images], config.model_copy(update={"seed": seed}), s)
    return MetricRow(
        run_id=f"{BASE_REFERENCE}-seed{seed}",
        mode=BASE_REFERENCE,
        step=0,
        text_align=evaluation.text_align,
        subject_sim=evaluation.subject_sim,
        loss=float("nan"),
        seed=seed,
        text_style=evaluation.elements.get("style"),
        text_class=evaluation.elements.get("class"),
        text_background=evaluation.elements.get("background"),
    )


def ablation_run(
        base: ModelState,
        subject: SubjectSet,
        target: Prompt,
        grid: AblationGrid,
        config: TrainConfig,
        s: NoiseSchedule,
        guide: ModelState | None = None,
        csv_path: str | Path | None = None,
) -> AblationResult:
    """
    Runs every cell of the grid, each fully independent, on `grid.workers` threads.

    Rows come out in cell order regardless of completion order: base references first,
    then each cell's checkpoints.
    """
    cells = ablation_cells(grid)
    logger.info("Ablation: %d cells on %d worker(s)", len(cells), grid.workers)

    def run_cell(cell: AblationCell) -> PersonalizationResult:
        return personalize(base, [subject], target, cell.train_config(config, grid), s, guide, run_id=cell.run_id)

    with ThreadPoolExecutor(max_workers=grid.workers) as pool:
        results = list(pool.map(run_cell, cells))

    rows: list[MetricRow] = []
    if grid.include_base_reference:
        rows.extend(base_reference(base, subject, target, config, s, seed) for seed in grid.seeds)
    for result in results:
        rows.extend(result.metrics)
    if csv_path is not None:
        write_metrics_csv(rows, csv_path)
    return AblationResult(tuple(rows), {result.run_id: result for result in results})
