import logging
from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from palp_lab.models.role import Composition, GuidanceMode, RunMode, Weighting

logger = logging.getLogger(__name__)

DEFAULT_EARLY_STOP_GRID = (50, 100, 200, 300, 400, 500)


class GuidanceConfig(BaseModel):
    """Guidance scales and switches of the prompt-alignment branch."""

    alpha: float = Field(default=15.0, gt=0, description="clean-branch CFG scale")
    beta: float = Field(default=7.5, ge=0, description="personalized-branch CFG scale")
    w_t: Weighting = Weighting.CONSTANT
    share_noise: bool = True
    rescale: bool = True
    mode: GuidanceMode = GuidanceMode.PALP

    @model_validator(mode="after")
    def _warn_on_balanced_scales(self) -> "GuidanceConfig":
        if self.mode is GuidanceMode.PALP and self.alpha < self.beta:
            logger.warning(
                "PALP guidance with alpha=%s < beta=%s; imbalanced alpha > beta is recommended",
                self.alpha, self.beta,
            )
        return self

    @classmethod
    def composition(cls, **overrides) -> "GuidanceConfig":
        values = {"alpha": 7.5, "beta": 1.0}
        values.update(overrides)
        return cls(**values)


class TrainConfig(BaseModel):
    lr: float = Field(default=5e-5, gt=0)
    steps: int = Field(default=500, ge=1)
    batch: int = Field(default=32, ge=1)
    seed: int = 0
    guidance: GuidanceConfig = Field(default_factory=lambda: GuidanceConfig(mode=GuidanceMode.NONE))
    lambda_palp: float = Field(default=1.0, ge=0)
    early_stop_grid: Optional[tuple[int, ...]] = DEFAULT_EARLY_STOP_GRID
    lora_rank: int = Field(default=4, ge=1)
    lora_scale: float = 1.0
    lora_targets: Optional[tuple[int, ...]] = None
    eval_samples: int = Field(default=32, ge=1)
    sample_guidance: float = Field(default=7.5, ge=0)
    progress: bool = True

    @field_validator("early_stop_grid")
    @classmethod
    def _grid_is_sorted(cls, grid: Optional[tuple[int, ...]]) -> Optional[tuple[int, ...]]:
        if grid is None:
            return None
        if any(step < 1 for step in grid):
            raise ValueError("early_stop_grid steps must be >= 1")
        return tuple(sorted(set(grid)))

    def checkpoints(self) -> tuple[int, ...]:
        """Early-stop steps that fall inside the run (always including the final step)."""
        grid = self.early_stop_grid or ()
        return tuple(sorted({step for step in grid if step <= self.steps} | {self.steps}))


class PretrainConfig(BaseModel):
    steps: int = Field(default=20_000, ge=1)
    batch: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    seed: int = 0
    timesteps: int = Field(default=1000, ge=2)
    beta_min: float = Field(default=1e-4, gt=0, lt=1)
    beta_max: float = Field(default=0.02, gt=0, lt=1)
    hidden: tuple[int, ...] = (256, 256)
    time_dim: int = Field(default=32, ge=2)
    cond_dim: int = Field(default=32, ge=1)
    cond_dropout: float = Field(default=0.1, ge=0, lt=1)
    drop_background: float = Field(default=0.5, ge=0, le=1)
    n_per_cell: int = Field(default=64, ge=1)
    val_fraction: float = Field(default=0.1, gt=0, lt=1)
    target_ratio: float = Field(default=0.1, gt=0)
    require_target: bool = True
    progress: bool = True

    @field_validator("time_dim")
    @classmethod
    def _even_time_dim(cls, value: int) -> int:
        if value % 2:
            raise ValueError("time_dim must be even (sin/cos pairs)")
        return value

    @model_validator(mode="after")
    def _beta_range(self) -> "PretrainConfig":
        if self.beta_min > self.beta_max:
            raise ValueError("beta_min must be <= beta_max")
        return self


class AblationGrid(BaseModel):
    modes: tuple[RunMode, ...] = (RunMode.BASELINE, RunMode.SDS, RunMode.PALP)
    share_noise: tuple[bool, ...] = (True, False)
    rescale: tuple[bool, ...] = (True, False)
    seeds: tuple[int, ...] = (0, 1, 2)
    steps: tuple[int, ...] = DEFAULT_EARLY_STOP_GRID
    lambdas: Optional[tuple[float, ...]] = None
    include_base_reference: bool = True
    workers: int = Field(default=1, ge=1)

    @field_validator("seeds", "steps", "modes")
    @classmethod
    def _non_empty(cls, value: tuple) -> tuple:
        if not value:
            raise ValueError("ablation grid axes must be non-empty")
        return value

    @field_validator("lambdas")
    @classmethod
    def _lambdas(cls, value: Optional[tuple[float, ...]]) -> Optional[tuple[float, ...]]:
        if value is None:
            return None
        if not value or any(weight < 0 for weight in value):
            raise ValueError("lambdas must be a non-empty list of weights >= 0")
        return value


class LabConfig(BaseModel):
    """Flat key/value configuration accepted by the command line."""

    out: str = "runs"
    base: Optional[str] = None
    subject_class: str = "circle"
    subject_images: int = Field(default=4, ge=1, le=8)
    target_prompt: str = "sketch,[V]"
    composition: Composition = Composition.PAIR
    subject_prompts: Optional[tuple[str, ...]] = None
    mode: RunMode = RunMode.PALP
    alpha: float = Field(default=15.0, gt=0)
    beta: float = Field(default=7.5, ge=0)
    share_noise: bool = True
    rescale: bool = True
    weighting: Weighting = Weighting.CONSTANT
    lambda_palp: float = Field(default=1.0, ge=0)
    steps: int = Field(default=500, ge=1)
    batch: int = Field(default=32, ge=1)
    lr: float = Field(default=5e-5, gt=0)
    lora_rank: int = Field(default=4, ge=1)
    seed: int = 0
    eval_samples: int = Field(default=32, ge=1)
    pretrain_steps: int = Field(default=20_000, ge=1)
    pretrain_lr: float = Field(default=1e-3, gt=0)
    timesteps: int = Field(default=1000, ge=2)
    n_per_cell: int = Field(default=64, ge=1)
    require_target: bool = True
    workers: int = Field(default=1, ge=1)
    progress: bool = True

    model_config = {"extra": "forbid"}

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(
            alpha=self.alpha,
            beta=self.beta,
            w_t=self.weighting,
            share_noise=self.share_noise,
            rescale=self.rescale,
            mode=self.mode.guidance_mode,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            steps=self.steps,
            batch=self.batch,
            seed=self.seed,
            guidance=self.guidance(),
            lambda_palp=self.lambda_palp,
            lora_rank=self.lora_rank,
            eval_samples=self.eval_samples,
            progress=self.progress,
        )

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            steps=self.pretrain_steps,
            lr=self.pretrain_lr,
            timesteps=self.timesteps,
            n_per_cell=self.n_per_cell,
            require_target=self.require_target,
            seed=self.seed,
            progress=self.progress,
        )
