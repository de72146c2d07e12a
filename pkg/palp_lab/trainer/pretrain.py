import logging
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from palp_lab.denoiser import ModelState, init_params, init_table, trainable_set
from palp_lab.diffcore import NonFiniteError, Tape, grad
from palp_lab.diffusion import NoiseSchedule, build_schedule, denoise_loss
from palp_lab.evalkit.dataset import Dataset, gen_dataset
from palp_lab.models.config import PretrainConfig
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import TrainableMode
from palp_lab.prompts import base_vocabulary
from palp_lab.trainer.errors import PretrainTargetMissedError, TrainingDivergedError
from palp_lab.trainer.optimizer import AdamOptimizer
from palp_lab.trainer.state import Stream, TrainState, stream_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PretrainResult:
    state: ModelState
    schedule: NoiseSchedule
    initial_val_loss: float
    final_val_loss: float
    losses: tuple[float, ...]
    target_ratio: float

    @property
    def reached_target(self) -> bool:
        return self.final_val_loss < self.target_ratio * self.initial_val_loss


def training_prompt(label: tuple[str, str, str], rng: np.random.Generator, config: PretrainConfig) -> Prompt:
    """Full label, label without background, or the null prompt (condition dropout)."""
    if rng.random() < config.cond_dropout:
        return Prompt.null()
    style, shape, bg = label
    if rng.random() < config.drop_background:
        return Prompt((style, shape))
    return Prompt((style, shape, bg))


def pretrain(config: PretrainConfig, dataset: Dataset | None = None) -> PretrainResult:
    """
    Trains the base denoiser and the base embedding rows on the attribute grid.

    Args:
        config: optimization and architecture settings
        dataset: training images (defaults to the full toy grid at config.n_per_cell)

    Returns:
        PretrainResult with the base model and its validation losses

    Raises:
        PretrainTargetMissedError: validation loss missed its target and config.require_target is set
    """
    s = build_schedule(config.timesteps, config.beta_min, config.beta_max)
    dataset = dataset if dataset is not None else gen_dataset(n_per_cell=config.n_per_cell, seed=config.seed)
    rng = stream_rng(config.seed, Stream.PRETRAIN)

    data = dataset.model_space()
    order = rng.permutation(len(dataset))
    n_val = max(1, int(round(len(dataset) * config.val_fraction)))
    val_index, train_index = order[:n_val], order[n_val:]
    if train_index.size == 0:
        raise ValueError("Validation split leaves no training images")

    params = init_params(dataset.images.shape[1:], config.hidden, config.time_dim, config.cond_dim, rng)
    table = init_table(base_vocabulary(), config.cond_dim, rng)
    model = ModelState(params, table)
    names = trainable_set(TrainableMode.PRETRAIN, model)

    val_x0 = data[val_index]
    val_prompts = [Prompt(dataset.labels[i]) for i in val_index]
    val_t = rng.integers(0, s.T, size=n_val)
    val_eps = rng.standard_normal(val_x0.shape)

    def validation_loss(state: ModelState) -> float:
        return denoise_loss(state, val_x0, val_prompts, val_t, val_eps, s).item()

    initial = validation_loss(model)
    logger.info("Pretraining on %d images (%d held out), initial val loss %.4f", train_index.size, n_val, initial)

    state = TrainState(model, AdamOptimizer(config.lr))
    losses = []
    for step in tqdm(range(1, config.steps + 1), desc="pretrain", disable=not config.progress):
        index = rng.choice(train_index, size=config.batch)
        t = rng.integers(0, s.T, size=config.batch)
        eps = rng.standard_normal((config.batch, data.shape[1]))
        prompts = [training_prompt(dataset.labels[i], rng, config) for i in index]
        try:
            tape = Tape()
            bound = state.model.bind(tape, names)
            loss = denoise_loss(bound, data[index], prompts, t, eps, s)
            by_leaf = grad(loss, bound.leaves.values())
        except NonFiniteError as e:
            raise TrainingDivergedError(f"Pretraining diverged at step {step}: {e}") from e
        grads = {name: by_leaf[leaf] for name, leaf in bound.leaves.items()}
        arrays = state.model.named_arrays()
        updated, optimizer = state.optimizer.apply({name: arrays[name] for name in grads}, grads)
        state = TrainState(state.model.replace(updated), optimizer, step)
        losses.append(loss.item())

    final = validation_loss(state.model)
    result = PretrainResult(state.model, s, initial, final, tuple(losses), config.target_ratio)
    if result.reached_target:
        logger.info("Pretraining done: val loss %.4f -> %.4f", initial, final)
        return result
    message = f"Validation loss {final:.4f} did not fall below {config.target_ratio:.2f} x initial {initial:.4f}"
    if config.require_target:
        raise PretrainTargetMissedError(message)
    logger.warning(message)
    return result
