import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from tqdm import tqdm

from palp_lab.denoiser import EmbeddingTable, ModelState, init_lora, trainable_set
from palp_lab.diffcore import NonFiniteError, Tape, Tensor, grad, mse
from palp_lab.diffusion import NoiseSchedule, q_sample, sample
from palp_lab.evalkit.dataset import to_image_space
from palp_lab.evalkit.oracles import subject_sim, text_align_score
from palp_lab.guidance import GuidanceBranch, get_guidance
from palp_lab.models.config import TrainConfig
from palp_lab.models.metrics import MetricRow
from palp_lab.models.prompt import Prompt, PromptRoleError
from palp_lab.models.role import Composition, GuidanceMode, PromptRole, TrainableMode
from palp_lab.prompts import DEFAULT_TARGET, PLACEHOLDERS_MULTI
from palp_lab.trainer.errors import PromptDecompositionError, TrainingDivergedError
from palp_lab.trainer.optimizer import AdamOptimizer
from palp_lab.trainer.state import PersonalizationBatch, Stream, TrainState, draw_batch, stream_rng, stream_seed
from palp_lab.trainer.subject import SubjectSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StepGradients:
    grads: dict[str, np.ndarray]
    loss: float
    guidance_norm: float = 0.0


@dataclass(frozen=True, eq=False)
class Evaluation:
    text_align: float
    elements: dict[str, float]
    subject_sims: tuple[float, ...]
    images: np.ndarray

    @property
    def subject_sim(self) -> float:
        return float(np.mean(self.subject_sims))


@dataclass(frozen=True, eq=False)
class PersonalizationResult:
    run_id: str
    state: ModelState
    metrics: tuple[MetricRow, ...]
    losses: tuple[float, ...]
    evaluations: dict[int, Evaluation] = field(default_factory=dict)


def decompose(y: Prompt, table: EmbeddingTable) -> Prompt:
    """y^c: the target with each placeholder swapped for its registered class token."""
    try:
        return y.clean(table.class_tokens)
    except PromptRoleError as e:
        raise PromptDecompositionError(str(e)) from e


def mode_label(config: TrainConfig) -> str:
    mode = config.guidance.mode
    return "baseline" if mode is GuidanceMode.NONE else mode.value


def prepare_model(base: ModelState, subjects: Sequence[SubjectSet], config: TrainConfig) -> ModelState:
    """Base weights, one placeholder row per subject (copied from its class row) and a fresh adapter."""
    table = base.table.base()
    for subject in subjects:
        table = table.add_placeholder(subject.placeholder, subject.class_token)
    lora = init_lora(
        base.params,
        config.lora_rank,
        config.lora_scale,
        stream_rng(config.seed, Stream.INIT),
        config.lora_targets,
    )
    return ModelState(base.params, table, lora)


def step_gradients(
        model: ModelState,
        batch: PersonalizationBatch,
        y_c: Prompt,
        config: TrainConfig,
        s: NoiseSchedule,
        guide: ModelState,
) -> StepGradients:
    """
    Gradient of the personalization loss plus lambda times the guidance contribution.

    Both branches share one forward of the personalized model: its x̂₀ feeds the guidance
    branch. With lambda = 0 or mode none the guidance branch is not evaluated at all.
    """
    names = trainable_set(TrainableMode.PERSONALIZE, model)
    tape = Tape()
    bound = model.bind(tape, names)
    prompts = list(batch.prompts)

    # 1. Personalization branch
    x_t = q_sample(batch.x0, batch.t, batch.eps, s)
    eps_pred = bound.predict(x_t, batch.t, prompts)
    loss = mse(eps_pred, Tensor(batch.eps))
    leaves = bound.leaves
    by_leaf = grad(loss, leaves.values())
    grads = {name: by_leaf[leaf] for name, leaf in leaves.items()}

    # 2. Prompt-alignment branch
    cfg = config.guidance
    if cfg.mode is GuidanceMode.NONE or config.lambda_palp == 0:
        return StepGradients(grads, loss.item())
    branch = GuidanceBranch.from_prediction(
        x_t, eps_pred, batch.t, batch.eps, [y_c] * len(prompts), prompts, cfg, s, batch.fresh_eps,
    )
    contribution = get_guidance(cfg.mode).contribution(
        guide, model, branch, leaves, cfg, s, normalizer=float(batch.eps.size),
    )
    combined = {name: grads[name] + config.lambda_palp * contribution.grads[name] for name in grads}
    return StepGradients(combined, loss.item(), float(np.linalg.norm(contribution.direction.data)))


def train_step(
        state: TrainState,
        batch: PersonalizationBatch,
        y_c: Prompt,
        config: TrainConfig,
        s: NoiseSchedule,
        guide: ModelState,
) -> tuple[TrainState, StepGradients]:
    try:
        gradients = step_gradients(state.model, batch, y_c, config, s, guide)
    except NonFiniteError as e:
        raise TrainingDivergedError(f"Personalization diverged at step {state.step + 1}: {e}") from e
    arrays = state.model.named_arrays()
    updated, optimizer = state.optimizer.apply({name: arrays[name] for name in gradients.grads}, gradients.grads)
    if not all(np.all(np.isfinite(array)) for array in updated.values()):
        raise TrainingDivergedError(f"Non-finite parameters after step {state.step + 1}")
    return TrainState(state.model.replace(updated), optimizer, state.step + 1), gradients


def palp_step(
        state: TrainState,
        batch: PersonalizationBatch,
        y: Prompt,
        config: TrainConfig,
        s: NoiseSchedule,
        guide: ModelState | None = None,
) -> TrainState:
    """
    One optimizer step on grad(personalization loss) + lambda * PALP gradient.

    Args:
        state: current model and optimizer
        batch: personalization samples, noise and prompts
        y: target prompt containing the placeholder, e.g. (sketch, [V])
        config: training configuration with guidance.mode == palp
        s: noise schedule
        guide: frozen guiding model (defaults to the personalized model's base)

    Returns:
        The next TrainState
    """
    if config.guidance.mode is not GuidanceMode.PALP:
        raise ValueError(f"palp_step needs guidance mode palp, got {config.guidance.mode}")
    y_c = decompose(y, state.model.table)
    guide = guide if guide is not None else state.model.base()
    next_state, _ = train_step(state, batch, y_c, config, s, guide)
    return next_state


def evaluate(
        model: ModelState,
        prompt: Prompt,
        y_c: Prompt,
        subject_refs: Sequence[np.ndarray],
        config: TrainConfig,
        s: NoiseSchedule,
) -> Evaluation:
    """
    Samples with the (placeholder) prompt and scores against the clean prompt.

    Args:
        model: model to sample from
        prompt: prompt fed to the sampler
        y_c: clean prompt the text-alignment oracle scores against
        subject_refs: one reference stack per subject
        config: eval_samples, sample_guidance and seed
        s: noise schedule
    """
    x = sample(model, prompt, s, config.sample_guidance, stream_seed(config.seed, Stream.EVAL), config.eval_samples)
    images = to_image_space(x)
    scores = [text_align_score(image, y_c) for image in images]
    elements: dict[str, list[float]] = {}
    for score in scores:
        for kind, value in score.by_kind().items():
            elements.setdefault(kind, []).append(value)
    sims = tuple(float(np.mean([subject_sim(image, refs) for image in images])) for refs in subject_refs)
    return Evaluation(
        text_align=float(np.mean([score.text_align for score in scores])),
        elements={kind: float(np.mean(values)) for kind, values in elements.items()},
        subject_sims=sims,
        images=images,
    )


def metric_row(run_id: str, mode: str, step: int, loss: float, seed: int, evaluation: Evaluation) -> MetricRow:
    return MetricRow(
        run_id=run_id,
        mode=mode,
        step=step,
        text_align=evaluation.text_align,
        subject_sim=evaluation.subject_sim,
        loss=loss,
        seed=seed,
        text_style=evaluation.elements.get("style"),
        text_class=evaluation.elements.get("class"),
        text_background=evaluation.elements.get("background"),
    )


def personalize(
        base: ModelState,
        subjects: Sequence[SubjectSet],
        target: Prompt,
        config: TrainConfig,
        s: NoiseSchedule,
        guide: ModelState | None = None,
        run_id: str | None = None,
        evaluate_checkpoints: bool = True,
) -> PersonalizationResult:
    """
    Personalization loop shared by every mode.

    Each step trains on one subject (drawn uniformly when there are several) and records a
    metric row at every early-stop checkpoint.
    """
    model = prepare_model(base, subjects, config)
    y_c = decompose(target, model.table)
    guide = guide if guide is not None else model.base()
    label = mode_label(config)
    run_id = run_id or f"{label}-seed{config.seed}"
    checkpoints = set(config.checkpoints())
    refs = [subject.images for subject in subjects]

    state = TrainState(model, AdamOptimizer(config.lr))
    losses, metrics, evaluations = [], [], {}
    logger.info("Personalizing %s: mode=%s target=%s clean=%s steps=%d", run_id, label, target, y_c, config.steps)
    for step in tqdm(range(1, config.steps + 1), desc=run_id, disable=not config.progress):
        pick = 0
        if len(subjects) > 1:
            pick = int(stream_rng(config.seed, Stream.SUBJECT, step).integers(len(subjects)))
        batch = draw_batch(subjects[pick], config.batch, s.T, config.seed, step)
        state, gradients = train_step(state, batch, y_c, config, s, guide)
        losses.append(gradients.loss)
        if evaluate_checkpoints and step in checkpoints:
            evaluation = evaluate(state.model, target, y_c, refs, config, s)
            evaluations[step] = evaluation
            metrics.append(metric_row(run_id, label, step, gradients.loss, config.seed, evaluation))
            logger.debug("%s step %d: text_align=%.3f subject_sim=%.3f", run_id, step,
                         evaluation.text_align, evaluation.subject_sim)
    return PersonalizationResult(run_id, state.model, tuple(metrics), tuple(losses), evaluations)


def personalize_baseline(
        base: ModelState,
        subject: SubjectSet,
        config: TrainConfig,
        s: NoiseSchedule,
        target: Prompt | None = None,
        **kwargs,
) -> PersonalizationResult:
    """Personalization loss only, over the adapter and the placeholder row."""
    if config.guidance.mode is not GuidanceMode.NONE:
        raise ValueError(f"Baseline personalization needs guidance mode none, got {config.guidance.mode}")
    target = target or Prompt(DEFAULT_TARGET)
    return personalize(base, [subject], target, config, s, **kwargs)


def personalize_palp(
        base: ModelState,
        subject: SubjectSet,
        target: Prompt,
        config: TrainConfig,
        s: NoiseSchedule,
        **kwargs,
) -> PersonalizationResult:
    """Personalization with the prompt-aligned guidance branch (or SDS, for the ablation)."""
    if config.guidance.mode not in (GuidanceMode.PALP, GuidanceMode.SDS):
        raise ValueError(f"Guided personalization needs mode palp or sds, got {config.guidance.mode}")
    return personalize(base, [subject], target, config, s, **kwargs)


def multi_subject_personalize(
        base: ModelState,
        subjects: Sequence[SubjectSet],
        target: Prompt | None,
        config: TrainConfig,
        s: NoiseSchedule,
        prompts: Sequence[Prompt] | None = None,
        **kwargs,
) -> PersonalizationResult:
    """
    Two subjects with their own placeholders; the target names both, e.g. (sketch, [V1], [V2]).

    Args:
        base: pretrained model
        subjects: one SubjectSet per placeholder
        target: target prompt (default: sketch plus every placeholder)
        config: training configuration
        s: noise schedule
        prompts: optional y_P per subject, e.g. (photo, [V1]) and (sketch, [V2]); each subject's
            own template is used when omitted
    """
    if len(subjects) < 2:
        raise ValueError(f"Multi-subject personalization needs at least 2 subjects, got {len(subjects)}")
    placeholders = [subject.placeholder for subject in subjects]
    if len(set(placeholders)) != len(placeholders):
        raise ValueError(f"Subjects must use distinct placeholders, got {placeholders}")
    if prompts is not None:
        if len(prompts) != len(subjects):
            raise ValueError(f"{len(prompts)} personalization prompts for {len(subjects)} subjects")
        subjects = [subject.with_prompt(prompt) for subject, prompt in zip(subjects, prompts)]
    target = target or Prompt(("sketch",) + tuple(placeholders), PromptRole.TARGET)
    logger.info("Subject prompts: %s", ", ".join(str(subject.personalization_prompt) for subject in subjects))
    return personalize(base, subjects, target, config, s, **kwargs)


def multi_subjects(n_images: int = 4, seed: int = 0) -> tuple[SubjectSet, SubjectSet]:
    """Toy pair: a textured circle on dots and a textured square on stripes."""
    first, second = PLACEHOLDERS_MULTI
    return (
        SubjectSet.toy(n_images, seed, "circle", first, "dots"),
        SubjectSet.toy(n_images, seed + 1, "square", second, "stripes"),
    )


def artwork_subjects(n_images: int = 4, seed: int = 0) -> tuple[SubjectSet, SubjectSet]:
    """
    Art-inspired pair: the photographed subject under (photo, [V1]) and a single sketched
    "artwork" of a textured square under (sketch, [V2]).
    """
    first, second = PLACEHOLDERS_MULTI
    return (
        SubjectSet.toy(n_images, seed, "circle", first, "dots"),
        SubjectSet.toy(1, seed + 1, "square", second, style="sketch"),
    )


def composition_subjects(composition: Composition, n_images: int = 4, seed: int = 0) -> tuple[SubjectSet, SubjectSet]:
    if composition is Composition.ARTWORK:
        return artwork_subjects(n_images, seed)
    return multi_subjects(n_images, seed)
