"""
Finite-difference sweep of the combined personalization objective.

The analytic side is the trainer's own `step_gradients`; the numeric side differentiates
loss + lambda * <stop-grad direction * c, x̂₀> with central differences, where c is the
per-sample rescale factor (or 1) divided by the number of batch elements.
"""
import logging

import numpy as np

from palp_lab.denoiser import BoundModel, ModelState, init_lora, init_params, init_table, trainable_set
from palp_lab.diffcore import Tensor, add, dot, fd_grad, mse, scale
from palp_lab.diffcore.gradcheck import relative_error
from palp_lab.diffusion import NoiseSchedule, broadcast_coefficient, build_schedule, q_sample, x0_hat
from palp_lab.guidance import GuidanceBranch, get_guidance
from palp_lab.models.config import GuidanceConfig, TrainConfig
from palp_lab.models.metrics import GradCheckReport
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import GuidanceMode, PromptRole, TrainableMode, Weighting
from palp_lab.prompts import CLASSES, PLACEHOLDER, base_vocabulary, personalization_tokens
from palp_lab.trainer.personalize import decompose, step_gradients
from palp_lab.trainer.state import PersonalizationBatch

logger = logging.getLogger(__name__)

TINY_T = 20
TINY_SHAPE = (2, 2)
TINY_HIDDEN = (6,)
TINY_TIME_DIM = 4
TINY_COND_DIM = 3
TINY_BATCH = 3


def _random_case(rng: np.random.Generator) -> tuple[ModelState, ModelState, PersonalizationBatch, Prompt, TrainConfig, NoiseSchedule]:
    s = build_schedule(TINY_T, 1e-3, 0.2)
    params = init_params(TINY_SHAPE, TINY_HIDDEN, TINY_TIME_DIM, TINY_COND_DIM, rng)
    base = ModelState(params, init_table(base_vocabulary(), TINY_COND_DIM, rng))

    class_token = str(rng.choice(CLASSES))
    table = base.table.add_placeholder(PLACEHOLDER, class_token)
    table = table.replace({"embedding.placeholders": table.placeholder_rows + 0.3 * rng.standard_normal(table.placeholder_rows.shape)})
    lora = init_lora(params, 2, 1.0, rng)
    lora = lora.replace({f"lora.{layer}.B": 0.3 * rng.standard_normal(b.shape) for layer, b in zip(lora.targets, lora.B)})
    model = ModelState(params, table, lora)

    alpha = float(rng.uniform(1.0, 15.0))
    cfg = GuidanceConfig(
        alpha=alpha,
        beta=float(rng.uniform(0.0, alpha)),
        w_t=Weighting(rng.choice(list(Weighting))),
        share_noise=bool(rng.integers(2)),
        rescale=bool(rng.integers(2)),
        mode=GuidanceMode(rng.choice([GuidanceMode.SDS.value, GuidanceMode.PALP.value])),
    )
    config = TrainConfig(guidance=cfg, lambda_palp=float(rng.uniform(0.1, 2.0)), batch=TINY_BATCH, progress=False)

    dim = params.data_dim
    y_P = Prompt(personalization_tokens(PLACEHOLDER), PromptRole.PERSONALIZATION)
    batch = PersonalizationBatch(
        x0=rng.uniform(-1.0, 1.0, (TINY_BATCH, dim)),
        t=rng.integers(0, TINY_T, size=TINY_BATCH),
        eps=rng.standard_normal((TINY_BATCH, dim)),
        fresh_eps=rng.standard_normal((TINY_BATCH, dim)),
        prompts=(y_P,) * TINY_BATCH,
    )
    target = Prompt((str(rng.choice(["sketch", "photo"])), PLACEHOLDER))
    return base, model, batch, target, config, s


def check_case(
        guide: ModelState,
        model: ModelState,
        batch: PersonalizationBatch,
        target: Prompt,
        config: TrainConfig,
        s: NoiseSchedule,
        tol: float = 1e-4,
        h: float = 1e-5,
) -> GradCheckReport:
    """Compares the trainer's combined gradient with finite differences at one point."""
    y_c = decompose(target, model.table)
    prompts = list(batch.prompts)
    cfg = config.guidance

    # direction frozen at the unperturbed point
    x_t = q_sample(batch.x0, batch.t, batch.eps, s)
    eps_pred = model.predict(x_t, batch.t, prompts)
    branch = GuidanceBranch.from_prediction(
        x_t, eps_pred, batch.t, batch.eps, [y_c] * len(prompts), prompts, cfg, s, batch.fresh_eps,
    )
    direction = get_guidance(cfg.mode).direction(guide, model, branch, cfg, s).data
    coefficient = 1.0 / batch.eps.size
    if cfg.rescale:
        coefficient = broadcast_coefficient(s.rescale_factor(batch.t), direction.shape) / batch.eps.size
    frozen = Tensor(direction * coefficient)
    constants = model.bind().tensors

    def objective(tensors: dict[str, Tensor]) -> Tensor:
        bound = BoundModel(model, {**constants, **tensors})
        noisy = q_sample(batch.x0, batch.t, batch.eps, s)
        prediction = bound.predict(noisy, batch.t, prompts)
        loss = mse(prediction, Tensor(batch.eps))
        estimate = x0_hat(noisy, prediction, batch.t, s)
        return add(loss, scale(dot(frozen, estimate), config.lambda_palp))

    names = trainable_set(TrainableMode.PERSONALIZE, model)
    arrays = model.named_arrays()
    analytic = step_gradients(model, batch, y_c, config, s, guide).grads
    numeric = fd_grad(objective, {name: arrays[name] for name in names}, h)

    worst_err, worst_name, n_coordinates = 0.0, None, 0
    for name in sorted(names):
        errors = relative_error(analytic[name], numeric[name])
        n_coordinates += errors.size
        if errors.max() > worst_err:
            worst_err, worst_name = float(errors.max()), name
    return GradCheckReport(
        max_rel_err=worst_err,
        passed=worst_err < tol,
        worst_param=worst_name,
        n_coordinates=n_coordinates,
    )


def check_combined_objective(n_configs: int = 20, seed: int = 0, tol: float = 1e-4) -> list[GradCheckReport]:
    """Gradient oracle over random tiny models, guidance settings, timesteps and lambdas."""
    reports = []
    for i in range(n_configs):
        guide, model, batch, target, config, s = _random_case(np.random.default_rng([seed, i]))
        report = check_case(guide, model, batch, target, config, s, tol)
        logger.debug("Case %d (%s): max_rel_err=%.2e", i, config.guidance.mode, report.max_rel_err)
        reports.append(report)
    failed = sum(not report.passed for report in reports)
    if failed:
        logger.warning("%d of %d gradient checks failed", failed, n_configs)
    return reports
