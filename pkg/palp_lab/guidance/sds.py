import numpy as np

from palp_lab.diffcore import Tensor
from palp_lab.diffusion import Denoiser, NoiseSchedule, PromptBatch, q_sample
from palp_lab.guidance.base import BaseGuidance, GuidanceBranch, GuidanceContribution
from palp_lab.guidance.direction import sds_direction
from palp_lab.models.config import GuidanceConfig
from palp_lab.models.role import GuidanceMode


class SdsGuidance(BaseGuidance):

    @property
    def mode(self) -> GuidanceMode:
        return GuidanceMode.SDS

    @property
    def name(self) -> str:
        return "sds"

    @property
    def description(self) -> str:
        return "Score distillation: pulls x̂₀ toward the clean prompt's density under the guiding model."

    def direction(self, guide, personalized, branch, cfg, s) -> Tensor:
        return sds_direction(guide, branch.x_hat_t, branch.t, branch.clean_prompt, cfg.alpha, branch.eps, cfg.w_t, s)


def guidance_loss_sds(
        base: Denoiser,
        personalized,
        x0,
        t,
        eps,
        y_c: PromptBatch,
        y_P: PromptBatch,
        cfg: GuidanceConfig,
        s: NoiseSchedule,
        fresh_eps: np.ndarray | None = None,
        normalizer: float = 1.0,
) -> GuidanceContribution:
    """
    SDS contribution for a batch of training samples.

    Args:
        base: frozen guiding model
        personalized: bound personalized model (tape leaves in `personalized.leaves`)
        x0: training samples in model space
        t: timestep(s)
        eps: personalization noise
        y_c: clean target prompt(s)
        y_P: personalization prompt(s)
        cfg: guidance configuration, mode must be sds
        s: noise schedule
        fresh_eps: guidance-stream noise used when noise is not shared
        normalizer: divides the surrogate; the element count B*D of the batch matches an element-mean loss

    Returns:
        Direction and gradients of the trainable leaves
    """
    if cfg.mode is not GuidanceMode.SDS:
        raise ValueError(f"guidance_loss_sds called with mode {cfg.mode}")
    x_t = q_sample(x0, t, eps, s)
    eps_pred = personalized.predict(x_t, t, y_P)
    branch = GuidanceBranch.from_prediction(x_t, eps_pred, t, eps, y_c, y_P, cfg, s, fresh_eps)
    return SdsGuidance().contribution(base, None, branch, personalized.leaves, cfg, s, normalizer)
