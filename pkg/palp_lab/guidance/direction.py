"""
Score directions of the prompt-alignment branch and their chain rule through x̂₀.

Every direction here is a constant: both guidance forwards run without a tape, so the
only path gradients take back to the adapter is the personalized model's own x̂₀.
"""
import logging
from typing import Mapping

import numpy as np

from palp_lab.diffcore import GradientError, Tensor, as_tensor, dot, grad
from palp_lab.diffusion import (
    Denoiser,
    NoiseSchedule,
    PromptBatch,
    broadcast_coefficient,
    cfg_predict,
    q_sample,
)
from palp_lab.models.config import GuidanceConfig
from palp_lab.models.prompt import Prompt, PromptRoleError
from palp_lab.models.role import Weighting

logger = logging.getLogger(__name__)


def _as_list(y: PromptBatch) -> list[Prompt]:
    return [y] if isinstance(y, Prompt) else list(y)


def require_clean(y: PromptBatch) -> None:
    for prompt in _as_list(y):
        if prompt.placeholders:
            raise PromptRoleError(f"Clean prompt contains placeholder(s) {prompt.placeholders}: {prompt}")


def require_personalization(y: PromptBatch) -> None:
    for prompt in _as_list(y):
        if not prompt.placeholders:
            raise PromptRoleError(f"Personalization prompt has no placeholder: {prompt}")


def weighting(t, s: NoiseSchedule | None, w_t: Weighting, shape: tuple[int, ...]) -> float | np.ndarray:
    """w̃(t) broadcast to the sample shape."""
    if w_t is Weighting.CONSTANT:
        return 1.0
    if s is None:
        raise ValueError(f"Weighting {w_t} needs a noise schedule")
    return broadcast_coefficient(1.0 - s.alpha_bar[s.check_timestep(t)], shape)


def renoise(x0_hat_val, t2, eps2, s: NoiseSchedule) -> Tensor:
    """
    x̂_t = sqrt(alpha_bar_t2) * x̂₀ + sqrt(1 - alpha_bar_t2) * eps2, off the tape.

    Args:
        x0_hat_val: clean-sample estimate (its tape, if any, is dropped)
        t2: re-noising timestep(s)
        eps2: the personalization branch's noise when sharing, fresh noise otherwise
        s: noise schedule
    """
    return q_sample(as_tensor(x0_hat_val).detach(), t2, eps2, s)


def sds_direction(
        base: Denoiser,
        x_t,
        t,
        y_c: PromptBatch,
        alpha: float,
        eps,
        w_t: Weighting = Weighting.CONSTANT,
        s: NoiseSchedule | None = None,
) -> Tensor:
    """w̃(t) * (G^alpha(x_t, t, y_c) - eps), evaluated without recording gradients."""
    require_clean(y_c)
    x_t, eps = as_tensor(x_t).detach(), as_tensor(eps)
    if x_t.shape != eps.shape:
        raise ValueError(f"x_t {x_t.shape} and eps {eps.shape} shapes differ")
    guided = cfg_predict(base, x_t, t, y_c, alpha).data
    return Tensor(weighting(t, s, w_t, x_t.shape) * (guided - eps.data))


def palp_direction(
        base: Denoiser,
        personalized: Denoiser,
        x_hat_t,
        t,
        y_c: PromptBatch,
        y_P: PromptBatch,
        cfg: GuidanceConfig,
        s: NoiseSchedule | None = None,
) -> Tensor:
    """
    Residual w̃(t) * (G^alpha_base(x̂_t, y_c) - G^beta_personalized(x̂_t, y_P)).

    Args:
        base: frozen guiding model (the pretrained one, or any larger checkpoint)
        personalized: current personalized model; evaluated gradient-free
        x_hat_t: re-noised estimate
        t: timestep(s)
        y_c: clean prompt(s), no placeholders
        y_P: personalization prompt(s), each with a placeholder
        cfg: guidance scales and weighting
        s: schedule, required only for t-dependent weighting

    Returns:
        Constant tensor shaped like x_hat_t
    """
    require_clean(y_c)
    require_personalization(y_P)
    x_hat_t = as_tensor(x_hat_t).detach()
    clean = cfg_predict(base, x_hat_t, t, y_c, cfg.alpha).data
    personal = cfg_predict(personalized, x_hat_t, t, y_P, cfg.beta).data
    return Tensor(weighting(t, s, cfg.w_t, x_hat_t.shape) * (clean - personal))


def apply_palp_grad(
        direction,
        x0_hat: Tensor,
        leaves: Mapping[str, Tensor],
        t,
        s: NoiseSchedule,
        cfg: GuidanceConfig,
        normalizer: float = 1.0,
) -> dict[str, np.ndarray]:
    """
    Gradients of <direction, x̂₀> / normalizer with respect to the trainable leaves.

    The tape carries the chain rule through x̂₀ = (x_t - sqrt(1 - alpha_bar) * G) / sqrt(alpha_bar).
    With cfg.rescale each sample's share is multiplied by sqrt(alpha_bar_t) / sqrt(1 - alpha_bar_t),
    which cancels that factor and leaves -<direction, dG/dtheta>.
    """
    if x0_hat.tape is None:
        raise GradientError("x0_hat is not recorded on a tape; nothing to differentiate")
    d = as_tensor(direction).data
    if d.shape != x0_hat.shape:
        raise ValueError(f"Direction {d.shape} does not match x0_hat {x0_hat.shape}")
    coefficient = 1.0 / normalizer
    if cfg.rescale:
        coefficient = broadcast_coefficient(s.rescale_factor(t), d.shape) / normalizer
    surrogate = dot(Tensor(d * coefficient), x0_hat)
    grads = grad(surrogate, leaves.values())
    return {name: grads[leaf] for name, leaf in leaves.items()}
