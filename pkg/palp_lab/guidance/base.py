import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from palp_lab.diffcore import Tensor
from palp_lab.diffusion import Denoiser, NoiseSchedule, PromptBatch, x0_hat
from palp_lab.guidance.direction import apply_palp_grad, renoise
from palp_lab.models.config import GuidanceConfig
from palp_lab.models.role import GuidanceMode

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GuidanceBranch:
    """Inputs of the prompt-alignment branch, derived from one personalization forward."""

    x0_hat: Tensor
    x_hat_t: Tensor
    t: np.ndarray | int
    eps: np.ndarray | Tensor
    clean_prompt: PromptBatch
    personalization_prompt: PromptBatch

    @classmethod
    def from_prediction(
            cls,
            x_t: Tensor,
            eps_pred: Tensor,
            t,
            eps,
            y_c: PromptBatch,
            y_P: PromptBatch,
            cfg: GuidanceConfig,
            s: NoiseSchedule,
            fresh_eps: np.ndarray | None = None,
    ) -> "GuidanceBranch":
        """
        Builds x̂₀ on the personalization tape and re-noises it at the same t.

        Args:
            x_t: noised training sample fed to the personalized model
            eps_pred: its noise prediction (on the tape)
            t: timestep(s) of the personalization branch
            eps: noise of the personalization branch
            y_c: clean target prompt(s)
            y_P: personalization prompt(s)
            cfg: share_noise decides between eps and fresh_eps
            s: noise schedule
            fresh_eps: noise drawn from the guidance stream, used when noise is not shared
        """
        estimate = x0_hat(x_t, eps_pred, t, s)
        if cfg.share_noise:
            noise = eps
        else:
            if fresh_eps is None:
                raise ValueError("Fresh noise is required when noise is not shared")
            noise = fresh_eps
        return cls(estimate, renoise(estimate, t, noise, s), t, noise, y_c, y_P)


@dataclass(frozen=True, eq=False)
class GuidanceContribution:
    direction: Tensor
    grads: dict[str, np.ndarray]


class BaseGuidance(ABC):

    @property
    @abstractmethod
    def mode(self) -> GuidanceMode:
        pass

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @property
    @abstractmethod
    def description(self) -> str:
        pass

    @abstractmethod
    def direction(
            self,
            guide: Denoiser,
            personalized: Denoiser | None,
            branch: GuidanceBranch,
            cfg: GuidanceConfig,
            s: NoiseSchedule,
    ) -> Tensor:
        pass

    def contribution(
            self,
            guide: Denoiser,
            personalized: Denoiser | None,
            branch: GuidanceBranch,
            leaves: Mapping[str, Tensor],
            cfg: GuidanceConfig,
            s: NoiseSchedule,
            normalizer: float = 1.0,
    ) -> GuidanceContribution:
        """Direction of this estimator pushed through x̂₀ into the trainable leaves"""
        direction = self.direction(guide, personalized, branch, cfg, s)
        grads = apply_palp_grad(direction, branch.x0_hat, leaves, branch.t, s, cfg, normalizer)
        logger.debug("%s guidance: |direction|=%.4e", self.name, float(np.linalg.norm(direction.data)))
        return GuidanceContribution(direction, grads)
