from palp_lab.guidance.base import BaseGuidance, GuidanceBranch, GuidanceContribution
from palp_lab.guidance.direction import (
    apply_palp_grad,
    palp_direction,
    renoise,
    require_clean,
    require_personalization,
    sds_direction,
    weighting,
)
from palp_lab.guidance.errors import GuidanceNotImplementedError, PromptRoleError
from palp_lab.guidance.palp import PalpGuidance
from palp_lab.guidance.registry import GUIDANCES, get_guidance
from palp_lab.guidance.sds import SdsGuidance, guidance_loss_sds

__all__ = [
    "BaseGuidance", "GUIDANCES", "GuidanceBranch", "GuidanceContribution", "GuidanceNotImplementedError",
    "PalpGuidance", "PromptRoleError", "SdsGuidance", "apply_palp_grad", "get_guidance", "guidance_loss_sds",
    "palp_direction", "renoise", "require_clean", "require_personalization", "sds_direction", "weighting",
]
