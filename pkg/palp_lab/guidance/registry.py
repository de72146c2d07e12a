from palp_lab.guidance.base import BaseGuidance
from palp_lab.guidance.errors import GuidanceNotImplementedError
from palp_lab.guidance.palp import PalpGuidance
from palp_lab.guidance.sds import SdsGuidance
from palp_lab.models.role import GuidanceMode

GUIDANCES: dict[GuidanceMode, BaseGuidance] = {
    guidance.mode: guidance for guidance in (SdsGuidance(), PalpGuidance())
}


def get_guidance(mode: GuidanceMode) -> BaseGuidance:
    if mode is GuidanceMode.NONE:
        raise ValueError("Mode 'none' has no guidance branch")
    if mode not in GUIDANCES:
        raise GuidanceNotImplementedError(f"Guidance mode {mode} is reserved but not implemented")
    return GUIDANCES[mode]
