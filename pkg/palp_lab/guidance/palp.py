from palp_lab.diffcore import Tensor
from palp_lab.guidance.base import BaseGuidance
from palp_lab.guidance.direction import palp_direction
from palp_lab.models.role import GuidanceMode


class PalpGuidance(BaseGuidance):

    @property
    def mode(self) -> GuidanceMode:
        return GuidanceMode.PALP

    @property
    def name(self) -> str:
        return "palp"

    @property
    def description(self) -> str:
        return (
            "Prompt-aligned residual: difference between the guiding model on the clean prompt "
            "and the personalized model on the personalization prompt."
        )

    def direction(self, guide, personalized, branch, cfg, s) -> Tensor:
        if personalized is None:
            raise ValueError("PALP guidance needs the personalized model")
        return palp_direction(
            guide, personalized, branch.x_hat_t, branch.t,
            branch.clean_prompt, branch.personalization_prompt, cfg, s,
        )
