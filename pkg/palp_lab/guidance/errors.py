from palp_lab.models.prompt import PromptRoleError


class GuidanceNotImplementedError(NotImplementedError):
    pass


__all__ = ["GuidanceNotImplementedError", "PromptRoleError"]
