from palp_lab.models.prompt import PromptRoleError


class TrainingDivergedError(RuntimeError):
    pass


class PromptDecompositionError(PromptRoleError):
    pass


class PretrainTargetMissedError(RuntimeError):
    """Validation loss did not fall below target_ratio x its initial value."""
