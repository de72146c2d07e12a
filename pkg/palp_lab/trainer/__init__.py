from palp_lab.trainer.ablation import AblationCell, AblationResult, ablation_cells, ablation_run, base_reference
from palp_lab.trainer.errors import PretrainTargetMissedError, PromptDecompositionError, TrainingDivergedError
from palp_lab.trainer.gradcheck import check_combined_objective
from palp_lab.trainer.optimizer import AdamOptimizer
from palp_lab.trainer.personalize import (
    Evaluation,
    PersonalizationResult,
    artwork_subjects,
    composition_subjects,
    decompose,
    evaluate,
    multi_subject_personalize,
    multi_subjects,
    palp_step,
    personalize,
    personalize_baseline,
    personalize_palp,
    prepare_model,
    step_gradients,
    train_step,
)
from palp_lab.trainer.pretrain import PretrainResult, pretrain
from palp_lab.trainer.state import PersonalizationBatch, Stream, TrainState, draw_batch
from palp_lab.trainer.subject import SubjectSet

__all__ = [
    "AblationCell", "AblationResult", "AdamOptimizer", "Evaluation", "PersonalizationBatch",
    "PersonalizationResult", "PretrainResult", "PretrainTargetMissedError", "PromptDecompositionError", "Stream", "SubjectSet",
    "TrainState", "TrainingDivergedError", "ablation_cells", "ablation_run", "artwork_subjects", "base_reference",
    "check_combined_objective", "composition_subjects", "decompose", "draw_batch", "evaluate", "multi_subject_personalize",
    "multi_subjects", "palp_step", "personalize", "personalize_baseline", "personalize_palp",
    "prepare_model", "pretrain", "step_gradients", "train_step",
]
