from palp_lab.diffusion.process import (
    Denoiser,
    PromptBatch,
    broadcast_coefficient,
    cfg_predict,
    denoise_loss,
    null_like,
    q_sample,
    x0_hat,
)
from palp_lab.diffusion.sampling import sample
from palp_lab.diffusion.schedule import NoiseSchedule, build_schedule

__all__ = [
    "Denoiser", "NoiseSchedule", "PromptBatch", "broadcast_coefficient", "build_schedule", "cfg_predict",
    "denoise_loss", "null_like", "q_sample", "sample", "x0_hat",
]
