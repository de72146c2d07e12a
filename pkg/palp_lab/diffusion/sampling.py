import logging

import numpy as np

from palp_lab.diffcore import Tensor
from palp_lab.diffusion.process import Denoiser, PromptBatch, cfg_predict
from palp_lab.diffusion.schedule import NoiseSchedule

logger = logging.getLogger(__name__)


def sample(
        model: Denoiser,
        y: PromptBatch,
        s: NoiseSchedule,
        guidance_alpha: float,
        rng_seed: int,
        n: int = 1,
) -> np.ndarray:
    """
    Ancestral DDPM sampling from x_T ~ N(0, I) down to x_0 with classifier-free guidance.

    Args:
        model: noise predictor
        y: prompt shared by all samples, or one prompt per sample
        s: noise schedule
        guidance_alpha: CFG scale used at every step
        rng_seed: seed of the only generator the sampler draws from
        n: number of trajectories

    Returns:
        Array of shape (n, model.data_dim) in model space
    """
    rng = np.random.default_rng(rng_seed)
    x = rng.standard_normal((n, model.data_dim))
    for t in reversed(range(s.T)):
        eps = cfg_predict(model, Tensor(x), np.full(n, t), y, guidance_alpha).data
        mean = (x - s.beta[t] / np.sqrt(1.0 - s.alpha_bar[t]) * eps) / np.sqrt(s.alpha[t])
        if t > 0:
            x = mean + np.sqrt(s.beta[t]) * rng.standard_normal(x.shape)
        else:
            x = mean
    logger.debug("Sampled %d trajectories over %d steps", n, s.T)
    return x
