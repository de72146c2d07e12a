from dataclasses import dataclass
from typing import Sequence

import numpy as np

from palp_lab.denoiser import ModelState
from palp_lab.diffcore import Tensor
from palp_lab.diffusion import NoiseSchedule, cfg_predict, x0_hat
from palp_lab.evalkit.dataset import to_image_space
from palp_lab.evalkit.oracles import background_whiteness
from palp_lab.models.prompt import Prompt


@dataclass(frozen=True, eq=False)
class ProbeStrip:
    t_grid: tuple[int, ...]
    images: np.ndarray
    whiteness: tuple[float, ...]


def x0hat_probe(
        state: ModelState,
        prompt: Prompt,
        t_grid: Sequence[int],
        seed: int,
        s: NoiseSchedule,
        guidance_alpha: float = 1.0,
) -> ProbeStrip:
    """
    Single-step clean estimates from pure noise.

    For every t, x_t = sqrt(1 - alpha_bar_t) * eps with one eps shared across the strip;
    the model runs once and x̂₀ is recovered from its prediction.
    """
    eps = np.random.default_rng(seed).standard_normal(state.data_dim)
    images = []
    for t in t_grid:
        t = int(t)
        x_t = Tensor(float(s.sqrt_one_minus_alpha_bar(t)) * eps)
        eps_pred = cfg_predict(state, x_t, t, prompt, guidance_alpha)
        images.append(to_image_space(x0_hat(x_t, eps_pred, t, s).data))
    images = np.stack(images)
    return ProbeStrip(tuple(int(t) for t in t_grid), images, tuple(background_whiteness(image) for image in images))


def nearest_mse(image: np.ndarray, references: np.ndarray) -> float:
    """Mean squared error to the closest reference image."""
    diffs = np.asarray(references, dtype=np.float64) - np.asarray(image, dtype=np.float64)[None]
    return float(np.min(np.mean(diffs * diffs, axis=(1, 2))))
