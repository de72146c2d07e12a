from typing import Protocol, Sequence

import numpy as np

from palp_lab.diffcore import Tensor, add, as_tensor, mse, mul, scale, sub
from palp_lab.diffusion.schedule import NoiseSchedule
from palp_lab.models.prompt import Prompt

PromptBatch = Prompt | Sequence[Prompt]


class Denoiser(Protocol):
    """Anything that predicts noise for a batch of flattened samples x_t at timesteps t."""

    @property
    def data_dim(self) -> int:
        ...

    def predict(self, x_t: Tensor, t, prompt: PromptBatch) -> Tensor:
        ...


def broadcast_coefficient(values: np.ndarray, shape: tuple[int, ...]) -> float | np.ndarray:
    if values.ndim == 0:
        return float(values)
    if not shape or values.shape != (shape[0],):
        raise ValueError(f"Per-sample timesteps {values.shape} do not match batch shape {shape}")
    per_row = values.reshape((-1,) + (1,) * (len(shape) - 1))
    return np.broadcast_to(per_row, shape).copy()


def _times(x: Tensor, coefficient: float | np.ndarray) -> Tensor:
    if isinstance(coefficient, float):
        return scale(x, coefficient)
    return mul(x, Tensor(coefficient))


def q_sample(x0, t, eps, s: NoiseSchedule) -> Tensor:
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps."""
    x0, eps = as_tensor(x0), as_tensor(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} shapes differ")
    signal = broadcast_coefficient(s.sqrt_alpha_bar(t), x0.shape)
    noise = broadcast_coefficient(s.sqrt_one_minus_alpha_bar(t), x0.shape)
    return add(_times(x0, signal), _times(eps, noise))


def x0_hat(x_t, eps_pred, t, s: NoiseSchedule) -> Tensor:
    """One-step estimate of the clean sample; differentiable through eps_pred."""
    x_t, eps_pred = as_tensor(x_t), as_tensor(eps_pred)
    if x_t.shape != eps_pred.shape:
        raise ValueError(f"x_t {x_t.shape} and eps_pred {eps_pred.shape} shapes differ")
    sqrt_ab = s.sqrt_alpha_bar(t)
    assert np.all(sqrt_ab > 0), "alpha_bar must be positive"
    noise = broadcast_coefficient(s.sqrt_one_minus_alpha_bar(t), x_t.shape)
    inverse = broadcast_coefficient(1.0 / sqrt_ab, x_t.shape)
    return _times(sub(x_t, _times(eps_pred, noise)), inverse)


def denoise_loss(model: Denoiser, x0, y: PromptBatch, t, eps, schedule: NoiseSchedule) -> Tensor:
    """Mean squared error between the model's noise prediction and the noise actually added."""
    x_t = q_sample(x0, t, eps, schedule)
    return mse(model.predict(x_t, t, y), as_tensor(eps))


def null_like(y: PromptBatch) -> PromptBatch:
    if isinstance(y, Prompt):
        return Prompt.null()
    return [Prompt.null()] * len(y)


def cfg_predict(model: Denoiser, x_t, t, y: PromptBatch, alpha: float) -> Tensor:
    """(1 - alpha) * G(x_t, null) + alpha * G(x_t, y)."""
    x_t = as_tensor(x_t)
    uncond = model.predict(x_t, t, null_like(y))
    cond = model.predict(x_t, t, y)
    return add(scale(uncond, 1.0 - alpha), scale(cond, alpha))
