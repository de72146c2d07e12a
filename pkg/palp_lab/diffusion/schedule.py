from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-timestep beta, alpha = 1 - beta and alpha_bar = cumulative product of alpha."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return int(self.beta.shape[0])

    def check_timestep(self, t) -> np.ndarray:
        index = np.asarray(t)
        if not np.issubdtype(index.dtype, np.integer):
            raise ValueError(f"Timesteps must be integers, got dtype {index.dtype}")
        if np.any(index < 0) or np.any(index >= self.T):
            raise ValueError(f"Timestep out of range [0, {self.T}): {t}")
        return index

    def sqrt_alpha_bar(self, t) -> np.ndarray:
        return np.sqrt(self.alpha_bar[self.check_timestep(t)])

    def sqrt_one_minus_alpha_bar(self, t) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar[self.check_timestep(t)])

    def rescale_factor(self, t) -> np.ndarray:
        """sqrt(alpha_bar) / sqrt(1 - alpha_bar): undoes the x0-estimate scaling of the guidance gradient."""
        return self.sqrt_alpha_bar(t) / self.sqrt_one_minus_alpha_bar(t)


def build_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """
    Linear beta schedule between beta_min and beta_max.

    Args:
        T: number of timesteps (>= 2)
        beta_min: first beta, in (0, 1)
        beta_max: last beta, in [beta_min, 1)

    Returns:
        A NoiseSchedule whose alpha_bar is strictly decreasing and positive
    """
    if T < 2:
        raise ValueError(f"Schedule needs T >= 2, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"Invalid beta range: 0 < {beta_min} <= {beta_max} < 1 does not hold")
    beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for array in (beta, alpha, alpha_bar):
        array.flags.writeable = False
    if not np.all(np.diff(alpha_bar) < 0) or alpha_bar[-1] <= 0:
        raise ValueError("alpha_bar must be strictly decreasing and positive")
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)
