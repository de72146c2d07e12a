from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from palp_lab.denoiser import ModelState
from palp_lab.models.prompt import Prompt
from palp_lab.trainer.optimizer import AdamOptimizer
from palp_lab.trainer.subject import SubjectSet


class Stream(IntEnum):
    """Independent random streams; a generator is derived from (seed, stream, step)."""

    INIT = 0
    PERSONALIZE = 1
    GUIDANCE = 2
    EVAL = 3
    SUBJECT = 4
    PRETRAIN = 5


def stream_rng(seed: int, stream: Stream, step: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, int(stream), step])


def stream_seed(seed: int, stream: Stream, step: int = 0) -> int:
    return int(stream_rng(seed, stream, step).integers(2 ** 31))


@dataclass(frozen=True, eq=False)
class TrainState:
    model: ModelState
    optimizer: AdamOptimizer
    step: int = 0


@dataclass(frozen=True, eq=False)
class PersonalizationBatch:
    x0: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    fresh_eps: np.ndarray
    prompts: tuple[Prompt, ...]

    def __post_init__(self):
        if self.x0.shape != self.eps.shape or self.eps.shape != self.fresh_eps.shape:
            raise ValueError("x0, eps and fresh_eps must share one shape")
        if self.t.shape != (self.x0.shape[0],) or len(self.prompts) != self.x0.shape[0]:
            raise ValueError("One timestep and one prompt per sample")


def draw_batch(subject: SubjectSet, batch: int, T: int, seed: int, step: int) -> PersonalizationBatch:
    """
    Samples reference images, timesteps and noise for one personalization step.

    The fresh guidance noise comes from its own stream, so drawing it never shifts the
    personalization draws.
    """
    rng = stream_rng(seed, Stream.PERSONALIZE, step)
    data = subject.data
    index = rng.integers(0, data.shape[0], size=batch)
    t = rng.integers(0, T, size=batch)
    eps = rng.standard_normal((batch, data.shape[1]))
    fresh_eps = stream_rng(seed, Stream.GUIDANCE, step).standard_normal((batch, data.shape[1]))
    return PersonalizationBatch(data[index], t, eps, fresh_eps, (subject.personalization_prompt,) * batch)
