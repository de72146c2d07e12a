from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class DenoiserParams:
    """Affine blocks of the MLP denoiser; SiLU between blocks, none after the last one."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    image_shape: tuple[int, int]
    time_dim: int
    cond_dim: int

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_readonly(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_readonly(b) for b in self.biases))
        object.__setattr__(self, "image_shape", tuple(self.image_shape))
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("Need one bias per weight matrix and at least one layer")
        if self.weights[0].shape[1] != self.input_dim:
            raise ValueError(f"First layer expects {self.weights[0].shape[1]} inputs, not {self.input_dim}")
        if self.weights[-1].shape[0] != self.data_dim:
            raise ValueError(f"Last layer emits {self.weights[-1].shape[0]} values, not {self.data_dim}")
        for i, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            if bias.shape != (weight.shape[0],):
                raise ValueError(f"Layer {i}: bias {bias.shape} does not match weight {weight.shape}")
            if i and weight.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"Layer {i} input width does not chain with layer {i - 1}")

    @property
    def data_dim(self) -> int:
        return int(np.prod(self.image_shape))

    @property
    def input_dim(self) -> int:
        return self.data_dim + self.time_dim + self.cond_dim

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for i, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            arrays[f"layers.{i}.weight"] = weight
            arrays[f"layers.{i}.bias"] = bias
        return arrays

    def replace(self, named: Mapping[str, np.ndarray]) -> "DenoiserParams":
        weights = tuple(named.get(f"layers.{i}.weight", w) for i, w in enumerate(self.weights))
        biases = tuple(named.get(f"layers.{i}.bias", b) for i, b in enumerate(self.biases))
        return DenoiserParams(weights, biases, self.image_shape, self.time_dim, self.cond_dim)


def init_params(
        image_shape: tuple[int, int],
        hidden: Sequence[int],
        time_dim: int,
        cond_dim: int,
        rng: np.random.Generator,
) -> DenoiserParams:
    """Gaussian N(0, 1/d_in) weights, zero biases."""
    data_dim = int(np.prod(image_shape))
    widths = [data_dim + time_dim + cond_dim, *hidden, data_dim]
    weights, biases = [], []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((d_out, d_in)) / np.sqrt(d_in))
        biases.append(np.zeros(d_out))
    return DenoiserParams(tuple(weights), tuple(biases), tuple(image_shape), time_dim, cond_dim)
