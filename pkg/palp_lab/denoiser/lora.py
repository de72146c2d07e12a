from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from palp_lab.denoiser.params import DenoiserParams, _readonly


@dataclass(frozen=True, eq=False)
class LoraAdapter:
    """
    Low-rank deltas on selected affine blocks.

    Block i uses W_i + scale * B_i @ A_i, with A_i of shape (rank, d_in) and B_i of
    shape (d_out, rank).
    """

    targets: tuple[int, ...]
    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    rank: int
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "A", tuple(_readonly(a) for a in self.A))
        object.__setattr__(self, "B", tuple(_readonly(b) for b in self.B))
        if not len(self.targets) == len(self.A) == len(self.B):
            raise ValueError("One (A, B) pair per adapted layer")
        for layer, a, b in zip(self.targets, self.A, self.B):
            if a.shape[0] != self.rank or b.shape[1] != self.rank:
                raise ValueError(f"Layer {layer}: factors {a.shape}, {b.shape} do not have rank {self.rank}")

    def factors(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        position = self.targets.index(layer)
        return self.A[position], self.B[position]

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for layer, a, b in zip(self.targets, self.A, self.B):
            arrays[f"lora.{layer}.A"] = a
            arrays[f"lora.{layer}.B"] = b
        return arrays

    def replace(self, named: Mapping[str, np.ndarray]) -> "LoraAdapter":
        return LoraAdapter(
            targets=self.targets,
            A=tuple(named.get(f"lora.{layer}.A", a) for layer, a in zip(self.targets, self.A)),
            B=tuple(named.get(f"lora.{layer}.B", b) for layer, b in zip(self.targets, self.B)),
            rank=self.rank,
            scale=self.scale,
        )


def hidden_blocks(n_layers: int) -> tuple[int, ...]:
    """Blocks mapping hidden to hidden activations; with a single hidden layer, both blocks around it."""
    if n_layers > 2:
        return tuple(range(1, n_layers - 1))
    return tuple(range(n_layers))


def init_lora(
        params: DenoiserParams,
        rank: int,
        scale: float,
        rng: np.random.Generator,
        targets: Sequence[int] | None = None,
) -> LoraAdapter:
    """
    A ~ N(0, 1/d_in), B = 0, so the adapted model starts exactly at the base model.

    Args:
        params: base denoiser whose layers get adapted
        rank: adapter rank, at most min(d_in, d_out) of every adapted layer
        scale: multiplier of B @ A
        rng: generator for A
        targets: adapted layer indices (default: the hidden blocks, see `hidden_blocks`)

    Returns:
        A fresh LoraAdapter
    """
    if rank < 1:
        raise ValueError(f"LoRA rank must be >= 1, got {rank}")
    targets = hidden_blocks(params.n_layers) if targets is None else tuple(targets)
    a_factors, b_factors = [], []
    for layer in targets:
        if not 0 <= layer < params.n_layers:
            raise ValueError(f"No layer {layer} to adapt")
        d_out, d_in = params.weights[layer].shape
        if rank > min(d_in, d_out):
            raise ValueError(f"Rank {rank} exceeds layer {layer} dims ({d_out}x{d_in})")
        a_factors.append(rng.standard_normal((rank, d_in)) / np.sqrt(d_in))
        b_factors.append(np.zeros((d_out, rank)))
    return LoraAdapter(targets, tuple(a_factors), tuple(b_factors), rank, float(scale))
