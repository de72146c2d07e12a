from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from palp_lab.denoiser.embedding import BASE_ROWS, PLACEHOLDER_ROWS, EmbeddingTable, encode_prompts
from palp_lab.denoiser.lora import LoraAdapter
from palp_lab.denoiser.params import DenoiserParams
from palp_lab.diffcore import Tape, Tensor, add, affine, as_tensor, concat, reshape, scale, silu, time_features
from palp_lab.diffusion.process import PromptBatch
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import TrainableMode


def forward(
        params: DenoiserParams,
        x_t,
        t,
        cond,
        lora: LoraAdapter | None = None,
        tensors: Mapping[str, Tensor] | None = None,
) -> Tensor:
    """
    Noise prediction of the MLP over concat(x_t, time features of t, cond).

    Args:
        params: base weights
        x_t: (data_dim,) or (batch, data_dim)
        t: timestep, or one timestep per row
        cond: (cond_dim,) or (batch, cond_dim)
        lora: optional adapter; adapted blocks use W + s * B @ A
        tensors: name -> Tensor overrides for any named array (tape leaves during training)

    Returns:
        eps prediction shaped like x_t
    """
    tensors = tensors or {}

    def value(name: str, array: np.ndarray) -> Tensor:
        return tensors[name] if name in tensors else Tensor(array)

    x_t, cond = as_tensor(x_t), as_tensor(cond)
    single = x_t.ndim == 1
    if single:
        x_t = reshape(x_t, (1,) + x_t.shape)
    batch = x_t.shape[0]
    if x_t.ndim != 2 or x_t.shape[1] != params.data_dim:
        raise ValueError(f"x_t has shape {x_t.shape}, expected (*, {params.data_dim})")
    if cond.ndim == 1:
        cond = reshape(cond, (1, cond.shape[0]))
        if batch > 1:
            cond = concat([cond] * batch, axis=0)
    if cond.shape != (batch, params.cond_dim):
        raise ValueError(f"cond has shape {cond.shape}, expected ({batch}, {params.cond_dim})")

    steps = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
    h = concat([x_t, time_features(Tensor(steps), params.time_dim), cond], axis=-1)
    for i in range(params.n_layers):
        out = affine(h, value(f"layers.{i}.weight", params.weights[i]), value(f"layers.{i}.bias", params.biases[i]))
        if lora is not None and i in lora.targets:
            a, b = lora.factors(i)
            low_rank = affine(affine(h, value(f"lora.{i}.A", a)), value(f"lora.{i}.B", b))
            out = add(out, scale(low_rank, lora.scale))
        h = silu(out) if i < params.n_layers - 1 else out
    return reshape(h, (params.data_dim,)) if single else h


@dataclass(frozen=True, eq=False)
class ModelState:
    """Immutable snapshot of everything the denoiser reads: base params, embeddings, adapter."""

    params: DenoiserParams
    table: EmbeddingTable
    lora: LoraAdapter | None = None

    def __post_init__(self):
        if self.table.cond_dim != self.params.cond_dim:
            raise ValueError("Embedding width does not match the denoiser's cond_dim")

    @property
    def data_dim(self) -> int:
        return self.params.data_dim

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {**self.params.named_arrays(), **self.table.named_arrays()}
        if self.lora is not None:
            arrays.update(self.lora.named_arrays())
        return arrays

    def replace(self, named: Mapping[str, np.ndarray]) -> "ModelState":
        return ModelState(
            params=self.params.replace(named),
            table=self.table.replace(named),
            lora=self.lora.replace(named) if self.lora is not None else None,
        )

    def with_lora(self, lora: LoraAdapter | None) -> "ModelState":
        return ModelState(self.params, self.table, lora)

    def base(self) -> "ModelState":
        """The pretrained model alone: no adapter, no placeholder rows."""
        return ModelState(self.params, self.table.base())

    @cached_property
    def _constants(self) -> dict[str, Tensor]:
        return {name: Tensor(array, name=name) for name, array in self.named_arrays().items()}

    def bind(self, tape: Tape | None = None, trainable: frozenset[str] = frozenset()) -> "BoundModel":
        if tape is None or not trainable:
            return BoundModel(self, dict(self._constants))
        unknown = set(trainable) - set(self.named_arrays())
        if unknown:
            raise KeyError(f"Unknown trainable arrays: {sorted(unknown)}")
        tensors = {}
        for name, array in self.named_arrays().items():
            tensors[name] = tape.leaf(array, name=name) if name in trainable else self._constants[name]
        return BoundModel(self, tensors)

    def predict(self, x_t, t, prompt: PromptBatch) -> Tensor:
        """Gradient-free prediction."""
        return self.bind().predict(x_t, t, prompt)


class BoundModel:
    """A ModelState whose arrays are materialized as tensors, some of them tape leaves."""

    def __init__(self, state: ModelState, tensors: dict[str, Tensor]):
        self.state = state
        self.tensors = tensors

    @property
    def data_dim(self) -> int:
        return self.state.data_dim

    @property
    def leaves(self) -> dict[str, Tensor]:
        return {name: tensor for name, tensor in self.tensors.items() if tensor.trainable}

    def rows(self) -> Tensor:
        if PLACEHOLDER_ROWS in self.tensors:
            return concat([self.tensors[BASE_ROWS], self.tensors[PLACEHOLDER_ROWS]], axis=0)
        return self.tensors[BASE_ROWS]

    def encode(self, prompt: PromptBatch, batch: int) -> Tensor:
        prompts = [prompt] * batch if isinstance(prompt, Prompt) else list(prompt)
        if len(prompts) != batch:
            raise ValueError(f"{len(prompts)} prompts for a batch of {batch}")
        return encode_prompts(prompts, self.state.table, self.rows())

    def predict(self, x_t, t, prompt: PromptBatch) -> Tensor:
        x_t = as_tensor(x_t)
        batch = 1 if x_t.ndim == 1 else x_t.shape[0]
        cond = self.encode(prompt, batch)
        if x_t.ndim == 1:
            cond = reshape(cond, (self.state.params.cond_dim,))
        return forward(self.state.params, x_t, t, cond, self.state.lora, self.tensors)


def trainable_set(mode: TrainableMode, state: ModelState) -> frozenset[str]:
    """
    Names of the arrays optimized in each mode.

    pretrain: every base weight and every base embedding row.
    personalize: LoRA factors and placeholder rows only.
    """
    if mode is TrainableMode.PRETRAIN:
        return frozenset(state.params.named_arrays()) | {BASE_ROWS}
    names = set(state.lora.named_arrays()) if state.lora is not None else set()
    if state.table.placeholders:
        names.add(PLACEHOLDER_ROWS)
    return frozenset(names)
