from palp_lab.denoiser.checkpoint import (
    CheckpointError,
    attach_adapter,
    load_adapter,
    load_base,
    read_meta,
    save_adapter,
    save_base,
)
from palp_lab.denoiser.embedding import EmbeddingTable, UnknownTokenError, encode_prompt, encode_prompts, init_table
from palp_lab.denoiser.lora import LoraAdapter, init_lora
from palp_lab.denoiser.network import BoundModel, ModelState, forward, trainable_set
from palp_lab.denoiser.params import DenoiserParams, init_params

__all__ = [
    "BoundModel", "CheckpointError", "DenoiserParams", "EmbeddingTable", "LoraAdapter", "ModelState",
    "UnknownTokenError", "attach_adapter", "encode_prompt", "encode_prompts", "forward", "init_lora",
    "init_params", "init_table", "load_adapter", "load_base", "read_meta", "save_adapter", "save_base", "trainable_set",
]
