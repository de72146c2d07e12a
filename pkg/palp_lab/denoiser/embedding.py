from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from palp_lab.denoiser.params import _readonly
from palp_lab.diffcore import Tensor, bag_mean, reshape
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import TrainableMode
from palp_lab.prompts import is_placeholder

BASE_ROWS = "embedding.base"
PLACEHOLDER_ROWS = "embedding.placeholders"


class UnknownTokenError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """
    Token -> condition row lookup.

    Base rows (attributes and the null token) come from pretraining; placeholder rows
    ([V], [V1], [V2]) are appended for personalization and are the only trainable rows then.
    """

    tokens: tuple[str, ...]
    rows: np.ndarray
    placeholders: tuple[str, ...] = ()
    placeholder_rows: np.ndarray | None = None
    class_tokens: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rows", _readonly(self.rows))
        width = self.rows.shape[1]
        ph_rows = self.placeholder_rows
        ph_rows = np.zeros((0, width)) if ph_rows is None else ph_rows
        object.__setattr__(self, "placeholder_rows", _readonly(ph_rows))
        object.__setattr__(self, "class_tokens", dict(self.class_tokens))
        if self.rows.shape[0] != len(self.tokens):
            raise ValueError(f"{len(self.tokens)} tokens but {self.rows.shape[0]} rows")
        if self.placeholder_rows.shape != (len(self.placeholders), width):
            raise ValueError("Placeholder rows do not match the placeholder list")
        if len(set(self.tokens + self.placeholders)) != len(self.tokens) + len(self.placeholders):
            raise ValueError("Duplicate token in embedding table")

    @property
    def cond_dim(self) -> int:
        return int(self.rows.shape[1])

    @property
    def vocab(self) -> dict[str, int]:
        return {token: i for i, token in enumerate(self.tokens + self.placeholders)}

    def index(self, token: str) -> int:
        vocab = self.vocab
        if token not in vocab:
            raise UnknownTokenError(f"Unknown token: {token}")
        return vocab[token]

    def token_ids(self, prompt: Prompt) -> tuple[int, ...]:
        return tuple(self.index(token) for token in prompt.tokens)

    def all_rows(self) -> np.ndarray:
        return np.concatenate([self.rows, self.placeholder_rows], axis=0)

    def add_placeholder(self, token: str, class_token: str) -> "EmbeddingTable":
        """Appends a placeholder row initialized to a copy of its class token's row."""
        if not is_placeholder(token):
            raise ValueError(f"{token} is not a placeholder token")
        if token in self.vocab:
            raise ValueError(f"Placeholder {token} already registered")
        class_row = self.rows[self.tokens.index(class_token)] if class_token in self.tokens else None
        if class_row is None:
            raise UnknownTokenError(f"Unknown class token: {class_token}")
        return EmbeddingTable(
            tokens=self.tokens,
            rows=self.rows,
            placeholders=self.placeholders + (token,),
            placeholder_rows=np.concatenate([self.placeholder_rows, class_row[None, :]], axis=0),
            class_tokens={**self.class_tokens, token: class_token},
        )

    def base(self) -> "EmbeddingTable":
        return EmbeddingTable(tokens=self.tokens, rows=self.rows)

    def trainable_mask(self, mode: TrainableMode) -> np.ndarray:
        n_base, n_ph = len(self.tokens), len(self.placeholders)
        if mode is TrainableMode.PRETRAIN:
            return np.array([True] * n_base + [False] * n_ph)
        return np.array([False] * n_base + [True] * n_ph)

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {BASE_ROWS: self.rows}
        if self.placeholders:
            arrays[PLACEHOLDER_ROWS] = self.placeholder_rows
        return arrays

    def replace(self, named: Mapping[str, np.ndarray]) -> "EmbeddingTable":
        return EmbeddingTable(
            tokens=self.tokens,
            rows=named.get(BASE_ROWS, self.rows),
            placeholders=self.placeholders,
            placeholder_rows=named.get(PLACEHOLDER_ROWS, self.placeholder_rows),
            class_tokens=self.class_tokens,
        )


def init_table(tokens: Sequence[str], cond_dim: int, rng: np.random.Generator) -> EmbeddingTable:
    return EmbeddingTable(tokens=tuple(tokens), rows=rng.standard_normal((len(tokens), cond_dim)))


def encode_prompts(prompts: Sequence[Prompt], table: EmbeddingTable, rows: Tensor | None = None) -> Tensor:
    """Bag-of-tokens encoding, one condition row per prompt: shape (len(prompts), cond_dim)."""
    rows = Tensor(table.all_rows()) if rows is None else rows
    return bag_mean(rows, [table.token_ids(prompt) for prompt in prompts])


def encode_prompt(p: Prompt, table: EmbeddingTable, rows: Tensor | None = None) -> Tensor:
    """Mean of the prompt's token rows; order-free and differentiable into trainable rows."""
    return reshape(encode_prompts([p], table, rows), (table.cond_dim,))
