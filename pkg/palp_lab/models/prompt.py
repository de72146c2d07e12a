from dataclasses import dataclass
from typing import Any, Mapping

from palp_lab.models.role import PromptRole
from palp_lab.prompts import NULL_TOKEN, is_placeholder


class PromptRoleError(ValueError):
    pass


@dataclass(frozen=True)
class Prompt:
    tokens: tuple[str, ...]
    role: PromptRole = PromptRole.TARGET

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.role is PromptRole.CLEAN and self.placeholders:
            raise PromptRoleError(f"Clean prompt must not contain placeholders: {self.tokens}")
        if self.role is PromptRole.PERSONALIZATION and not self.placeholders:
            raise PromptRoleError(f"Personalization prompt needs a placeholder: {self.tokens}")
        if self.role is PromptRole.NULL and self.tokens != (NULL_TOKEN,):
            raise PromptRoleError(f"Null prompt must be ({NULL_TOKEN},), got {self.tokens}")

    @classmethod
    def null(cls) -> "Prompt":
        return cls((NULL_TOKEN,), PromptRole.NULL)

    @classmethod
    def parse(cls, text: str, role: PromptRole = PromptRole.TARGET) -> "Prompt":
        """Builds a prompt from a comma separated token list, e.g. ``"sketch,[V]"``."""
        tokens = tuple(tok.strip() for tok in text.split(",") if tok.strip())
        if not tokens:
            raise PromptRoleError("Prompt text is empty")
        return cls(tokens, role)

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(tok for tok in self.tokens if is_placeholder(tok))

    def clean(self, class_tokens: Mapping[str, str]) -> "Prompt":
        """
        Returns y^c: every placeholder replaced by its registered class token.

        Args:
            class_tokens: placeholder -> class token map

        Returns:
            A prompt with role CLEAN
        """
        cleaned = []
        for tok in self.tokens:
            if is_placeholder(tok):
                if tok not in class_tokens:
                    raise PromptRoleError(f"No class token registered for placeholder {tok}")
                cleaned.append(class_tokens[tok])
            else:
                cleaned.append(tok)
        return Prompt(tuple(cleaned), PromptRole.CLEAN)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tokens": list(self.tokens),
            "role": self.role.value,
        }

    def __str__(self) -> str:
        return ",".join(self.tokens)
