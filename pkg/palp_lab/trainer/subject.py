from dataclasses import dataclass, replace

import numpy as np

from palp_lab.evalkit.dataset import SUBJECT_BACKGROUND, SUBJECT_CLASS, SUBJECT_STYLE, subject_images, to_model_space
from palp_lab.models.prompt import Prompt, PromptRoleError
from palp_lab.models.role import PromptRole
from palp_lab.prompts import (
    ARTWORK_TEMPLATE,
    CLASSES,
    PERSONALIZATION_TEMPLATE,
    PLACEHOLDER,
    base_vocabulary,
    is_placeholder,
    personalization_tokens,
)

MAX_SUBJECT_IMAGES = 8
PLACEHOLDER_SLOT = "{placeholder}"


@dataclass(frozen=True, eq=False)
class SubjectSet:
    """
    1 to 8 reference images of one subject, its placeholder, the class word it stands for
    and the y_P template it is trained under ("photo,{placeholder}" unless told otherwise).
    """

    images: np.ndarray
    class_token: str
    placeholder: str = PLACEHOLDER
    template: tuple[str, ...] = PERSONALIZATION_TEMPLATE

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float64)
        images.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "template", tuple(self.template))
        if images.ndim != 3:
            raise ValueError(f"Subject images must be a (n, h, w) stack, got shape {images.shape}")
        if not 1 <= images.shape[0] <= MAX_SUBJECT_IMAGES:
            raise ValueError(f"A subject needs 1 to {MAX_SUBJECT_IMAGES} images, got {images.shape[0]}")
        if self.class_token not in CLASSES:
            raise ValueError(f"Unknown class token: {self.class_token}")
        if not is_placeholder(self.placeholder):
            raise ValueError(f"{self.placeholder} is not a placeholder token")
        if self.template.count(PLACEHOLDER_SLOT) != 1:
            raise ValueError(f"Template {self.template} must hold {PLACEHOLDER_SLOT} exactly once")
        unknown = [tok for tok in self.template if tok != PLACEHOLDER_SLOT and tok not in base_vocabulary()]
        if unknown:
            raise ValueError(f"Template {self.template} has unknown tokens: {unknown}")

    @property
    def personalization_prompt(self) -> Prompt:
        return Prompt(personalization_tokens(self.placeholder, self.template), PromptRole.PERSONALIZATION)

    def with_prompt(self, prompt: Prompt) -> "SubjectSet":
        """The same subject trained under `prompt`, which must name this subject's placeholder and no other."""
        if prompt.placeholders != (self.placeholder,):
            raise PromptRoleError(f"y_P {prompt} must name {self.placeholder} and no other placeholder")
        template = tuple(PLACEHOLDER_SLOT if tok == self.placeholder else tok for tok in prompt.tokens)
        return replace(self, template=template)

    @property
    def data(self) -> np.ndarray:
        """Images flattened into model space, shape (n, h*w)."""
        return to_model_space(self.images)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @classmethod
    def toy(
            cls,
            n: int = 4,
            seed: int = 0,
            class_token: str = SUBJECT_CLASS,
            placeholder: str = PLACEHOLDER,
            background: str = SUBJECT_BACKGROUND,
            style: str = SUBJECT_STYLE,
    ) -> "SubjectSet":
        template = ARTWORK_TEMPLATE if style == "sketch" else PERSONALIZATION_TEMPLATE
        images = subject_images(n, seed, shape=class_token, bg=background, style=style)
        return cls(images, class_token, placeholder, template)
