"""
Toy attribute world: 16x16 grayscale images of a shape class in a style over a background.

Pixel values live in [0, 1] (image space). The denoiser works on flattened vectors in
[-1, 1] (model space); `to_model_space` / `to_image_space` convert between the two.

Shapes are always placed inside pixels 2..13, so the two-pixel border ring shows only the
background. The oracles rely on that.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from palp_lab.models.prompt import Prompt
from palp_lab.prompts import BACKGROUNDS, CLASSES, STYLES

IMAGE_SIZE = 16
CENTERS = (6, 7, 8, 9)
HALF_SIZES = (3, 4)
SUPERSAMPLE = 4
RING = 2

PHOTO_FILL = 0.95
SKETCH_PAPER = 1.0
SKETCH_INK = 0.0

SUBJECT_CLASS = "circle"
SUBJECT_HALF_SIZE = 4
SUBJECT_STYLE = "photo"
SUBJECT_BACKGROUND = "dots"
SUBJECT_LIGHT = 0.95
SUBJECT_DARK = 0.75


class AttributeSpec(BaseModel):
    styles: tuple[str, ...] = STYLES
    classes: tuple[str, ...] = CLASSES
    backgrounds: tuple[str, ...] = BACKGROUNDS
    image_size: int = Field(default=IMAGE_SIZE, ge=8)
    centers: tuple[int, ...] = CENTERS
    half_sizes: tuple[int, ...] = HALF_SIZES

    def cells(self) -> list[tuple[str, str, str]]:
        return list(itertools.product(self.styles, self.classes, self.backgrounds))


@dataclass(frozen=True)
class Placement:
    cx: int
    cy: int
    s: int


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    # sub-pixel sample positions, pixel centers at integer coordinates
    coords = (np.arange(size * SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    return np.meshgrid(coords, coords, indexing="xy")


def coverage(shape: str, placement: Placement, size: int = IMAGE_SIZE) -> np.ndarray:
    """Fraction of each pixel covered by the shape (4x4 supersampling)."""
    x, y = _grid(size)
    dx, dy, s = x - placement.cx, y - placement.cy, float(placement.s)
    if shape == "square":
        inside = (np.abs(dx) <= s) & (np.abs(dy) <= s)
    elif shape == "circle":
        inside = dx * dx + dy * dy <= s * s
    elif shape == "triangle":
        # apex at the top, flat base at the bottom
        inside = (dy >= -s) & (dy <= s) & (np.abs(dx) <= (dy + s) / 2.0)
    elif shape == "cross":
        arm = s / 3.0
        inside = ((np.abs(dx) <= s) & (np.abs(dy) <= arm)) | ((np.abs(dy) <= s) & (np.abs(dx) <= arm))
    else:
        raise ValueError(f"Unknown shape class: {shape}")
    return inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def erode(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    return mask & padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]


def outline(cov: np.ndarray) -> np.ndarray:
    """One-pixel inner contour of the half-covered region."""
    mask = cov >= 0.5
    return mask & ~erode(mask)


def background(kind: str, size: int = IMAGE_SIZE) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size]
    if kind == "plain":
        return np.full((size, size), 0.35)
    if kind == "stripes":
        return np.where((y // 2) % 2 == 0, 0.15, 0.55)
    if kind == "dots":
        return np.where((y % 4 == 1) & (x % 4 == 1), 0.6, 0.3)
    raise ValueError(f"Unknown background: {kind}")


def checker(placement: Placement, size: int = IMAGE_SIZE) -> np.ndarray:
    """Two-pixel checkerboard anchored at the shape center, so it moves with the shape."""
    y, x = np.mgrid[0:size, 0:size]
    light = ((x - placement.cx) // 2 + (y - placement.cy) // 2) % 2 == 0
    return np.where(light, SUBJECT_LIGHT, SUBJECT_DARK)


def render(
        style: str,
        shape: str,
        bg: str,
        placement: Placement,
        texture: np.ndarray | None = None,
        size: int = IMAGE_SIZE,
) -> np.ndarray:
    """
    Renders one image.

    photo: anti-aliased fill (flat, or `texture`) composited over the background.
    sketch: one-pixel outline in ink on white paper; the background is ignored.
    A textured sketch also inks the dark texture cells inside the shape.
    """
    cov = coverage(shape, placement, size)
    if style == "photo":
        fill = PHOTO_FILL if texture is None else texture
        return background(bg, size) * (1.0 - cov) + fill * cov
    if style == "sketch":
        image = np.full((size, size), SKETCH_PAPER)
        ink = outline(cov)
        if texture is not None:
            ink = ink | ((cov >= 0.5) & (texture < (SUBJECT_LIGHT + SUBJECT_DARK) / 2.0))
        image[ink] = SKETCH_INK
        return image
    raise ValueError(f"Unknown style: {style}")


def random_placement(rng: np.random.Generator, spec: AttributeSpec | None = None) -> Placement:
    spec = spec or AttributeSpec()
    return Placement(
        cx=int(rng.choice(spec.centers)),
        cy=int(rng.choice(spec.centers)),
        s=int(rng.choice(spec.half_sizes)),
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: tuple[tuple[str, str, str], ...]
    placements: tuple[Placement, ...]

    def __len__(self) -> int:
        return len(self.labels)

    def prompts(self) -> list[Prompt]:
        return [Prompt(label) for label in self.labels]

    def model_space(self) -> np.ndarray:
        return to_model_space(self.images)


def gen_dataset(spec: AttributeSpec | None = None, n_per_cell: int = 64, seed: int = 0) -> Dataset:
    """
    Every (style, class, background) cell rendered n_per_cell times with jittered placement.

    Args:
        spec: attribute grid (defaults to the full toy vocabulary)
        n_per_cell: images per cell, >= 1
        seed: placement seed

    Returns:
        Dataset of |styles| * |classes| * |backgrounds| * n_per_cell images
    """
    if n_per_cell < 1:
        raise ValueError(f"n_per_cell must be >= 1, got {n_per_cell}")
    spec = spec or AttributeSpec()
    rng = np.random.default_rng(seed)
    images, labels, placements = [], [], []
    for cell in spec.cells():
        for _ in range(n_per_cell):
            placement = random_placement(rng, spec)
            images.append(render(*cell, placement, size=spec.image_size))
            labels.append(cell)
            placements.append(placement)
    return Dataset(np.stack(images), tuple(labels), tuple(placements))


def render_subject(
        placement: Placement,
        style: str = SUBJECT_STYLE,
        bg: str = SUBJECT_BACKGROUND,
        shape: str = SUBJECT_CLASS,
) -> np.ndarray:
    """The held-out subject: a checker-textured shape never present in the pretraining grid."""
    return render(style, shape, bg, placement, texture=checker(placement))


def subject_images(
        n: int = 4,
        seed: int = 0,
        shape: str = SUBJECT_CLASS,
        bg: str = SUBJECT_BACKGROUND,
        style: str = SUBJECT_STYLE,
) -> np.ndarray:
    """n renderings of the subject at jittered positions, shape (n, 16, 16)."""
    if not 1 <= n <= 8:
        raise ValueError(f"A subject has 1 to 8 reference images, got {n}")
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(n):
        placement = Placement(int(rng.choice(CENTERS)), int(rng.choice(CENTERS)), SUBJECT_HALF_SIZE)
        images.append(render_subject(placement, style=style, bg=bg, shape=shape))
    return np.stack(images)


def to_model_space(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    flat = images.reshape(images.shape[0], -1) if images.ndim == 3 else images.reshape(-1)
    return flat * 2.0 - 1.0


def to_image_space(x: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    images = np.clip((x + 1.0) / 2.0, 0.0, 1.0)
    if images.ndim == 1:
        return images.reshape(size, size)
    return images.reshape(images.shape[0], size, size)
