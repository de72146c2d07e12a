"""
Rule-based scorers for the toy world.

style       background whiteness of the border ring plus edge density
class       best normalized cross-correlation against rendered shape templates
background  pattern strength and orientation of the border ring
subject     masked correlation of the subject's texture, searched over small shifts

All scores are deterministic and lie in [0, 1].
"""
import logging
from functools import lru_cache
from typing import Sequence

import numpy as np

from palp_lab.evalkit.dataset import (
    CENTERS,
    HALF_SIZES,
    IMAGE_SIZE,
    RING,
    SUBJECT_HALF_SIZE,
    AttributeSpec,
    Placement,
    coverage,
    gen_dataset,
    outline,
    render_subject,
    subject_images,
)
from palp_lab.models.metrics import CalibrationReport, OracleScores
from palp_lab.models.prompt import Prompt
from palp_lab.prompts import BACKGROUNDS, CLASSES, STYLES, element_kind

logger = logging.getLogger(__name__)

WHITENESS_FLOOR = 0.7
WHITENESS_SPAN = 0.2
EDGE_SPAN = 0.05
NCC_FLOOR = 0.5
NCC_SPAN = 0.4
PATTERN_SPAN = 0.04
STRIPE_ANISO = 0.25
DOT_ANISO_FLOOR = 0.1
DOT_ANISO_SPAN = 0.25
FG_LEVEL = 0.6
FG_SPAN = 0.15
SUBJECT_MASK_LEVEL = FG_LEVEL + FG_SPAN / 2.0
MAX_SHIFT = 3
# a composed sample shows a subject when its similarity clears this; flat gray stays at or below 0.1
SUBJECT_SIM_FLOOR = 0.3


def _clip(value: float) -> float:
    return float(np.clip(value, 0.0, 1.0))


def _ring_mask(size: int = IMAGE_SIZE) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    mask[:RING, :] = mask[-RING:, :] = True
    mask[:, :RING] = mask[:, -RING:] = True
    return mask


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"Expected a {IMAGE_SIZE}x{IMAGE_SIZE} image, got {image.shape}")
    return image


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a - a.mean(), b - b.mean()
    denominator = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denominator < 1e-12:
        return 0.0
    return float(np.sum(a * b) / denominator)


def background_whiteness(image: np.ndarray) -> float:
    """Mean intensity of the border ring."""
    return float(_check_image(image)[_ring_mask()].mean())


def edge_density(image: np.ndarray) -> float:
    image = _check_image(image)
    return float((np.abs(np.diff(image, axis=0)).mean() + np.abs(np.diff(image, axis=1)).mean()) / 2.0)


def sketchiness(image: np.ndarray) -> float:
    whiteness = _clip((background_whiteness(image) - WHITENESS_FLOOR) / WHITENESS_SPAN)
    edges = _clip(edge_density(image) / EDGE_SPAN)
    return 0.8 * whiteness + 0.2 * edges


def style_score(image: np.ndarray, style: str) -> float:
    d = sketchiness(image)
    if style == "sketch":
        return d
    if style == "photo":
        return 1.0 - d
    raise ValueError(f"Unknown style: {style}")


@lru_cache(maxsize=None)
def _templates(shape: str) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    fills, contours = [], []
    for cx in CENTERS:
        for cy in CENTERS:
            for s in HALF_SIZES:
                cov = coverage(shape, Placement(cx, cy, s))
                fills.append(cov)
                contours.append(outline(cov).astype(np.float64))
    return tuple(fills), tuple(contours)


def class_correlations(image: np.ndarray) -> dict[str, float]:
    """Best template correlation per class, over filled (photo) and outline (sketch) templates."""
    image = _check_image(image)
    ink = 1.0 - image
    foreground = np.clip((image - FG_LEVEL) / FG_SPAN, 0.0, 1.0)
    correlations = {}
    for shape in CLASSES:
        fills, contours = _templates(shape)
        best_fill = max(ncc(foreground, template) for template in fills)
        best_contour = max(ncc(ink, template) for template in contours)
        correlations[shape] = max(best_fill, best_contour)
    return correlations


def class_score(image: np.ndarray, shape: str) -> float:
    if shape not in CLASSES:
        raise ValueError(f"Unknown class: {shape}")
    return _clip((class_correlations(image)[shape] - NCC_FLOOR) / NCC_SPAN)


def background_scores(image: np.ndarray) -> dict[str, float]:
    image = _check_image(image)
    ring = image[_ring_mask()]
    pattern = _clip(float(ring.std()) / PATTERN_SPAN)
    rows = np.concatenate([image[:RING], image[-RING:]], axis=0)
    cols = np.concatenate([image[:, :RING], image[:, -RING:]], axis=1)
    horizontal = float(np.abs(np.diff(rows, axis=1)).mean())
    vertical = float(np.abs(np.diff(cols, axis=0)).mean())
    aniso = horizontal / (horizontal + vertical + 1e-12)
    return {
        "plain": 1.0 - pattern,
        "stripes": pattern * _clip(1.0 - aniso / STRIPE_ANISO),
        "dots": pattern * _clip((aniso - DOT_ANISO_FLOOR) / DOT_ANISO_SPAN),
    }


def background_score(image: np.ndarray, bg: str) -> float:
    if bg not in BACKGROUNDS:
        raise ValueError(f"Unknown background: {bg}")
    return background_scores(image)[bg]


def text_align_score(image: np.ndarray, clean_prompt: Prompt) -> OracleScores:
    """
    Per-element alignment of an image with a placeholder-free prompt.

    Args:
        image: 16x16 image in [0, 1]
        clean_prompt: attribute tokens only

    Returns:
        OracleScores whose elements are keyed by token; text_align is their mean
    """
    image = _check_image(image)
    elements = {}
    for token in clean_prompt.tokens:
        kind = element_kind(token)
        if kind == "style":
            elements[token] = style_score(image, token)
        elif kind == "class":
            elements[token] = class_score(image, token)
        else:
            elements[token] = background_score(image, token)
    return OracleScores(elements=elements)


def _shifted(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    padded = np.pad(image, MAX_SHIFT, mode="edge")
    top, left = MAX_SHIFT + dy, MAX_SHIFT + dx
    return padded[top:top + image.shape[0], left:left + image.shape[1]]


def subject_sim(image: np.ndarray, subject_refs: Sequence[np.ndarray]) -> float:
    """
    Max over references and shifts of the correlation on the reference's subject pixels.

    The mask comes from the reference alone (the bright textured shape), so the score does
    not depend on the generated image's background or style.
    """
    image = _check_image(image)
    if len(subject_refs) == 0:
        raise ValueError("subject_sim needs at least one reference")
    best = 0.0
    for ref in subject_refs:
        ref = _check_image(ref)
        if np.array_equal(image, ref):
            return 1.0
        mask = ref >= SUBJECT_MASK_LEVEL
        if mask.sum() < 2:
            continue
        for dy in range(-MAX_SHIFT, MAX_SHIFT + 1):
            for dx in range(-MAX_SHIFT, MAX_SHIFT + 1):
                best = max(best, ncc(_shifted(image, dy, dx)[mask], ref[mask]))
    return _clip(best)


def classify(image: np.ndarray) -> dict[str, str]:
    """Argmax attribute per family."""
    correlations = class_correlations(image)
    backgrounds = background_scores(image)
    return {
        "style": "sketch" if sketchiness(image) > 0.5 else "photo",
        "class": max(correlations, key=correlations.get),
        "background": max(backgrounds, key=backgrounds.get),
    }


def calibrate_oracles(n: int = 1000, seed: int = 12345) -> CalibrationReport:
    """
    Classification accuracy of each scorer on held-out generated images.

    Background accuracy is measured on photo images only; sketches carry no background.
    """
    rng = np.random.default_rng(seed)
    hits = {"style": 0, "class": 0, "background": 0}
    n_photo = 0
    for _ in range(n):
        style, shape, bg = (str(rng.choice(values)) for values in (STYLES, CLASSES, BACKGROUNDS))
        image = gen_dataset(
            AttributeSpec(styles=(style,), classes=(shape,), backgrounds=(bg,)),
            n_per_cell=1,
            seed=int(rng.integers(2 ** 31)),
        ).images[0]
        predicted = classify(image)
        hits["style"] += predicted["style"] == style
        hits["class"] += predicted["class"] == shape
        if style == "photo":
            n_photo += 1
            hits["background"] += predicted["background"] == bg
    accuracy = {
        "style": hits["style"] / n,
        "class": hits["class"] / n,
        "background": hits["background"] / max(n_photo, 1),
    }

    refs = subject_images(4, seed=seed)
    jittered = render_subject(Placement(CENTERS[0], CENTERS[-1], SUBJECT_HALF_SIZE))
    report = CalibrationReport(
        n_images=n,
        accuracy=accuracy,
        subject_self=subject_sim(refs[0], refs),
        subject_gray=subject_sim(np.full((IMAGE_SIZE, IMAGE_SIZE), 0.5), refs),
        subject_jitter=subject_sim(jittered, refs[:1]),
    )
    logger.info("Oracle calibration: %s (passed=%s)", accuracy, report.passed)
    return report
