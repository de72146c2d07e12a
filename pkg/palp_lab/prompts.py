# Vocabulary of the toy attribute world and the prompt templates built from it.
# Prompts are bags of attribute tokens; placeholders are written in square brackets.
import re

STYLES = ("photo", "sketch")
CLASSES = ("square", "circle", "triangle", "cross")
BACKGROUNDS = ("plain", "stripes", "dots")

NULL_TOKEN = "<null>"

PLACEHOLDER = "[V]"
PLACEHOLDERS_MULTI = ("[V1]", "[V2]")

_PLACEHOLDER_PATTERN = re.compile(r"^\[V\d*\]$")

# "A photo of [V]" analog; the clean prompt swaps [V] for the subject's class token.
PERSONALIZATION_TEMPLATE = ("photo", "{placeholder}")
# Reference artwork analog: the subject is itself a sketch.
ARTWORK_TEMPLATE = ("sketch", "{placeholder}")
DEFAULT_TARGET = ("sketch", PLACEHOLDER)


def is_placeholder(token: str) -> bool:
    return bool(_PLACEHOLDER_PATTERN.match(token))


def base_vocabulary() -> tuple[str, ...]:
    """Tokens present before any personalization: attributes plus the null token."""
    return STYLES + CLASSES + BACKGROUNDS + (NULL_TOKEN,)


def personalization_tokens(placeholder: str, template: tuple[str, ...] = PERSONALIZATION_TEMPLATE) -> tuple[str, ...]:
    return tuple(tok.format(placeholder=placeholder) for tok in template)


def element_kind(token: str) -> str:
    """Attribute family of a vocabulary token: style, class or background."""
    if token in STYLES:
        return "style"
    if token in CLASSES:
        return "class"
    if token in BACKGROUNDS:
        return "background"
    raise ValueError(f"Token {token!r} is not an attribute of the toy world")
