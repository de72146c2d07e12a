from pydantic import BaseModel, Field

from palp_lab.prompts import element_kind

METRIC_COLUMNS = (
    "run_id", "mode", "step", "text_align", "subject_sim", "loss", "seed",
    "text_style", "text_class", "text_background",
)
REQUIRED_METRIC_COLUMNS = METRIC_COLUMNS[:7]


class OracleScores(BaseModel):
    """Per-element text alignment (keyed by prompt token) plus subject similarity for one image."""

    elements: dict[str, float] = Field(default_factory=dict)
    subject_sim: float | None = None

    @property
    def text_align(self) -> float:
        if not self.elements:
            return 0.0
        return sum(self.elements.values()) / len(self.elements)

    def by_kind(self) -> dict[str, float]:
        """Mean element score per attribute family."""
        grouped: dict[str, list[float]] = {}
        for token, score in self.elements.items():
            grouped.setdefault(element_kind(token), []).append(score)
        return {kind: sum(scores) / len(scores) for kind, scores in grouped.items()}


class MetricRow(BaseModel):
    run_id: str
    mode: str
    step: int
    text_align: float
    subject_sim: float
    loss: float
    seed: int
    text_style: float | None = None
    text_class: float | None = None
    text_background: float | None = None

    def to_row(self) -> dict[str, str]:
        row = {}
        for column in METRIC_COLUMNS:
            value = getattr(self, column)
            if value is None:
                row[column] = ""
            elif isinstance(value, float):
                row[column] = repr(value)
            else:
                row[column] = str(value)
        return row


class GradCheckReport(BaseModel):
    max_rel_err: float
    passed: bool
    worst_param: str | None = None
    n_coordinates: int = 0


class CalibrationReport(BaseModel):
    n_images: int
    accuracy: dict[str, float]
    subject_self: float
    subject_gray: float
    subject_jitter: float
    threshold: float = 0.99

    @property
    def passed(self) -> bool:
        return (
            all(value >= self.threshold for value in self.accuracy.values())
            and self.subject_self == 1.0
            and self.subject_gray <= 0.1
        )
