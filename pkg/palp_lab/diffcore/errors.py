class GradientError(ValueError):
    """Raised when a gradient request is malformed (non-scalar root, foreign tape, untracked leaf)."""


class NonFiniteError(ArithmeticError):
    """Raised when NaN or Inf shows up in a forward value or a backward gradient."""
