import sys

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:  # Python 3.10 backport of enum.StrEnum (same str()/format() semantics)
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__

        @staticmethod
        def _generate_next_value_(name, start, count, last_values):
            return name.lower()


class PromptRole(StrEnum):
    TARGET = "target"
    CLEAN = "clean"
    PERSONALIZATION = "personalization"
    NULL = "null"


class GuidanceMode(StrEnum):
    NONE = "none"
    SDS = "sds"
    PALP = "palp"
    # reserved, no estimator behind them
    NFSD = "nfsd"
    VSD = "vsd"


class Composition(StrEnum):
    PAIR = "pair"
    ARTWORK = "artwork"


class Weighting(StrEnum):
    CONSTANT = "constant"
    ONE_MINUS_ALPHA_BAR = "one_minus_alpha_bar"


class RunMode(StrEnum):
    BASELINE = "baseline"
    SDS = "sds"
    PALP = "palp"

    @property
    def guidance_mode(self) -> GuidanceMode:
        if self is RunMode.BASELINE:
            return GuidanceMode.NONE
        return GuidanceMode(self.value)


class TrainableMode(StrEnum):
    PRETRAIN = "pretrain"
    PERSONALIZE = "personalize"
