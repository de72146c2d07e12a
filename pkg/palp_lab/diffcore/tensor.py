from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from palp_lab.diffcore.errors import NonFiniteError

if TYPE_CHECKING:
    from palp_lab.diffcore.functions import Function


def check_finite(array: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"Non-finite value produced by {where}")


def _frozen(data: Any) -> np.ndarray:
    array = np.asarray(data, dtype=np.float64)
    if array.flags.writeable:
        array = array.copy()
        array.flags.writeable = False
    return array


class Tensor:
    """
    Immutable float64 value, optionally recorded on a Tape.

    Tensors without a tape are constants: operations on them are evaluated but not
    recorded, which is how gradient-free forwards (guidance, sampling) run.
    """

    __slots__ = ("data", "tape", "node_id", "trainable", "name")

    def __init__(
            self,
            data: Any,
            tape: "Tape | None" = None,
            node_id: int | None = None,
            trainable: bool = False,
            name: str | None = None,
    ):
        self.data = _frozen(data)
        check_finite(self.data, name or "tensor construction")
        self.tape = tape
        self.node_id = node_id
        self.trainable = trainable
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        from palp_lab.diffcore.functions import add
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from palp_lab.diffcore.functions import sub
        return sub(self, other)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        from palp_lab.diffcore.functions import mul, scale
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from palp_lab.diffcore.functions import scale
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from palp_lab.diffcore.functions import matmul
        return matmul(self, other)

    def __repr__(self) -> str:
        state = "tracked" if self.is_tracked else "const"
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, {state})"


def as_tensor(value: "Tensor | Any") -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class Context:
    needs_input_grad: tuple[bool, ...] = ()
    saved: dict[str, Any] = field(default_factory=dict)

    def save(self, **values: Any) -> None:
        self.saved.update(values)


@dataclass(frozen=True)
class TapeEntry:
    function: "Function"
    inputs: tuple[int | None, ...]
    output: int
    ctx: Context


class Tape:
    """Ordered record of primitive operations; entries are appended in execution order."""

    def __init__(self):
        self._entries: list[TapeEntry] = []
        self._next_id = 0

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def leaf(self, data: Any, name: str | None = None, trainable: bool = True) -> Tensor:
        return Tensor(data, tape=self, node_id=self._new_id(), trainable=trainable, name=name)

    def record(
            self,
            function: "Function",
            inputs: tuple[Tensor, ...],
            output: np.ndarray,
            ctx: Context,
    ) -> Tensor:
        tensor = Tensor(output, tape=self, node_id=self._new_id(), name=function.name)
        input_ids = tuple(t.node_id if t.tape is self else None for t in inputs)
        self._entries.append(TapeEntry(function, input_ids, tensor.node_id, ctx))
        return tensor

    @property
    def entries(self) -> tuple[TapeEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)
