from typing import Iterable

import numpy as np

from palp_lab.diffcore.errors import GradientError
from palp_lab.diffcore.tensor import Tensor, check_finite


def grad(root: Tensor, leaves: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """
    Reverse-mode gradients of a scalar root with respect to trainable leaves.

    Args:
        root: scalar tensor recorded on a tape
        leaves: trainable leaves of the same tape

    Returns:
        leaf -> gradient array with the leaf's shape (zeros when no path reaches the root)
    """
    leaves = list(leaves)
    if root.tape is None:
        raise GradientError("Root is not recorded on a tape")
    if root.shape != ():
        raise GradientError(f"Root must be a scalar, got shape {root.shape}")
    for leaf in leaves:
        if leaf.tape is not root.tape:
            raise GradientError(f"Leaf {leaf!r} is not recorded on the root's tape")
        if not leaf.trainable:
            raise GradientError(f"Leaf {leaf!r} is not marked trainable")

    adjoints: dict[int, np.ndarray] = {root.node_id: np.ones(())}
    for entry in reversed(root.tape.entries):
        if entry.output > root.node_id:
            continue
        grad_output = adjoints.pop(entry.output, None)
        if grad_output is None:
            continue
        input_grads = entry.function.backward(entry.ctx, grad_output)
        for node_id, input_grad in zip(entry.inputs, input_grads):
            if node_id is None or input_grad is None:
                continue
            check_finite(input_grad, f"backward of {entry.function.name}")
            if node_id in adjoints:
                adjoints[node_id] = adjoints[node_id] + input_grad
            else:
                adjoints[node_id] = input_grad

    result = {}
    for leaf in leaves:
        value = adjoints.get(leaf.node_id)
        result[leaf] = np.zeros(leaf.shape) if value is None else np.array(value, dtype=np.float64)
    return result
