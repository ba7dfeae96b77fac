from typing import Callable, Sequence

import numpy as np

from orthosupernet.autodiff.exceptions import EvaluationError
from orthosupernet.autodiff.tensor import Parameter, Tape, Tensor, backward


# Denominator floor of the relative error; keeps vanishing gradients from
# turning round-off into large ratios.
RELATIVE_FLOOR = 1e-4


def _evaluate(f: Callable[[Tape], Tensor]) -> float:
    value = float(f(Tape(record=False)).data)
    if not np.isfinite(value):
        raise EvaluationError(value)
    return value


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_FLOOR)


def grad_check(
    f: Callable[[Tape], Tensor],
    parameters: Sequence[Parameter],
    *,
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Compare tape gradients with central finite differences.

    Parameters
    ----------
    f : Callable[[Tape], Tensor]
        Deterministic scalar function; reads parameters through
        ``tape.watch``
    parameters : Sequence[Parameter]
        Parameters to perturb, 64-bit
    eps : float, default=1e-5
    max_coords : int, default=200
        Coordinates sampled uniformly without replacement when the
        parameters hold more scalars than this
    seed : int, default=0

    Returns
    -------
    float
        Worst relative error over the sampled coordinates

    Raises
    ------
    EvaluationError
        ``f`` evaluated to a non-finite value
    """
    for parameter in parameters:
        parameter.zero_grad()
    tape = Tape()
    loss = f(tape)
    if not np.isfinite(float(loss.data)):
        raise EvaluationError(float(loss.data))
    backward(tape, loss)

    coords = [
        (index, flat)
        for index, parameter in enumerate(parameters)
        for flat in range(parameter.size)
    ]
    if len(coords) > max_coords:
        chosen = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[i] for i in sorted(chosen)]

    worst = 0.0
    for index, flat in coords:
        parameter = parameters[index]
        original = parameter.value.flat[flat]
        parameter.value.flat[flat] = original + eps
        plus = _evaluate(f)
        parameter.value.flat[flat] = original - eps
        minus = _evaluate(f)
        parameter.value.flat[flat] = original
        numeric = (plus - minus) / (2 * eps)
        worst = max(worst, relative_error(float(parameter.grad.flat[flat]), numeric))
    return worst
