"""Finite-difference and exact-oracle suites behind the ``gradcheck`` and
``oracle`` subcommands. Everything here runs in 64-bit."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from orthosupernet.autodiff import functional as F
from orthosupernet.autodiff.gradcheck import grad_check
from orthosupernet.autodiff.tensor import Parameter, Tape, Tensor
from orthosupernet.baselines import hc_sample
from orthosupernet.orthomask import ortho_loss, select_k
from orthosupernet.tasks.ctc import ctc_brute_force, ctc_loss
from orthosupernet.tasks.synth import required_frames


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def describe(self) -> str:
        status = "ok" if self.passed else "FAILED"
        return f"{self.name}: worst {self.worst:.3e} (tolerance {self.tolerance:.0e}) {status}"


Builder = Callable[[np.random.Generator], tuple[list[Parameter], Callable[[Tape], Tensor]]]


def _param(name: str, value: np.ndarray) -> Parameter:
    return Parameter(name, np.asarray(value, dtype=np.float64))


def _projection(out: Tensor, generator: np.random.Generator) -> Tensor:
    weights = generator.standard_normal(out.shape)
    return F.reduce_sum(out * Tensor(weights, out.tape))


def _unary(op: Callable[[Tensor], Tensor], shape=(3, 4), low: float | None = None) -> Builder:
    def builder(generator: np.random.Generator):
        value = generator.standard_normal(shape)
        if low is not None:
            value = low + np.abs(value)
        x = _param("x", value)
        seed = int(generator.integers(2**31))

        def f(tape: Tape) -> Tensor:
            return _projection(op(tape.watch(x)), np.random.default_rng(seed))

        return [x], f

    return builder


def _binary(op: Callable[[Tensor, Tensor], Tensor], shape_a, shape_b) -> Builder:
    def builder(generator: np.random.Generator):
        a = _param("a", generator.standard_normal(shape_a))
        b = _param("b", generator.standard_normal(shape_b))
        seed = int(generator.integers(2**31))

        def f(tape: Tape) -> Tensor:
            return _projection(op(tape.watch(a), tape.watch(b)), np.random.default_rng(seed))

        return [a, b], f

    return builder


def _layer_norm(generator: np.random.Generator):
    x = _param("x", generator.standard_normal((4, 5)))
    gain = _param("gain", 1.0 + 0.1 * generator.standard_normal(5))
    bias = _param("bias", generator.standard_normal(5))
    seed = int(generator.integers(2**31))

    def f(tape: Tape) -> Tensor:
        out = F.layer_norm(tape.watch(x), tape.watch(gain), tape.watch(bias))
        return _projection(out, np.random.default_rng(seed))

    return [x, gain, bias], f


def _depthwise(generator: np.random.Generator):
    x = _param("x", generator.standard_normal((6, 3)))
    weight = _param("weight", generator.standard_normal((3, 3)))
    seed = int(generator.integers(2**31))

    def f(tape: Tape) -> Tensor:
        return _projection(F.depthwise_conv1d(tape.watch(x), tape.watch(weight)), np.random.default_rng(seed))

    return [x, weight], f


PRIMITIVES: dict[str, Builder] = {
    "matmul": _binary(F.matmul, (3, 4), (4, 2)),
    "add": _binary(F.add, (3, 4), (4,)),
    "sub": _binary(F.sub, (3, 4), (3, 4)),
    "mul": _binary(F.mul, (3, 4), (3, 1)),
    "concat": _binary(lambda a, b: F.concat([a, b], axis=1), (3, 2), (3, 4)),
    "stack": _binary(lambda a, b: F.stack([a, b], axis=0), (3, 4), (3, 4)),
    "scale": _unary(lambda x: F.scale(x, -2.5)),
    "transpose": _unary(F.transpose),
    "reshape": _unary(lambda x: F.reshape(x, (2, 6))),
    "slice_axis": _unary(lambda x: F.slice_axis(x, 1, 3)),
    "take": _unary(lambda x: F.take(x, [2, 0, 2], axis=1)),
    "relu": _unary(F.relu),
    "sigmoid": _unary(F.sigmoid),
    "swish": _unary(F.swish),
    "exp": _unary(F.exp),
    "log": _unary(F.log, low=0.5),
    "sqrt": _unary(F.sqrt, low=0.5),
    "square": _unary(F.square),
    "reduce_mean": _unary(lambda x: F.reduce_mean(x, axis=0)),
    "softmax_rows": _unary(lambda x: F.softmax_rows(x, 0.7)),
    "log_softmax": _unary(F.log_softmax),
    "logsumexp": _unary(lambda x: F.logsumexp(x, axis=1)),
    "unfold_frames": _unary(lambda x: F.unfold_frames(x, 3, 2), shape=(7, 2)),
    "layer_norm": _layer_norm,
    "depthwise_conv1d": _depthwise,
}


def _ortho(generator: np.random.Generator):
    scores = _param("scores", generator.standard_normal((6, 6)))
    k = int(generator.integers(1, 7))

    def f(tape: Tape) -> Tensor:
        return ortho_loss(F.softmax_rows(tape.watch(scores)), k)

    return [scores], f


def _hard_concrete(generator: np.random.Generator):
    log_alpha = _param("log_alpha", generator.standard_normal(8))
    u = generator.uniform(0.05, 0.95, size=8)

    def f(tape: Tape) -> Tensor:
        return F.reduce_sum(hc_sample(tape.watch(log_alpha), u))

    return [log_alpha], f


def random_ctc_instance(generator: np.random.Generator, max_frames: int = 6, max_labels: int = 3, max_vocab: int = 4):
    vocab = int(generator.integers(2, max_vocab + 1))
    frames = int(generator.integers(1, max_frames + 1))
    while True:
        length = int(generator.integers(0, max_labels + 1))
        labels = [int(label) for label in generator.integers(1, vocab + 1, size=length)]
        if required_frames(labels) <= frames:
            return generator.standard_normal((frames, vocab + 1)), labels


def _ctc(generator: np.random.Generator):
    logits, labels = random_ctc_instance(generator)
    x = _param("logits", logits)

    def f(tape: Tape) -> Tensor:
        return ctc_loss(F.log_softmax(tape.watch(x)), labels)

    return [x], f


def _worst(builder: Builder, instances: int, seed: int, eps: float) -> float:
    generator = np.random.default_rng(seed)
    worst = 0.0
    for index in range(instances):
        parameters, f = builder(generator)
        worst = max(worst, grad_check(f, parameters, eps=eps, seed=index))
    return worst


def gradcheck_suite(instances: int = 20, seed: int = 0, eps: float = 1e-5) -> list[CheckResult]:
    """Worst finite-difference disagreement per primitive and per loss."""
    results = [
        CheckResult(f"primitive {name}", _worst(builder, instances, seed, eps), 1e-4)
        for name, builder in PRIMITIVES.items()
    ]
    results.append(CheckResult("ortho_loss", _worst(_ortho, instances, seed, eps), 1e-4))
    results.append(CheckResult("hc_sample", _worst(_hard_concrete, instances, seed, eps), 1e-4))
    results.append(CheckResult("ctc_loss", _worst(_ctc, instances, seed, eps), 1e-4))
    return results


def prefix_scan(w: np.ndarray, cost: np.ndarray, tau: float) -> int:
    """Reference ``k``: test every prefix length."""
    expected = w @ cost
    best = 0
    total = 0.0
    for k in range(1, len(expected) + 1):
        total += expected[k - 1]
        if total < tau:
            best = k
    return best


def direct_ortho(w: np.ndarray, k: int) -> float:
    gram = w[:k] @ w[:k].T
    total = 0.0
    for i in range(k):
        total += (gram[i, i] - 1.0) ** 2
        for j in range(i + 1, k):
            total += gram[i, j] ** 2
    return math.sqrt(total)


def _random_stochastic(generator: np.random.Generator, size: int) -> np.ndarray:
    raw = generator.standard_normal((size, size)) * generator.uniform(0.5, 4.0)
    return F.softmax_rows(Tensor(raw)).data


def oracle_suite(seed: int = 0, select_trials: int = 200, ortho_trials: int = 100, ctc_trials: int = 100) -> list[CheckResult]:
    """Exact agreement of k selection, the orthogonality loss and CTC with
    their reference evaluations."""
    generator = np.random.default_rng(seed)

    mismatches = 0
    for _ in range(select_trials):
        size = int(generator.integers(1, 21))
        w = _random_stochastic(generator, size)
        cost = generator.integers(1, 100, size=size).astype(np.float64)
        tau = float(generator.uniform(0.0, 1.2 * cost.sum()))
        mismatches += select_k(w, cost, tau) != prefix_scan(w, cost, tau)

    ortho_error = 0.0
    for _ in range(ortho_trials):
        size = int(generator.integers(1, 9))
        w = _random_stochastic(generator, size)
        k = int(generator.integers(1, size + 1))
        ortho_error = max(ortho_error, abs(ortho_loss(Tensor(w), k).item() - direct_ortho(w, k)))
    one_hot = np.eye(4)[[2, 0, 3]]
    ortho_error = max(ortho_error, ortho_loss(Tensor(np.vstack([one_hot, np.eye(4)[1:2]])), 3).item())
    ortho_error = max(
        ortho_error, abs(ortho_loss(Tensor(np.full((2, 2), 0.5)), 2).item() - math.sqrt(0.75))
    )

    ctc_error = 0.0
    for _ in range(ctc_trials):
        logits, labels = random_ctc_instance(generator)
        log_probs = F.log_softmax(Tensor(logits))
        dynamic = ctc_loss(log_probs, labels).item()
        ctc_error = max(ctc_error, abs(dynamic - ctc_brute_force(np.exp(log_probs.data), labels)))
    hand = [
        (np.log([[0.5, 0.5]]), [1], -math.log(0.5)),
        (np.log([[0.5, 0.5], [0.5, 0.5]]), [1], -math.log(0.75)),
        (np.log([[0.5, 0.5], [0.5, 0.5]]), [], math.log(4.0)),
    ]
    for log_probs, labels, expected in hand:
        ctc_error = max(ctc_error, abs(ctc_loss(Tensor(log_probs), labels).item() - expected))

    return [
        CheckResult("select_k vs prefix scan (mismatches)", float(mismatches), 0.0),
        CheckResult("ortho_loss vs direct evaluation", ortho_error, 1e-12),
        CheckResult("ctc_loss vs brute force", ctc_error, 1e-9),
    ]
