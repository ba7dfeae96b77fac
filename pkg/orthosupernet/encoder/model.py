from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from orthosupernet.autodiff import functional as F
from orthosupernet.autodiff.exceptions import ContractError
from orthosupernet.autodiff.rng import DropoutStream
from orthosupernet.autodiff.tensor import Parameter, Tape, Tensor
from orthosupernet.encoder.groups import (
    KIND_ORDER,
    GroupRegistry,
    Kind,
    build_registry,
    units_of,
)
from orthosupernet.encoder.masks import MaskVector
from orthosupernet.exceptions import ConfigError
from orthosupernet.schemas import EncoderConfig, Granularity


FRONTEND_KERNEL = 3
FRONTEND_STRIDE = 2
POSITION_BOUND = 0.1


@dataclass(frozen=True)
class ModuleLayout:
    present: bool
    units: tuple[int, ...]


@dataclass
class ForwardContext:
    """Training-time switches for one forward pass.

    Attributes
    ----------
    dropout : DropoutStream or None
        Source of dropout masks; ``None`` disables dropout
    dropout_base : float
    ffn_dropout : dict[tuple[int, Kind], float]
        Per-FFN rate overriding ``dropout_base``
    skip : frozenset[tuple[int, Kind]]
        Modules removed from this forward (layer dropout)
    """

    dropout: DropoutStream | None = None
    dropout_base: float = 0.0
    ffn_dropout: dict[tuple[int, Kind], float] = field(default_factory=dict)
    skip: frozenset[tuple[int, Kind]] = frozenset()

    def rate(self, block: int, kind: Kind) -> float:
        if self.dropout is None:
            return 0.0
        return self.ffn_dropout.get((block, kind), self.dropout_base)


def _uniform(name: str, shape: tuple[int, ...], bound: float, seed: int) -> np.ndarray:
    generator = np.random.default_rng([seed, zlib.crc32(name.encode())])
    return generator.uniform(-bound, bound, size=shape)


def _parameter_specs(config: EncoderConfig) -> dict[str, tuple[tuple[int, ...], int | str]]:
    """Shape and initializer of every parameter: a fan-in for uniform
    projections, ``"table"`` for the positional table, ``"ones"``/``"zeros"``
    for norms and biases."""
    d, dh, c = config.d_model, config.d_head, config.chunk
    specs: dict[str, tuple[tuple[int, ...], int | str]] = {
        "frontend/conv/w": ((FRONTEND_KERNEL * config.d_in, d), FRONTEND_KERNEL * config.d_in),
        "frontend/conv/b": ((d,), "zeros"),
        "frontend/proj/w": ((d, d), d),
        "frontend/proj/b": ((d,), "zeros"),
        "frontend/pos/table": ((config.max_frames, d), "table"),
    }
    for block in range(config.num_blocks):
        for kind in KIND_ORDER:
            prefix = f"block{block}/{kind.value}"
            if kind is Kind.CONV:
                specs |= {
                    f"{prefix}/0/ln_g": ((d,), "ones"),
                    f"{prefix}/0/ln_b": ((d,), "zeros"),
                    f"{prefix}/0/pw1_w": ((d, 2 * d), d),
                    f"{prefix}/0/pw1_b": ((2 * d,), "zeros"),
                    f"{prefix}/0/dw_w": ((config.conv_kernel, d), config.conv_kernel),
                    f"{prefix}/0/dw_b": ((d,), "zeros"),
                    f"{prefix}/0/ln2_g": ((d,), "ones"),
                    f"{prefix}/0/ln2_b": ((d,), "zeros"),
                    f"{prefix}/0/pw2_w": ((d, d), d),
                    f"{prefix}/0/pw2_b": ((d,), "zeros"),
                }
                continue
            specs |= {
                f"{prefix}/shared/ln_g": ((d,), "ones"),
                f"{prefix}/shared/ln_b": ((d,), "zeros"),
            }
            for unit in range(units_of(config, kind)):
                if kind is Kind.MHSA:
                    specs |= {
                        f"{prefix}/{unit}/{w}": ((d, dh), d) for w in ("wq", "wk", "wv")
                    }
                    specs |= {
                        f"{prefix}/{unit}/{b}": ((dh,), "zeros") for b in ("bq", "bk", "bv")
                    }
                    specs[f"{prefix}/{unit}/wo"] = ((dh, d), d)
                else:
                    specs[f"{prefix}/{unit}/w1"] = ((d, c), d)
                    specs[f"{prefix}/{unit}/b1"] = ((c,), "zeros")
                    specs[f"{prefix}/{unit}/w2"] = ((c, d), config.ffn_hidden)
            bias = "bo" if kind is Kind.MHSA else "b2"
            specs[f"{prefix}/shared/{bias}"] = ((d,), "zeros")
        specs[f"block{block}/final/0/ln_g"] = ((d,), "ones")
        specs[f"block{block}/final/0/ln_b"] = ((d,), "zeros")
    specs["output/proj/w"] = ((d, config.vocab_size + 1), d)
    specs["output/proj/b"] = ((config.vocab_size + 1,), "zeros")
    return specs


def _initialize(name: str, shape: tuple[int, ...], init: int | str, seed: int, dtype: str) -> Parameter:
    if init == "ones":
        value = np.ones(shape)
    elif init == "zeros":
        value = np.zeros(shape)
    elif init == "table":
        value = _uniform(name, shape, POSITION_BOUND, seed)
    else:
        value = _uniform(name, shape, math.sqrt(6.0 / init), seed)
    return Parameter(name, value.astype(dtype))


def check_config(config: EncoderConfig) -> None:
    if config.d_model % config.num_heads:
        raise ConfigError(
            f"d_model={config.d_model} is not divisible by {config.num_heads} heads"
        )
    if config.ffn_hidden % config.chunk:
        raise ConfigError(
            f"FFN width {config.ffn_hidden} is not divisible by chunk size {config.chunk}"
        )
    if config.conv_kernel % 2 == 0:
        raise ConfigError(f"conv_kernel={config.conv_kernel} must be odd")


class Encoder:
    """Conformer-lite CTC encoder.

    The same code path serves the full model (optionally gated by a mask)
    and structurally pruned copies, whose ``layout`` lists fewer units.

    Attributes
    ----------
    config : EncoderConfig
    params : dict[str, Parameter]
    layout : dict[tuple[int, Kind], ModuleLayout]
    registry : GroupRegistry
        Registry of the full model this encoder derives from
    pruned : bool
    """

    def __init__(
        self,
        config: EncoderConfig,
        params: dict[str, Parameter],
        layout: dict[tuple[int, Kind], ModuleLayout],
        registry: GroupRegistry,
        *,
        pruned: bool = False,
    ) -> None:
        self.config = config
        self.params = params
        self.layout = layout
        self.registry = registry
        self.pruned = pruned

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(parameter.size for parameter in self.params.values())

    def aux_splits(self) -> list[int]:
        return sorted(
            int(name.split("/")[0].removeprefix("aux"))
            for name in self.params
            if name.startswith("aux") and name.endswith("/proj/w")
        )

    def add_aux_head(self, split_block: int, seed: int) -> None:
        """Create the auxiliary output projection tapping ``split_block``.
        Its parameters belong to the base set."""
        self._check_split(split_block)
        config = self.config
        prefix = f"aux{split_block}/proj"
        if f"{prefix}/w" in self.params:
            return
        shape = (config.d_model, config.vocab_size + 1)
        self.params[f"{prefix}/w"] = _initialize(f"{prefix}/w", shape, config.d_model, seed, config.dtype)
        self.params[f"{prefix}/b"] = _initialize(
            f"{prefix}/b", (config.vocab_size + 1,), "zeros", seed, config.dtype
        )
        self.registry.base = self.registry.base | {f"{prefix}/w", f"{prefix}/b"}
        self.registry.parameter_sizes |= {
            f"{prefix}/w": int(np.prod(shape)),
            f"{prefix}/b": config.vocab_size + 1,
        }

    def clone(self) -> Encoder:
        params = {
            name: Parameter(name, parameter.value.copy()) for name, parameter in self.params.items()
        }
        return Encoder(self.config, params, dict(self.layout), self.registry, pruned=self.pruned)

    def forward(
        self,
        features: np.ndarray,
        mask: MaskVector | Tensor | None = None,
        *,
        context: ForwardContext | None = None,
        tape: Tape | None = None,
    ) -> Tensor:
        """Per-frame log-probabilities over the labels and blank.

        Parameters
        ----------
        features : np.ndarray
            Input frames, ``T x d_in``
        mask : MaskVector or Tensor or None, default=None
            Group gates, applied as ``min(z, 1)``; a tensor keeps the gates
            differentiable
        context : ForwardContext or None, default=None
        tape : Tape or None, default=None
            Tape to record on; a non-recording tape is used when omitted

        Returns
        -------
        Tensor
            ``T' x (V + 1)`` log-probabilities, blank at index 0

        Raises
        ------
        ContractError
            Mask length differs from the number of groups, features are not
            finite, or a mask is given to a pruned encoder
        """
        tape = Tape(record=False) if tape is None else tape
        gates = self._gates(mask, tape)
        x = self._frontend(features, tape)
        for block in range(self.config.num_blocks):
            x = self._block(x, block, gates, context, tape)
        logits = x @ self._p(tape, "output/proj/w") + self._p(tape, "output/proj/b")
        return F.log_softmax(logits)

    def aux_head_forward(
        self,
        features: np.ndarray,
        split_block: int,
        mask: MaskVector | Tensor | None = None,
        *,
        context: ForwardContext | None = None,
        tape: Tape | None = None,
    ) -> Tensor:
        """Log-probabilities from the auxiliary head on the output of block
        ``split_block`` (1-based)."""
        self._check_split(split_block)
        if f"aux{split_block}/proj/w" not in self.params:
            raise ContractError(f"no auxiliary head taps block {split_block}")
        tape = Tape(record=False) if tape is None else tape
        gates = self._gates(mask, tape)
        x = self._frontend(features, tape)
        for block in range(split_block):
            x = self._block(x, block, gates, context, tape)
        prefix = f"aux{split_block}/proj"
        logits = x @ self._p(tape, f"{prefix}/w") + self._p(tape, f"{prefix}/b")
        return F.log_softmax(logits)

    def _check_split(self, split_block: int) -> None:
        if not 1 <= split_block <= self.config.num_blocks:
            raise ContractError(
                f"split block {split_block} outside 1..{self.config.num_blocks}"
            )

    def _p(self, tape: Tape, name: str) -> Tensor:
        return tape.watch(self.params[name])

    def _gates(self, mask: MaskVector | Tensor | None, tape: Tape) -> Tensor | None:
        if mask is None:
            return None
        if self.pruned:
            raise ContractError("a pruned encoder takes no mask")
        if isinstance(mask, MaskVector):
            self.registry.check_mask_length(len(mask))
            return tape.constant(np.minimum(mask.values, 1.0), self.dtype)
        if mask.data.ndim != 1:
            raise ContractError(f"gate tensor must be one-dimensional, got {mask.shape}")
        self.registry.check_mask_length(mask.shape[0])
        return F.cast(F.clip(mask, high=1.0), self.dtype)

    def _dropout(self, x: Tensor, rate: float, context: ForwardContext | None) -> Tensor:
        if rate <= 0 or context is None or context.dropout is None:
            return x
        return F.dropout(x, rate, context.dropout.next())

    def _frontend(self, features: np.ndarray, tape: Tape) -> Tensor:
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[1] != self.config.d_in:
            raise ContractError(
                f"features must be T x {self.config.d_in}, got {features.shape}"
            )
        if not np.isfinite(features).all():
            raise ContractError("features contain non-finite values")
        x = tape.constant(features, self.dtype)
        stacked = F.unfold_frames(x, FRONTEND_KERNEL, FRONTEND_STRIDE)
        frames = stacked.shape[0]
        if frames > self.config.max_frames:
            raise ContractError(
                f"{frames} frames exceed the positional table of {self.config.max_frames}"
            )
        hidden = F.relu(stacked @ self._p(tape, "frontend/conv/w") + self._p(tape, "frontend/conv/b"))
        x = hidden @ self._p(tape, "frontend/proj/w") + self._p(tape, "frontend/proj/b")
        return x + F.slice_axis(self._p(tape, "frontend/pos/table"), 0, frames, axis=0)

    def _block(
        self,
        x: Tensor,
        block: int,
        gates: Tensor | None,
        context: ForwardContext | None,
        tape: Tape,
    ) -> Tensor:
        for kind in KIND_ORDER:
            layout = self.layout[(block, kind)]
            if not layout.present:
                continue
            if context is not None and (block, kind) in context.skip:
                continue
            if kind is Kind.CONV:
                y = self._conv(x, block, context, tape)
            elif kind is Kind.MHSA:
                y = self._mhsa(x, block, layout.units, gates, context, tape)
            else:
                y = self._ffn(x, block, kind, layout.units, gates, context, tape)
            if gates is not None and (
                self.config.granularity is Granularity.LAYER or kind is Kind.CONV
            ):
                y = y * F.take(gates, [self.registry.group_id(block, kind)])
            x = x + y
        prefix = f"block{block}/final/0"
        return F.layer_norm(x, self._p(tape, f"{prefix}/ln_g"), self._p(tape, f"{prefix}/ln_b"))

    def _unit_gates(self, gates: Tensor | None, block: int, kind: Kind, units: tuple[int, ...], width: int) -> Tensor | None:
        if gates is None or self.config.granularity is not Granularity.COMPONENT:
            return None
        ids = np.repeat([self.registry.group_id(block, kind, unit) for unit in units], width)
        return F.take(gates, ids)

    def _bias_only(self, x: Tensor, bias: Tensor, tape: Tape) -> Tensor:
        return tape.constant(np.zeros(x.shape, dtype=self.dtype)) + bias

    def _ffn(
        self,
        x: Tensor,
        block: int,
        kind: Kind,
        units: tuple[int, ...],
        gates: Tensor | None,
        context: ForwardContext | None,
        tape: Tape,
    ) -> Tensor:
        prefix = f"block{block}/{kind.value}"
        rate = context.rate(block, kind) if context is not None else 0.0
        h = F.layer_norm(x, self._p(tape, f"{prefix}/shared/ln_g"), self._p(tape, f"{prefix}/shared/ln_b"))
        bias = self._p(tape, f"{prefix}/shared/b2")
        if not units:
            y = self._bias_only(x, bias, tape)
        else:
            w1 = F.concat([self._p(tape, f"{prefix}/{u}/w1") for u in units], axis=1)
            b1 = F.concat([self._p(tape, f"{prefix}/{u}/b1") for u in units], axis=0)
            w2 = F.concat([self._p(tape, f"{prefix}/{u}/w2") for u in units], axis=0)
            hidden = self._dropout(F.swish(h @ w1 + b1), rate, context)
            chunk_gates = self._unit_gates(gates, block, kind, units, self.config.chunk)
            if chunk_gates is not None:
                hidden = hidden * chunk_gates
            y = hidden @ w2 + bias
        return F.scale(self._dropout(y, rate, context), 0.5)

    def _mhsa(
        self,
        x: Tensor,
        block: int,
        units: tuple[int, ...],
        gates: Tensor | None,
        context: ForwardContext | None,
        tape: Tape,
    ) -> Tensor:
        prefix = f"block{block}/mhsa"
        h = F.layer_norm(x, self._p(tape, f"{prefix}/shared/ln_g"), self._p(tape, f"{prefix}/shared/ln_b"))
        bias = self._p(tape, f"{prefix}/shared/bo")
        scaling = 1.0 / math.sqrt(self.config.d_head)
        heads: list[Tensor] = []
        for unit in units:
            q = h @ self._p(tape, f"{prefix}/{unit}/wq") + self._p(tape, f"{prefix}/{unit}/bq")
            k = h @ self._p(tape, f"{prefix}/{unit}/wk") + self._p(tape, f"{prefix}/{unit}/bk")
            v = h @ self._p(tape, f"{prefix}/{unit}/wv") + self._p(tape, f"{prefix}/{unit}/bv")
            attention = F.softmax_rows(F.scale(q @ k.T, scaling))
            head = attention @ v
            head_gate = self._unit_gates(gates, block, Kind.MHSA, (unit,), 1)
            if head_gate is not None:
                head = head * head_gate
            heads.append(head)
        if heads:
            wo = F.concat([self._p(tape, f"{prefix}/{u}/wo") for u in units], axis=0)
            y = F.concat(heads, axis=1) @ wo + bias
        else:
            y = self._bias_only(x, bias, tape)
        rate = context.dropout_base if context is not None else 0.0
        return self._dropout(y, rate, context)

    def _conv(self, x: Tensor, block: int, context: ForwardContext | None, tape: Tape) -> Tensor:
        prefix = f"block{block}/conv/0"
        d = self.config.d_model
        h = F.layer_norm(x, self._p(tape, f"{prefix}/ln_g"), self._p(tape, f"{prefix}/ln_b"))
        a = h @ self._p(tape, f"{prefix}/pw1_w") + self._p(tape, f"{prefix}/pw1_b")
        glu = F.slice_axis(a, 0, d) * F.sigmoid(F.slice_axis(a, d, 2 * d))
        c = F.depthwise_conv1d(glu, self._p(tape, f"{prefix}/dw_w")) + self._p(tape, f"{prefix}/dw_b")
        c = F.swish(F.layer_norm(c, self._p(tape, f"{prefix}/ln2_g"), self._p(tape, f"{prefix}/ln2_b")))
        y = c @ self._p(tape, f"{prefix}/pw2_w") + self._p(tape, f"{prefix}/pw2_b")
        rate = context.dropout_base if context is not None else 0.0
        return self._dropout(y, rate, context)


def full_layout(config: EncoderConfig) -> dict[tuple[int, Kind], ModuleLayout]:
    return {
        (block, kind): ModuleLayout(True, tuple(range(units_of(config, kind))))
        for block in range(config.num_blocks)
        for kind in KIND_ORDER
    }


def build(config: EncoderConfig, seed: int = 0) -> tuple[Encoder, GroupRegistry]:
    """Initialize an encoder and enumerate its parameter groups.

    Raises
    ------
    ConfigError
        Head count, chunk size or kernel size do not fit ``d_model``
    """
    check_config(config)
    specs = _parameter_specs(config)
    params = {
        name: _initialize(name, shape, init, seed, config.dtype)
        for name, (shape, init) in specs.items()
    }
    registry = build_registry(config, {name: shape for name, (shape, _) in specs.items()})
    return Encoder(config, params, full_layout(config), registry), registry


def structural_prune(encoder: Encoder, mask: MaskVector) -> Encoder:
    """Physically smaller copy keeping only the groups selected by ``mask``.

    Raises
    ------
    ContractError
        ``mask`` is not binary, has the wrong length, or ``encoder`` is
        already pruned
    """
    if encoder.pruned:
        raise ContractError("encoder is already pruned")
    mask.require_binary()
    registry = encoder.registry
    registry.check_mask_length(len(mask))
    kept = mask.values == 1.0

    layout: dict[tuple[int, Kind], ModuleLayout] = {}
    for (block, kind), module in encoder.layout.items():
        if encoder.config.granularity is Granularity.LAYER or kind is Kind.CONV:
            present = bool(kept[registry.group_id(block, kind)])
            layout[(block, kind)] = ModuleLayout(present, module.units if present else ())
        else:
            units = tuple(u for u in module.units if kept[registry.group_id(block, kind, u)])
            layout[(block, kind)] = ModuleLayout(True, units)

    params = {}
    for name, parameter in encoder.params.items():
        group = registry.group_of(name)
        if group is None or kept[group]:
            params[name] = Parameter(name, parameter.value.copy())
    return Encoder(encoder.config, params, layout, registry, pruned=True)
