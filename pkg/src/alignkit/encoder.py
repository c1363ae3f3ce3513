"""Frozen transformer encoder with trainable bottleneck adapters.

The encoder is a standard post-LN bidirectional transformer (BERT
family).  After each sublayer's output projection, and before that
sublayer's residual add + layer norm, a small adapter

    h' = W_up . tanh(W_down . h) + h

is applied.  Only the adapter matrices are trainable; everything else
stays frozen, so a freshly initialized model (W_up = 0) reproduces the
plain encoder exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError, FormatError
from .tensor import Tape, Tensor
from .weights import read_tensors, write_tensors

CONFIG_TENSOR = "config"
_CONFIG_FIELDS = (
    "num_layers",
    "hidden_dim",
    "num_heads",
    "ffn_dim",
    "adapter_dim",
    "vocab_size",
    "max_positions",
    "cls_id",
    "sep_id",
    "extract_layer",
)


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    hidden_dim: int
    num_heads: int
    ffn_dim: int
    adapter_dim: int
    vocab_size: int
    max_positions: int
    cls_id: int
    sep_id: int
    extract_layer: int = 6

    def __post_init__(self):
        for name in ("hidden_dim", "num_heads", "ffn_dim", "vocab_size", "max_positions"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise DataError(f"num_layers must be >= 0, got {self.num_layers}")
        if not 0 < self.adapter_dim < self.hidden_dim:
            raise DataError(
                f"adapter_dim must satisfy 0 < m < d, got m={self.adapter_dim} "
                f"d={self.hidden_dim}"
            )
        if not 0 <= self.extract_layer <= self.num_layers:
            raise DataError(
                f"extract_layer {self.extract_layer} outside 0..{self.num_layers}"
            )
        if self.hidden_dim % self.num_heads:
            raise DataError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"{self.num_heads} heads"
            )
        for name in ("cls_id", "sep_id"):
            tok = getattr(self, name)
            if not 0 <= tok < self.vocab_size:
                raise DataError(f"{name}={tok} outside vocabulary of {self.vocab_size}")


def frozen_tensor_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.hidden_dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embed.token.weight": (cfg.vocab_size, d),
        "embed.position.weight": (cfg.max_positions, d),
        "embed.segment.weight": (2, d),
        "embed.norm.gain": (d,),
        "embed.norm.bias": (d,),
    }
    for i in range(cfg.num_layers):
        p = f"layer.{i}."
        for proj in ("q", "k", "v", "out"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "attn.norm.gain"] = (d,)
        shapes[p + "attn.norm.bias"] = (d,)
        shapes[p + "ffn.in.weight"] = (f, d)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (d, f)
        shapes[p + "ffn.out.bias"] = (d,)
        shapes[p + "ffn.norm.gain"] = (d,)
        shapes[p + "ffn.norm.bias"] = (d,)
    return shapes


def adapter_tensor_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, m = cfg.hidden_dim, cfg.adapter_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(cfg.num_layers):
        for sub in ("attn", "ffn"):
            shapes[f"layer.{i}.adapter.{sub}.down"] = (m, d)
            shapes[f"layer.{i}.adapter.{sub}.up"] = (d, m)
    return shapes


@dataclass
class EncoderModel:
    """Frozen weights + trainable adapters.

    The tensors themselves are immutable; training swaps whole entries
    of `adapters`, never touching `frozen`.
    """

    config: EncoderConfig
    frozen: dict[str, Tensor] = field(repr=False)
    adapters: dict[str, Tensor] = field(repr=False)

    @classmethod
    def random(cls, config: EncoderConfig, seed: int = 0) -> "EncoderModel":
        """Seeded random frozen weights; adapters start near the identity
        (W_down small-noise, W_up exactly zero)."""
        rng = np.random.default_rng(seed)
        frozen = {}
        for name, shape in frozen_tensor_shapes(config).items():
            if name.endswith(".gain"):
                arr = np.ones(shape, dtype=np.float32)
            elif name.endswith(".bias"):
                arr = np.zeros(shape, dtype=np.float32)
            else:
                arr = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
            frozen[name] = Tensor(arr)
        adapters = cls.fresh_adapters(config, seed=seed + 1)
        return cls(config=config, frozen=frozen, adapters=adapters)

    @staticmethod
    def fresh_adapters(config: EncoderConfig, seed: int = 0) -> dict[str, Tensor]:
        rng = np.random.default_rng(seed)
        adapters = {}
        for name, shape in adapter_tensor_shapes(config).items():
            if name.endswith(".up"):
                arr = np.zeros(shape, dtype=np.float32)
            else:
                arr = rng.normal(0.0, 1e-3, size=shape).astype(np.float32)
            adapters[name] = Tensor(arr)
        return adapters

    def trainable_names(self) -> list[str]:
        return list(self.adapters)

    def with_adapters(self, adapters: dict[str, Tensor]) -> "EncoderModel":
        return EncoderModel(config=self.config, frozen=self.frozen, adapters=adapters)


def adapter_forward(
    h: Tensor, w_down: Tensor, w_up: Tensor, tape: Tape | None = None
) -> Tensor:
    """Bottleneck adapter with skip connection: W_up.tanh(W_down.h) + h."""
    z = T.linear(h, w_down, None, tape)
    u = T.linear(T.tanh(z, tape), w_up, None, tape)
    return T.add(u, h, tape)


def encode(
    model: EncoderModel,
    token_ids,
    tape: Tape | None = None,
    up_to: int | None = None,
    apply_adapters: bool = True,
) -> list[Tensor]:
    """Run the encoder, returning hidden states for layers 0..up_to.

    Index 0 is the embedding-layer output; `up_to` defaults to the full
    depth, giving num_layers + 1 entries.
    """
    cfg = model.config
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise DataError("encode expects a non-empty 1-D token id sequence")
    if ids.size > cfg.max_positions:
        raise DataError(
            f"sequence of {ids.size} tokens exceeds max_positions={cfg.max_positions}"
        )
    bad = ids[(ids < 0) | (ids >= cfg.vocab_size)]
    if bad.size:
        raise DataError(
            f"token id {int(bad[0])} outside vocabulary of {cfg.vocab_size}"
        )
    depth = cfg.num_layers if up_to is None else up_to
    if not 0 <= depth <= cfg.num_layers:
        raise DataError(f"layer {depth} outside 0..{cfg.num_layers}")

    w = model.frozen
    n = ids.size
    heads = cfg.num_heads
    scale = 1.0 / np.sqrt(cfg.hidden_dim // heads)

    tok = T.embedding_lookup(w["embed.token.weight"], ids, tape)
    pos = T.embedding_lookup(w["embed.position.weight"], np.arange(n), tape)
    seg = T.embedding_lookup(w["embed.segment.weight"], np.zeros(n, np.int64), tape)
    h = T.add(T.add(tok, pos, tape), seg, tape)
    h = T.layer_norm(h, w["embed.norm.gain"], w["embed.norm.bias"], tape=tape)
    states = [h]

    for i in range(depth):
        p = f"layer.{i}."
        q = T.split_heads(T.linear(h, w[p + "attn.q.weight"], w[p + "attn.q.bias"], tape), heads, tape)
        k = T.split_heads(T.linear(h, w[p + "attn.k.weight"], w[p + "attn.k.bias"], tape), heads, tape)
        v = T.split_heads(T.linear(h, w[p + "attn.v.weight"], w[p + "attn.v.bias"], tape), heads, tape)
        probs = T.row_softmax(T.scale(T.matmul(q, T.transpose(k, tape), tape), scale, tape), tape)
        ctx = T.merge_heads(T.matmul(probs, v, tape), tape)
        att = T.linear(ctx, w[p + "attn.out.weight"], w[p + "attn.out.bias"], tape)
        if apply_adapters:
            att = adapter_forward(
                att,
                model.adapters[p + "adapter.attn.down"],
                model.adapters[p + "adapter.attn.up"],
                tape,
            )
        h = T.layer_norm(
            T.add(att, h, tape), w[p + "attn.norm.gain"], w[p + "attn.norm.bias"], tape=tape
        )

        mid = T.gelu(T.linear(h, w[p + "ffn.in.weight"], w[p + "ffn.in.bias"], tape), tape)
        ff = T.linear(mid, w[p + "ffn.out.weight"], w[p + "ffn.out.bias"], tape)
        if apply_adapters:
            ff = adapter_forward(
                ff,
                model.adapters[p + "adapter.ffn.down"],
                model.adapters[p + "adapter.ffn.up"],
                tape,
            )
        h = T.layer_norm(
            T.add(ff, h, tape), w[p + "ffn.norm.gain"], w[p + "ffn.norm.bias"], tape=tape
        )
        states.append(h)
    return states


def _config_vector(cfg: EncoderConfig) -> np.ndarray:
    return np.array([getattr(cfg, f) for f in _CONFIG_FIELDS], dtype=np.float32)


def _config_from_vector(vec: np.ndarray, path) -> EncoderConfig:
    if vec.ndim != 1 or vec.size != len(_CONFIG_FIELDS):
        raise FormatError(
            f"config tensor in {path} must have {len(_CONFIG_FIELDS)} entries, "
            f"got shape {vec.shape}"
        )
    values = {}
    for name, raw in zip(_CONFIG_FIELDS, vec):
        iv = int(round(float(raw)))
        if iv != float(raw):
            raise FormatError(f"config field {name} in {path} is not integral: {raw}")
        values[name] = iv
    return EncoderConfig(**values)


def save_model(model: EncoderModel, path) -> None:
    tensors: dict[str, np.ndarray] = {CONFIG_TENSOR: _config_vector(model.config)}
    for name in frozen_tensor_shapes(model.config):
        tensors[name] = model.frozen[name].data
    for name in adapter_tensor_shapes(model.config):
        tensors[name] = model.adapters[name].data
    write_tensors(path, tensors)


def load_model(path) -> EncoderModel:
    tensors = read_tensors(path)
    if CONFIG_TENSOR not in tensors:
        raise FormatError(f"missing tensor {CONFIG_TENSOR!r} in {path}")
    cfg = _config_from_vector(tensors.pop(CONFIG_TENSOR), path)
    frozen_shapes = frozen_tensor_shapes(cfg)
    adapter_shapes = adapter_tensor_shapes(cfg)
    expected = {**frozen_shapes, **adapter_shapes}
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"missing tensor {name!r} in {path}")
        if tensors[name].shape != shape:
            raise FormatError(
                f"tensor {name!r} in {path} has shape {tensors[name].shape}, "
                f"expected {shape}"
            )
    extra = set(tensors) - set(expected)
    if extra:
        raise FormatError(f"unexpected tensor {sorted(extra)[0]!r} in {path}")
    frozen = {n: Tensor(tensors[n]) for n in frozen_shapes}
    adapters = {n: Tensor(tensors[n]) for n in adapter_shapes}
    return EncoderModel(config=cfg, frozen=frozen, adapters=adapters)


def save_adapters(model: EncoderModel, path) -> None:
    write_tensors(
        path, {n: model.adapters[n].data for n in adapter_tensor_shapes(model.config)}
    )


def load_adapters(model: EncoderModel, path) -> dict[str, Tensor]:
    """Read an adapter checkpoint and validate it against `model`'s geometry."""
    tensors = read_tensors(path)
    expected = adapter_tensor_shapes(model.config)
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"missing tensor {name!r} in {path}")
        if tensors[name].shape != shape:
            raise FormatError(
                f"tensor {name!r} in {path} has shape {tensors[name].shape}, "
                f"expected {shape}"
            )
    extra = set(tensors) - set(expected)
    if extra:
        raise FormatError(f"unexpected tensor {sorted(extra)[0]!r} in {path}")
    return {n: Tensor(tensors[n]) for n in expected}
