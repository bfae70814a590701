"""
Fusion architectures for the credit fusion framework.
Builds the numeric stream (Network A), the text stream (Network B) and the
classification head for every fusion group and base model.

Groups:
    1: one Network A per numeric channel, streams concatenated with Network B
    2: one Network A per numeric channel, cross-attention with Network B
    3: numeric channels fused at the input into one Network A, concatenated with Network B
    4: numeric channels fused at the input into one Network A, cross-attention with Network B
"""

import logging
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import settings
from dataset import ALL_CHANNELS, CHANNEL_WIDTHS, NUMERIC_CHANNELS, TEXT_CHANNEL, Batch
from layers import (
    GRU, LSTM, Conv1D, CrossAttention, Dense, Dropout, Embedding, GlobalAvgPool, MaxPool1D,
    Module, SelfAttention, TextEncoder,
)
from tensor import ShapeError, Tensor, concat, global_avg_pool, masked_mean_pool, mul
from text_preprocessing import PAD_ID, SPECIAL_TOKENS, UNKNOWN_ID

logger = logging.getLogger("credit_fusion.fusion_models")

BASES = ("cnn", "lstm", "gru", "att")
GROUPS = (1, 2, 3, 4)
CROSS_ATTENTION_GROUPS = (2, 4)
PER_CHANNEL_GROUPS = (1, 2)
EARLY_FUSION_KEY = "numeric"


class BuildError(ValueError):
    """Raised when a configuration cannot be turned into a consistent network."""


class FusionConfig(BaseModel):
    """Declarative description of one fusion architecture."""

    model_config = ConfigDict(extra='forbid')

    group: Literal[1, 2, 3, 4] = 3
    base: Literal["cnn", "lstm", "gru", "att"] = "cnn"
    num_classes: int = Field(default=8, ge=2)
    channels: List[str] = Field(default_factory=lambda: list(ALL_CHANNELS))

    # convolution stages
    filters: int = Field(default=64, ge=1)
    kernel_size: int = Field(default=2, ge=1)
    stride: int = Field(default=1, ge=1)
    pool_size: int = Field(default=2, ge=1)
    stream_dropout: float = Field(default=0.2, ge=0.0, lt=1.0)

    # recurrent and attention stages
    units: int = Field(default=64, ge=1)
    attention_dim: int = Field(default=64, ge=1)

    # text stream
    vocab_size: int = Field(default=20000, ge=len(SPECIAL_TOKENS))
    max_text_length: int = Field(default_factory=lambda: settings.max_text_length, ge=1)
    embedding_dim: int = Field(default=64, ge=2)
    encoder_heads: int = Field(default=2, ge=1)
    encoder_blocks: int = Field(default=2, ge=1)
    encoder_ff_dim: int = Field(default=128, ge=1)

    # fusion and head
    cross_attention_dim: int = Field(default=64, ge=1)
    cross_attention_form: Literal["standard", "paper_literal"] = "standard"
    head_hidden: int = Field(default=64, ge=1)
    head_dropout: float = Field(default=0.3, ge=0.0, lt=1.0)

    init_seed: int = 0
    dtype: Literal["float64", "float32"] = "float64"

    @field_validator('channels')
    @classmethod
    def validate_channels(cls, v):
        unknown = [c for c in v if c not in ALL_CHANNELS]
        if unknown:
            raise ValueError(f"Unknown channels {unknown}. Use any of: {list(ALL_CHANNELS)}")
        if not v:
            raise ValueError("At least one channel is required")
        if len(set(v)) != len(v):
            raise ValueError(f"Duplicate channels in {v}")
        return [c for c in ALL_CHANNELS if c in v]

    @property
    def numeric_channels(self) -> List[str]:
        return [c for c in self.channels if c in NUMERIC_CHANNELS]

    @property
    def uses_text(self) -> bool:
        return TEXT_CHANNEL in self.channels

    @property
    def uses_cross_attention(self) -> bool:
        return self.group in CROSS_ATTENTION_GROUPS and self.uses_text and bool(self.numeric_channels)


class NetworkStack(Module):
    """Ordered stages ending in a pooling stage; the pre-pool sequence is exposed for cross-attention."""

    kind = "Stack"

    def __init__(self, stages: List[Module], output_dim: int):
        self.stages = stages
        self.output_dim = output_dim

    def describe(self) -> List[str]:
        return [stage.kind for stage in self.stages]

    def forward_sequence(self, x, training: bool = False, rng=None) -> Tuple[Tensor, Optional[np.ndarray]]:
        for stage in self.stages[:-1]:
            x = stage(x, training=training, rng=rng)
        return x, None

    def forward(self, x, training: bool = False, rng=None) -> Tensor:
        sequence, _ = self.forward_sequence(x, training, rng)
        return self.stages[-1](sequence, training=training, rng=rng)


class TextStack(NetworkStack):
    """Network B: token embedding ahead of the stages, or a self-contained encoder for the attention base."""

    def __init__(self, stages: List[Module], output_dim: int, embedding: Optional[Embedding] = None):
        super().__init__(stages, output_dim)
        self.embedding = embedding

    @property
    def encoder(self) -> Optional[TextEncoder]:
        return self.stages[0] if isinstance(self.stages[0], TextEncoder) else None

    def forward_sequence(self, tokens, training: bool = False, rng=None) -> Tuple[Tensor, Optional[np.ndarray]]:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if self.encoder is not None:
            return self.encoder.encode(tokens)
        embedded = self.embedding(tokens)
        # pad positions contribute nothing to the convolutions
        x = mul(embedded, (tokens != PAD_ID)[:, :, None].astype(embedded.dtype))
        return super().forward_sequence(x, training, rng)

    def forward(self, tokens, training: bool = False, rng=None) -> Tensor:
        sequence, mask = self.forward_sequence(tokens, training, rng)
        if mask is not None:
            return masked_mean_pool(sequence, mask)
        return self.stages[-1](sequence, training=training, rng=rng)


def _pool_window(config: FusionConfig, time: int, min_output: int, stream: str) -> int:
    window = min(config.pool_size, time)
    while window > 1 and time // window < min_output:
        window -= 1
    if window < 1 or time // window < min_output:
        raise BuildError(f"{stream}: sequence of length {time} is too short for the configured stages")
    if window != config.pool_size:
        logger.debug(f"{stream}: pool window reduced from {config.pool_size} to {window} for length {time}")
    return window


def _conv(config: FusionConfig, in_channels: int, time: int, rng, dtype, stream: str) -> Tuple[Conv1D, int]:
    conv = Conv1D(in_channels, config.filters, config.kernel_size, config.stride, "relu", rng, dtype)
    out = conv.output_length(time)
    if out < 1:
        raise BuildError(f"{stream}: sequence of length {time} is shorter than kernel size {config.kernel_size}")
    return conv, out


def build_network_a(base: str, input_features: int, config: FusionConfig,
                    sequence_length: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> NetworkStack:
    """
    Build the numeric stream for one base model.

    A channel vector of F features is read as a length-F sequence with one
    feature per step.

    Args:
        base: cnn, lstm, gru or att
        input_features: Width of each sequence step (1 for channel vectors)
        config: Layer hyperparameters
        sequence_length: Number of steps; defaults to the configured text length
        rng: Initialization generator

    Returns:
        NetworkStack whose pooled output has width output_dim

    Raises:
        BuildError: For an unknown base or a sequence too short for the stages
    """
    if input_features < 1:
        raise BuildError(f"input_features must be positive, got {input_features}")
    if base not in BASES:
        raise BuildError(f"Unknown base model '{base}'. Use one of: {BASES}")
    rng = rng or np.random.default_rng(config.init_seed)
    dtype = np.dtype(config.dtype)
    time = sequence_length if sequence_length is not None else config.max_text_length

    conv, time = _conv(config, input_features, time, rng, dtype, "network A")
    if base == "cnn":
        pool = MaxPool1D(_pool_window(config, time, config.kernel_size, "network A"))
        second, _ = _conv(config, config.filters, pool.output_length(time), rng, dtype, "network A")
        stages, width = [conv, pool, second, GlobalAvgPool()], config.filters
    elif base in ("lstm", "gru"):
        pool = MaxPool1D(_pool_window(config, time, 1, "network A"))
        recurrent_cls = LSTM if base == "lstm" else GRU
        stages = [conv, pool, recurrent_cls(config.filters, config.units, rng=rng, dtype=dtype), GlobalAvgPool()]
        width = config.units
    else:
        stages = [conv, Dropout(config.stream_dropout),
                  SelfAttention(config.filters, config.attention_dim, rng, dtype), GlobalAvgPool()]
        width = config.attention_dim
    return NetworkStack(stages, width)


def build_network_b(base: str, vocab_size: int, config: FusionConfig,
                    rng: Optional[np.random.Generator] = None) -> TextStack:
    """
    Build the text stream for one base model.

    Args:
        base: cnn, lstm, gru or att (attention base uses the transformer encoder)
        vocab_size: Vocabulary size including reserved tokens
        config: Layer hyperparameters
        rng: Initialization generator

    Returns:
        TextStack whose pooled output has width output_dim

    Raises:
        BuildError: For an unknown base, a vocabulary smaller than the reserved
            tokens or a text length too short for the stages
    """
    if base not in BASES:
        raise BuildError(f"Unknown base model '{base}'. Use one of: {BASES}")
    if vocab_size < len(SPECIAL_TOKENS):
        raise BuildError(f"vocab_size must be at least {len(SPECIAL_TOKENS)}, got {vocab_size}")
    rng = rng or np.random.default_rng(config.init_seed)
    dtype = np.dtype(config.dtype)

    if base == "att":
        try:
            encoder = TextEncoder(vocab_size, config.embedding_dim, config.encoder_heads, config.encoder_blocks,
                                  config.encoder_ff_dim, PAD_ID, rng, dtype)
        except ShapeError as e:
            raise BuildError(f"network B: {e}")
        return TextStack([encoder], config.embedding_dim)

    embedding = Embedding(vocab_size, config.embedding_dim, rng, dtype)
    first, time = _conv(config, config.embedding_dim, config.max_text_length, rng, dtype, "network B")
    second, time = _conv(config, config.filters, time, rng, dtype, "network B")
    min_output = config.kernel_size if base == "cnn" else 1
    pool = MaxPool1D(_pool_window(config, time, min_output, "network B"))
    time = pool.output_length(time)
    stages: List[Module] = [first, Dropout(config.stream_dropout), second, pool]
    if base == "cnn":
        third, _ = _conv(config, config.filters, time, rng, dtype, "network B")
        stages.append(third)
        width = config.filters
    else:
        recurrent_cls = LSTM if base == "lstm" else GRU
        stages.append(recurrent_cls(config.filters, config.units, rng=rng, dtype=dtype))
        width = config.units
    stages.append(GlobalAvgPool())
    return TextStack(stages, width, embedding)


class MultimodalModel(Module):
    """Numeric and text streams, an optional cross-attention fusion and the dense head."""

    kind = "Multimodal"

    def __init__(self, config: FusionConfig, network_a: Dict[str, NetworkStack],
                 network_b: Optional[TextStack], cross_attention: Optional[CrossAttention],
                 rng: np.random.Generator):
        self.logger = logging.getLogger("credit_fusion.fusion_models")
        self.config = config
        self.network_a = network_a
        self.network_b = network_b
        self.cross_attention = cross_attention
        dtype = np.dtype(config.dtype)
        self.head_hidden = Dense(self.fused_width, config.head_hidden, "relu", rng, dtype)
        self.head_dropout = Dropout(config.head_dropout)
        self.head_output = Dense(config.head_hidden, config.num_classes, None, rng, dtype)

    @property
    def fusion(self) -> str:
        return "cross_attention" if self.cross_attention is not None else "concat"

    @property
    def numeric_width(self) -> int:
        return sum(stack.output_dim for stack in self.network_a.values())

    @property
    def fused_width(self) -> int:
        if self.cross_attention is not None:
            a_width = next(iter(self.network_a.values())).output_dim
            return self.cross_attention.head.head_dim + a_width
        return self.numeric_width + (self.network_b.output_dim if self.network_b is not None else 0)

    def text_slice(self) -> Optional[slice]:
        """Coordinates of the text stream in the concatenated fusion vector."""
        if self.network_b is None or self.cross_attention is not None:
            return None
        return slice(self.numeric_width, self.numeric_width + self.network_b.output_dim)

    def count_modules(self, kind: str) -> int:
        return sum(1 for module in self.modules() if module.kind == kind)

    def _check_batch(self, batch: Batch) -> None:
        for name in self.config.numeric_channels:
            values = batch.channel(name)
            if values.ndim != 2 or values.shape[1] != CHANNEL_WIDTHS[name]:
                raise ShapeError(f"channel '{name}' has shape {values.shape}, "
                                 f"model expects width {CHANNEL_WIDTHS[name]}")
        if self.network_b is not None:
            tokens = batch.channel(TEXT_CHANNEL)
            if tokens.ndim != 2 or tokens.shape[1] != self.config.max_text_length:
                raise ShapeError(f"channel 'text' has shape {tokens.shape}, "
                                 f"model expects length {self.config.max_text_length}")

    def _numeric_inputs(self, batch: Batch) -> Dict[str, Tensor]:
        dtype = np.dtype(self.config.dtype)
        if EARLY_FUSION_KEY in self.network_a:
            fused = np.concatenate([batch.channel(c) for c in self.config.numeric_channels], axis=1)
            return {EARLY_FUSION_KEY: Tensor(fused[:, :, None], dtype=dtype)}
        return {name: Tensor(batch.channel(name)[:, :, None], dtype=dtype) for name in self.network_a}

    def fuse(self, batch: Batch, training: bool = False, rng=None, zero_text: bool = False) -> Tensor:
        """
        Run both streams and merge them into the head's input vector.

        Args:
            batch: Model inputs
            training: Enables dropout
            rng: Dropout generator
            zero_text: Replace the text stream's output with zeros at the fusion point

        Returns:
            [batch x fused_width]
        """
        self._check_batch(batch)
        inputs = self._numeric_inputs(batch)

        if self.cross_attention is not None:
            sequences = [self.network_a[name].forward_sequence(x, training, rng)[0] for name, x in inputs.items()]
            numeric = concat(sequences, axis=1)
            text, mask = self.network_b.forward_sequence(batch.tokens, training, rng)
            if zero_text:
                text = Tensor(np.zeros(text.shape, dtype=text.dtype))
            attended = self.cross_attention(numeric, text, key_mask=mask)
            return concat([global_avg_pool(attended), global_avg_pool(numeric)], axis=-1)

        vectors = [self.network_a[name](x, training=training, rng=rng) for name, x in inputs.items()]
        if self.network_b is not None:
            text = self.network_b(batch.tokens, training=training, rng=rng)
            if zero_text:
                text = Tensor(np.zeros(text.shape, dtype=text.dtype))
            vectors.append(text)
        return concat(vectors, axis=-1)

    def forward(self, batch: Batch, training: bool = False, rng=None, zero_text: bool = False) -> Tensor:
        hidden = self.head_hidden(self.fuse(batch, training, rng, zero_text))
        return self.head_output(self.head_dropout(hidden, training=training, rng=rng))

    def describe(self) -> Dict[str, object]:
        return {
            'group': self.config.group,
            'base': self.config.base,
            'fusion': self.fusion,
            'network_a': {name: stack.describe() for name, stack in self.network_a.items()},
            'network_b': self.network_b.describe() if self.network_b is not None else None,
            'parameters': self.parameter_count(),
        }


def _fusion_lengths(model: MultimodalModel) -> Tuple[int, int]:
    """Sequence lengths the cross-attention module sees from the numeric and text streams."""
    dtype = np.dtype(model.config.dtype)
    if EARLY_FUSION_KEY in model.network_a:
        widths = {EARLY_FUSION_KEY: sum(CHANNEL_WIDTHS[c] for c in model.config.numeric_channels)}
    else:
        widths = {name: CHANNEL_WIDTHS[name] for name in model.network_a}
    numeric_length = sum(
        model.network_a[name].forward_sequence(Tensor(np.zeros((1, width, 1), dtype=dtype)))[0].shape[-2]
        for name, width in widths.items())
    tokens = np.full((1, model.config.max_text_length), UNKNOWN_ID, dtype=np.int64)
    text_length = model.network_b.forward_sequence(tokens)[0].shape[-2]
    return numeric_length, text_length


def build_model(config: FusionConfig, rng: Optional[np.random.Generator] = None) -> MultimodalModel:
    """
    Build a fusion architecture.

    Groups 1 and 2 get one Network A per selected numeric channel; Groups 3
    and 4 one Network A over the early-fused numeric vector. Groups 2 and 4
    fuse with the text stream through one cross-attention module when both
    modalities are selected, otherwise the streams are concatenated.

    Args:
        config: FusionConfig
        rng: Initialization generator (defaults to one seeded by config.init_seed)

    Returns:
        MultimodalModel emitting [batch x num_classes] logits
    """
    rng = rng or np.random.default_rng(config.init_seed)
    numeric = config.numeric_channels

    network_a: Dict[str, NetworkStack] = {}
    if numeric and config.group in PER_CHANNEL_GROUPS:
        for name in numeric:
            network_a[name] = build_network_a(config.base, 1, config, CHANNEL_WIDTHS[name], rng)
    elif numeric:
        width = sum(CHANNEL_WIDTHS[name] for name in numeric)
        network_a[EARLY_FUSION_KEY] = build_network_a(config.base, 1, config, width, rng)

    network_b = build_network_b(config.base, config.vocab_size, config, rng) if config.uses_text else None

    cross_attention = None
    if config.uses_cross_attention:
        a_width = next(iter(network_a.values())).output_dim
        cross_attention = CrossAttention(a_width, network_b.output_dim, config.cross_attention_dim,
                                         config.cross_attention_dim, config.cross_attention_form,
                                         rng, np.dtype(config.dtype))
    elif config.group in CROSS_ATTENTION_GROUPS:
        logger.info(f"Group {config.group} with channels {config.channels} has a single modality, "
                    f"streams are concatenated")

    model = MultimodalModel(config, network_a, network_b, cross_attention, rng)
    if cross_attention is not None and config.cross_attention_form == "paper_literal":
        numeric_length, text_length = _fusion_lengths(model)
        if numeric_length != text_length:
            logger.warning(f"cross_attention_form=paper_literal needs equal stream lengths, got numeric "
                           f"{numeric_length} and text {text_length}; the standard form will be used")
    logger.info(f"Built group {config.group} {config.base} model ({model.fusion} fusion, "
                f"{len(network_a)} numeric stream(s), {model.parameter_count()} parameters)")
    return model


def parameter_count(model: Module) -> int:
    """Exact number of trainable scalars."""
    return model.parameter_count()
