"""
Layer zoo for the credit fusion framework.
Dense and convolution blocks, LSTM and GRU recurrences, scaled dot-product
self- and cross-attention, and a small transformer encoder used as the
attention-based text encoder.
"""

import logging
import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from tensor import (
    ShapeError, Tensor, activation, add, concat, conv1d, dropout, embedding_lookup,
    global_avg_pool, masked_mean_pool, matmul, max_pool1d, mul, reshape, sigmoid,
    softmax, sqrt, stack, tanh, tensor_mean, where,
)

logger = logging.getLogger("credit_fusion.layers")

CROSS_ATTENTION_FORMS = ("standard", "paper_literal")
MASK_FILL = -1e9


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng: np.random.Generator, size: int, dtype=np.float64) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    return (q * np.sign(np.diag(r))).astype(dtype)


def parameter(data: np.ndarray, name: str = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    kind = "Module"

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        found: Dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if name.startswith('_'):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    found[path] = value
            elif isinstance(value, Module):
                found.update(value.named_parameters(path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{path}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        found[f"{path}.{i}"] = item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{path}.{key}."))
        return found

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def modules(self) -> Iterator["Module"]:
        yield self
        for name, value in vars(self).items():
            if name.startswith('_'):
                continue
            children = []
            if isinstance(value, Module):
                children = [value]
            elif isinstance(value, (list, tuple)):
                children = [v for v in value if isinstance(v, Module)]
            elif isinstance(value, dict):
                children = [v for v in value.values() if isinstance(v, Module)]
            for child in children:
                yield from child.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))


# dense

class Dense(Module):
    """Fully connected layer: input . W + b, then an optional activation."""

    kind = "Dense"

    def __init__(self, in_features: int, out_features: int, activation: Optional[str] = None,
                 rng: Optional[np.random.Generator] = None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.activation = activation
        self.weights = parameter(glorot_uniform(rng, in_features, out_features,
                                                (in_features, out_features), dtype))
        self.bias = parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: Dense, inputs: Tensor) -> Tensor:
    """
    Apply a dense layer.

    Raises:
        ShapeError: If the input's last dimension differs from the layer's width
    """
    if inputs.shape[-1] != layer.in_features:
        raise ShapeError(f"dense layer expects last dimension {layer.in_features}, got shape {inputs.shape}")
    return activation(add(matmul(inputs, layer.weights), layer.bias), layer.activation)


# convolution and pooling stages

class Conv1D(Module):
    kind = "Conv"

    def __init__(self, in_channels: int, filters: int, kernel_size: int, stride: int = 1,
                 activation: Optional[str] = "relu", rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.activation = activation
        self.kernels = parameter(glorot_uniform(rng, kernel_size * in_channels, kernel_size * filters,
                                                (kernel_size, in_channels, filters), dtype))
        self.bias = parameter(np.zeros(filters, dtype=dtype))

    def output_length(self, time: int) -> int:
        return (time - self.kernel_size) // self.stride + 1

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return activation(conv1d(x, self.kernels, self.bias, self.stride), self.activation)


class MaxPool1D(Module):
    kind = "MaxP"

    def __init__(self, window: int):
        self.window = window

    def output_length(self, time: int) -> int:
        return time // self.window

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return max_pool1d(x, self.window)


class GlobalAvgPool(Module):
    kind = "GlobAve"

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return global_avg_pool(x)


class Dropout(Module):
    kind = "Drop"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return dropout(x, self.rate, training, rng)


class Embedding(Module):
    kind = "Embed"

    def __init__(self, vocab_size: int, dim: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = parameter(rng.uniform(-0.05, 0.05, size=(vocab_size, dim)).astype(dtype))

    def forward(self, ids, training: bool = False, rng=None) -> Tensor:
        return embedding_lookup(self.table, ids)


# recurrences

def _sequence_input(sequence: Tensor) -> Tuple[Tensor, bool]:
    if sequence.ndim == 2:
        sequence = reshape(sequence, (1,) + sequence.shape)
        squeeze = True
    elif sequence.ndim == 3:
        squeeze = False
    else:
        raise ShapeError(f"recurrent layers expect [time x features] or [batch x time x features], "
                         f"got {sequence.shape}")
    if sequence.shape[1] == 0:
        raise ShapeError("recurrent layer received an empty sequence")
    return sequence, squeeze


class LSTM(Module):
    """Long short-term memory layer returning the full hidden sequence. Gate order: i, f, g, o."""

    kind = "LSTM"
    GATES = ("input", "forget", "candidate", "output")

    def __init__(self, input_size: int, units: int, rng: Optional[np.random.Generator] = None,
                 forget_bias: float = 1.0, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.input_size = input_size
        self.units = units
        self.input_weights = parameter(glorot_uniform(rng, input_size, 4 * units, (input_size, 4 * units), dtype))
        self.recurrent_weights = parameter(np.concatenate([orthogonal(rng, units, dtype) for _ in range(4)], axis=1))
        bias = np.zeros(4 * units, dtype=dtype)
        bias[self.gate_slice("forget")] = forget_bias
        self.bias = parameter(bias)

    def gate_slice(self, gate: str) -> slice:
        index = self.GATES.index(gate)
        return slice(index * self.units, (index + 1) * self.units)

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return lstm_forward(self, x)


def lstm_forward(layer: LSTM, sequence: Tensor) -> Tensor:
    """
    Run an LSTM over a sequence from zero hidden and cell state.

    Args:
        layer: LSTM parameters
        sequence: [time x features] or [batch x time x features]

    Returns:
        Hidden state at every step, [(batch x) time x units]
    """
    x, squeeze = _sequence_input(sequence)
    batch, time, _ = x.shape
    u = layer.units
    projected = add(matmul(x, layer.input_weights), layer.bias)
    h = Tensor(np.zeros((batch, u), dtype=x.dtype))
    c = Tensor(np.zeros((batch, u), dtype=x.dtype))
    outputs = []
    for t in range(time):
        z = add(projected[:, t, :], matmul(h, layer.recurrent_weights))
        i = sigmoid(z[:, 0:u])
        f = sigmoid(z[:, u:2 * u])
        g = tanh(z[:, 2 * u:3 * u])
        o = sigmoid(z[:, 3 * u:4 * u])
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        outputs.append(h)
    out = stack(outputs, axis=1)
    return reshape(out, out.shape[1:]) if squeeze else out


class GRU(Module):
    """Gated recurrent unit returning the full hidden sequence. Gate order: z (update), r (reset), n."""

    kind = "GRU"
    GATES = ("update", "reset", "candidate")

    def __init__(self, input_size: int, units: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.input_size = input_size
        self.units = units
        self.input_weights = parameter(glorot_uniform(rng, input_size, 3 * units, (input_size, 3 * units), dtype))
        self.recurrent_weights = parameter(np.concatenate([orthogonal(rng, units, dtype) for _ in range(3)], axis=1))
        self.bias = parameter(np.zeros(3 * units, dtype=dtype))

    def gate_slice(self, gate: str) -> slice:
        index = self.GATES.index(gate)
        return slice(index * self.units, (index + 1) * self.units)

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return gru_forward(self, x)


def gru_forward(layer: GRU, sequence: Tensor) -> Tensor:
    """
    Run a GRU over a sequence from a zero hidden state.

    h_t = (1 - z) * h_{t-1} + z * tanh(W_n x + U_n (r * h_{t-1}) + b_n)
    """
    x, squeeze = _sequence_input(sequence)
    batch, time, _ = x.shape
    u = layer.units
    projected = add(matmul(x, layer.input_weights), layer.bias)
    gates_weights = layer.recurrent_weights[:, 0:2 * u]
    candidate_weights = layer.recurrent_weights[:, 2 * u:3 * u]
    h = Tensor(np.zeros((batch, u), dtype=x.dtype))
    outputs = []
    for t in range(time):
        xt = projected[:, t, :]
        hu = matmul(h, gates_weights)
        z = sigmoid(add(xt[:, 0:u], hu[:, 0:u]))
        r = sigmoid(add(xt[:, u:2 * u], hu[:, u:2 * u]))
        n = tanh(add(xt[:, 2 * u:3 * u], matmul(mul(r, h), candidate_weights)))
        h = add(mul(1.0 - z, h), mul(z, n))
        outputs.append(h)
    out = stack(outputs, axis=1)
    return reshape(out, out.shape[1:]) if squeeze else out


# attention

class AttentionHead(Module):
    """Query, key and value projections of one attention head; d_k is the head width."""

    kind = "Head"

    def __init__(self, model_dim: int, head_dim: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.model_dim = model_dim
        self.head_dim = head_dim
        self.w_q = parameter(glorot_uniform(rng, model_dim, head_dim, (model_dim, head_dim), dtype))
        self.w_k = parameter(glorot_uniform(rng, model_dim, head_dim, (model_dim, head_dim), dtype))
        self.w_v = parameter(glorot_uniform(rng, model_dim, head_dim, (model_dim, head_dim), dtype))

    @property
    def d_k(self) -> int:
        return self.w_k.shape[1]


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor,
                                 key_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """
    softmax(Q K^T / sqrt(d_k)) V.

    Args:
        q: [(batch x) t_q x d_k]
        k: [(batch x) t_k x d_k]
        v: [(batch x) t_k x d_v]
        key_mask: Optional [batch x t_k] boolean, false marks padding keys

    Returns:
        (output, attention weights); weight rows sum to one
    """
    d_k = q.shape[-1]
    scores = mul(matmul(q, k.swapaxes(-1, -2)), 1.0 / math.sqrt(d_k))
    if key_mask is not None:
        blocked = ~np.asarray(key_mask, dtype=bool)
        scores = where(blocked[..., None, :], scores, MASK_FILL)
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def _check_model_dim(head: AttentionHead, x: Tensor, label: str) -> None:
    if x.shape[-1] != head.model_dim:
        raise ShapeError(f"{label} has width {x.shape[-1]}, attention head expects {head.model_dim}")


def self_attention(head: AttentionHead, sequence: Tensor, key_mask: Optional[np.ndarray] = None,
                   return_weights: bool = False):
    """Scaled dot-product attention with Q, K and V projected from the same sequence."""
    _check_model_dim(head, sequence, "sequence")
    if sequence.shape[-2] < 1:
        raise ShapeError("self_attention over an empty sequence")
    q = matmul(sequence, head.w_q)
    k = matmul(sequence, head.w_k)
    v = matmul(sequence, head.w_v)
    out, weights = scaled_dot_product_attention(q, k, v, key_mask)
    return (out, weights) if return_weights else out


def cross_attention(head: AttentionHead, modality_a: Tensor, modality_b: Tensor, form: str = "standard",
                    key_mask: Optional[np.ndarray] = None, return_weights: bool = False):
    """
    Attention across two modalities already projected to the head's model width.

    The standard form takes Q from modality_a and K, V from modality_b. The
    paper_literal form takes Q and V from modality_a and K from modality_b; it
    is only well-shaped when both sequences have the same length, otherwise
    the standard form is used.

    Returns:
        [(batch x) t_a x head_dim]

    Raises:
        ShapeError: If either modality is empty or widths disagree
    """
    if form not in CROSS_ATTENTION_FORMS:
        raise ValueError(f"Unknown cross-attention form '{form}'. Use one of: {CROSS_ATTENTION_FORMS}")
    _check_model_dim(head, modality_a, "modality_a")
    _check_model_dim(head, modality_b, "modality_b")
    t_a, t_b = modality_a.shape[-2], modality_b.shape[-2]
    if t_a == 0 or t_b == 0:
        raise ShapeError(f"cross_attention needs nonempty modalities, got lengths {t_a} and {t_b}")

    q = matmul(modality_a, head.w_q)
    k = matmul(modality_b, head.w_k)
    if form == "paper_literal" and t_a == t_b:
        v = matmul(modality_a, head.w_v)
    else:
        if form == "paper_literal":
            logger.debug(f"Lengths {t_a} and {t_b} differ, using the standard cross-attention form")
        v = matmul(modality_b, head.w_v)
    out, weights = scaled_dot_product_attention(q, k, v, key_mask)
    return (out, weights) if return_weights else out


class SelfAttention(Module):
    """Single-head self-attention stage of the attentive CNN."""

    kind = "ATT"

    def __init__(self, model_dim: int, head_dim: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64):
        self.head = AttentionHead(model_dim, head_dim, rng, dtype)

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return self_attention(self.head, x)


class CrossAttention(Module):
    """Per-modality input projections to a common width followed by one cross-attention head."""

    kind = "CrossATT"

    def __init__(self, dim_a: int, dim_b: int, model_dim: int, head_dim: int, form: str = "standard",
                 rng: Optional[np.random.Generator] = None, dtype=np.float64):
        if form not in CROSS_ATTENTION_FORMS:
            raise ValueError(f"Unknown cross-attention form '{form}'. Use one of: {CROSS_ATTENTION_FORMS}")
        rng = rng or np.random.default_rng(0)
        self.form = form
        self.project_a = Dense(dim_a, model_dim, rng=rng, dtype=dtype)
        self.project_b = Dense(dim_b, model_dim, rng=rng, dtype=dtype)
        self.head = AttentionHead(model_dim, head_dim, rng, dtype)

    def forward(self, seq_a: Tensor, seq_b: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        return cross_attention(self.head, self.project_a(seq_a), self.project_b(seq_b),
                               form=self.form, key_mask=key_mask)


class MultiHeadSelfAttention(Module):
    """Heads run in parallel, outputs concatenated and mixed by a dense projection."""

    kind = "MHA"

    def __init__(self, dim: int, heads: int, rng: Optional[np.random.Generator] = None, dtype=np.float64):
        if heads < 1 or dim % heads:
            raise ShapeError(f"model width {dim} is not divisible by {heads} heads")
        rng = rng or np.random.default_rng(0)
        self.heads = [AttentionHead(dim, dim // heads, rng, dtype) for _ in range(heads)]
        self.output = Dense(dim, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        outputs = [self_attention(head, x, key_mask) for head in self.heads]
        return self.output(concat(outputs, axis=-1))


class LayerNorm(Module):
    kind = "LayerNorm"

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        self.eps = eps
        self.gamma = parameter(np.ones(dim, dtype=dtype))
        self.beta = parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        centered = x - tensor_mean(x, axis=-1, keepdims=True)
        variance = tensor_mean(centered * centered, axis=-1, keepdims=True)
        return centered / sqrt(variance + self.eps) * self.gamma + self.beta


class TransformerEncoderBlock(Module):
    kind = "Encoder"

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: Optional[np.random.Generator] = None,
                 eps: float = 1e-5, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        self.attention = MultiHeadSelfAttention(dim, heads, rng, dtype)
        self.norm_attention = LayerNorm(dim, eps, dtype)
        self.feed_forward_in = Dense(dim, ff_dim, activation="relu", rng=rng, dtype=dtype)
        self.feed_forward_out = Dense(ff_dim, dim, rng=rng, dtype=dtype)
        self.norm_output = LayerNorm(dim, eps, dtype)

    def forward(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        return transformer_encoder_block(self, x, key_mask)


def transformer_encoder_block(block: TransformerEncoderBlock, sequence: Tensor,
                              key_mask: Optional[np.ndarray] = None) -> Tensor:
    """Multi-head self-attention and a position-wise feed-forward, each with residual add and layer norm."""
    attended = block.norm_attention(sequence + block.attention(sequence, key_mask))
    return block.norm_output(attended + block.feed_forward_out(block.feed_forward_in(attended)))


def positional_encoding(time: int, dim: int) -> Tensor:
    """
    Sinusoidal position table: sin on even columns, cos on odd columns.

    Raises:
        ShapeError: If dim is odd or either size is not positive
    """
    if time < 1 or dim < 1:
        raise ShapeError(f"positional encoding needs positive sizes, got time={time}, dim={dim}")
    if dim % 2:
        raise ShapeError(f"positional encoding needs an even width, got {dim}")
    positions = np.arange(time, dtype=np.float64)[:, None]
    rates = 1.0 / np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((time, dim))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    return Tensor(table)


class TextEncoder(Module):
    """Token embeddings plus sinusoidal positions through a stack of encoder blocks."""

    kind = "BERT"

    def __init__(self, vocab_size: int, dim: int, heads: int = 2, blocks: int = 2, ff_dim: int = 128,
                 pad_id: int = 0, rng: Optional[np.random.Generator] = None, dtype=np.float64):
        rng = rng or np.random.default_rng(0)
        if dim % 2:
            raise ShapeError(f"text encoder width must be even, got {dim}")
        self.dim = dim
        self.pad_id = pad_id
        self.embedding = Embedding(vocab_size, dim, rng, dtype)
        self.blocks = [TransformerEncoderBlock(dim, heads, ff_dim, rng, dtype=dtype) for _ in range(blocks)]

    def encode(self, tokens: np.ndarray) -> Tuple[Tensor, np.ndarray]:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        mask = tokens != self.pad_id
        x = self.embedding(tokens) + positional_encoding(tokens.shape[1], self.dim).data.astype(
            self.embedding.table.dtype)
        for block in self.blocks:
            x = block(x, mask)
        return x, mask

    def forward(self, tokens: np.ndarray, training: bool = False, rng=None) -> Tensor:
        sequence, mask = self.encode(tokens)
        return masked_mean_pool(sequence, mask)
