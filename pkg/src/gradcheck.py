"""
Finite-difference gradient checking for the credit fusion framework.
Compares reverse-mode gradients with central differences for single ops,
layers and complete fusion architectures.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import layers
import tensor as T
from tensor import Tensor

logger = logging.getLogger("credit_fusion.gradcheck")

DEFAULT_TOLERANCE = 1e-4
MODEL_EPSILON = 1e-5

ParameterSet = Union[Sequence[Tensor], Dict[str, Tensor]]


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_parameter_errors: List[float]
    names: List[str] = field(default_factory=list)

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_relative_error < tolerance


def relative_error(analytic, numeric) -> np.ndarray:
    """|a - n| / max(|a|, |n|, 1e-8), elementwise."""
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def projection_loss(output: Tensor, projection: np.ndarray) -> Tensor:
    """Scalar sum(output * projection); a random projection exercises every output coordinate."""
    return T.tensor_sum(T.mul(output, projection))


def grad_check(function: Callable[[], Tensor], parameters: ParameterSet, epsilon: float = 1e-6,
               num_samples: Optional[int] = None, seed: int = 0) -> GradCheckResult:
    """
    Compare analytic gradients with central differences.

    Args:
        function: Rebuilds the graph from the current parameter values and returns a scalar loss
        parameters: Tensors (or named tensors) to check; must be 64-bit
        epsilon: Central-difference step
        num_samples: Check this many randomly chosen scalar coordinates instead of all of them
        seed: Coordinate sampling seed

    Returns:
        GradCheckResult with one error per checked coordinate
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    named = dict(parameters) if isinstance(parameters, dict) else \
        {p.name or f"param{i}": p for i, p in enumerate(parameters)}
    for name, p in named.items():
        if p.dtype != np.float64:
            raise ValueError(f"gradient checking needs 64-bit parameters, '{name}' is {p.dtype}")

    for p in named.values():
        p.zero_grad()
    T.backward(function())
    analytic = {name: p.grad.copy() for name, p in named.items()}

    coordinates: List[Tuple[str, tuple]] = [
        (name, idx) for name, p in named.items() for idx in np.ndindex(*p.shape)
    ]
    if num_samples is not None and num_samples < len(coordinates):
        chosen = np.random.default_rng(seed).choice(len(coordinates), size=num_samples, replace=False)
        coordinates = [coordinates[i] for i in sorted(chosen)]

    errors, labels = [], []
    for name, idx in coordinates:
        p = named[name]
        original = p.data[idx]
        p.data[idx] = original + epsilon
        plus = function().item()
        p.data[idx] = original - epsilon
        minus = function().item()
        p.data[idx] = original
        numeric = (plus - minus) / (2.0 * epsilon)
        errors.append(float(relative_error(analytic[name][idx], numeric)))
        labels.append(f"{name}{list(idx)}")

    for p in named.values():
        p.zero_grad()
    return GradCheckResult(max_relative_error=max(errors) if errors else 0.0,
                           per_parameter_errors=errors, names=labels)


# random layer instances, sampled away from relu and max-pool kinks

def _leaf(data: np.ndarray, name: str) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    return rng.uniform(margin, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng: np.random.Generator, shape, gap: float = 0.05) -> np.ndarray:
    size = int(np.prod(shape))
    return (rng.permutation(size) * gap + rng.uniform(0, gap / 4, size)).reshape(shape) - size * gap / 2


def _case_matmul(rng):
    a, b = _leaf(rng.standard_normal((3, 4)), "a"), _leaf(rng.standard_normal((4, 2)), "b")
    r = rng.standard_normal((3, 2))
    return lambda: projection_loss(T.matmul(a, b), r), [a, b]


def _case_conv1d(rng):
    x = _leaf(rng.standard_normal((2, 8, 3)), "input")
    k = _leaf(rng.standard_normal((2, 3, 4)), "kernels")
    b = _leaf(rng.standard_normal(4), "bias")
    stride = int(rng.integers(1, 3))
    out_time = (8 - 2) // stride + 1
    r = rng.standard_normal((2, out_time, 4))
    return lambda: projection_loss(T.conv1d(x, k, b, stride), r), [x, k, b]


def _case_max_pool(rng):
    x = _leaf(_distinct(rng, (9, 2)), "input")
    r = rng.standard_normal((4, 2))
    return lambda: projection_loss(T.max_pool1d(x, 2), r), [x]


def _case_global_avg_pool(rng):
    x = _leaf(rng.standard_normal((2, 5, 3)), "input")
    r = rng.standard_normal((2, 3))
    return lambda: projection_loss(T.global_avg_pool(x), r), [x]


def _activation_case(kind):
    def build(rng):
        data = _away_from_zero(rng, (3, 4)) if kind == "relu" else rng.standard_normal((3, 4))
        x = _leaf(data, "input")
        r = rng.standard_normal((3, 4))
        return lambda: projection_loss(T.activation(x, kind), r), [x]
    return build


def _case_concat(rng):
    parts = [_leaf(rng.standard_normal((2, w)), f"part{i}") for i, w in enumerate((2, 3, 1))]
    r = rng.standard_normal((2, 6))
    return lambda: projection_loss(T.concat(parts, axis=-1), r), parts


def _case_embedding(rng):
    table = _leaf(rng.standard_normal((6, 3)), "table")
    ids = rng.integers(0, 6, size=(2, 5))
    r = rng.standard_normal((2, 5, 3))
    return lambda: projection_loss(T.embedding_lookup(table, ids), r), [table]


def _case_cross_entropy(rng):
    logits = _leaf(rng.standard_normal((4, 8)), "logits")
    labels = rng.integers(0, 8, size=4)
    return lambda: T.cross_entropy_loss(logits, labels), [logits]


def _case_masked_mean_pool(rng):
    x = _leaf(rng.standard_normal((2, 5, 3)), "input")
    mask = np.array([[1, 1, 1, 0, 0], [1, 0, 1, 1, 1]], dtype=bool)
    r = rng.standard_normal((2, 3))
    return lambda: projection_loss(T.masked_mean_pool(x, mask), r), [x]


def _case_dense(rng):
    layer = layers.Dense(4, 3, activation="tanh", rng=rng)
    x = _leaf(rng.standard_normal((2, 4)), "input")
    r = rng.standard_normal((2, 3))
    return lambda: projection_loss(layer(x), r), {**layer.named_parameters(), "input": x}


def _recurrent_case(cls):
    def build(rng):
        layer = cls(3, 3, rng=rng)
        x = _leaf(rng.standard_normal((2, 5, 3)), "input")
        r = rng.standard_normal((2, 5, 3))
        return lambda: projection_loss(layer(x), r), {**layer.named_parameters(), "input": x}
    return build


def _case_self_attention(rng):
    head = layers.AttentionHead(4, 3, rng)
    x = _leaf(rng.standard_normal((2, 5, 4)), "input")
    r = rng.standard_normal((2, 5, 3))
    return lambda: projection_loss(layers.self_attention(head, x), r), {**head.named_parameters(), "input": x}


def _cross_attention_case(form):
    def build(rng):
        head = layers.AttentionHead(4, 3, rng)
        t_b = 4 if form == "standard" else 3
        a = _leaf(rng.standard_normal((2, 3, 4)), "modality_a")
        b = _leaf(rng.standard_normal((2, t_b, 4)), "modality_b")
        r = rng.standard_normal((2, 3, 3))
        return (lambda: projection_loss(layers.cross_attention(head, a, b, form=form), r),
                {**head.named_parameters(), "modality_a": a, "modality_b": b})
    return build


def _case_layer_norm(rng):
    norm = layers.LayerNorm(5)
    norm.gamma.data[:] = rng.standard_normal(5)
    x = _leaf(rng.standard_normal((3, 5)), "input")
    r = rng.standard_normal((3, 5))
    return lambda: projection_loss(norm(x), r), {**norm.named_parameters(), "input": x}


def _case_encoder_block(rng):
    block = layers.TransformerEncoderBlock(8, 2, 6, rng)
    x = _leaf(rng.standard_normal((6, 8)), "input")
    r = rng.standard_normal((6, 8))
    return lambda: projection_loss(block(x), r), {**block.named_parameters(), "input": x}


LAYER_CASES: Dict[str, Callable] = {
    "matmul": _case_matmul,
    "conv1d": _case_conv1d,
    "max_pool1d": _case_max_pool,
    "global_avg_pool": _case_global_avg_pool,
    "relu": _activation_case("relu"),
    "sigmoid": _activation_case("sigmoid"),
    "tanh": _activation_case("tanh"),
    "softmax": _activation_case("softmax_lastdim"),
    "concat": _case_concat,
    "embedding_lookup": _case_embedding,
    "cross_entropy_loss": _case_cross_entropy,
    "masked_mean_pool": _case_masked_mean_pool,
    "dense": _case_dense,
    "lstm": _recurrent_case(layers.LSTM),
    "gru": _recurrent_case(layers.GRU),
    "self_attention": _case_self_attention,
    "cross_attention": _cross_attention_case("standard"),
    "cross_attention_paper_literal": _cross_attention_case("paper_literal"),
    "layer_norm": _case_layer_norm,
    "transformer_encoder_block": _case_encoder_block,
}


def small_model_config(group: int, base: str, **overrides):
    """Narrow FusionConfig whose full architecture can be checked coordinate by coordinate."""
    from fusion_models import FusionConfig

    values = dict(group=group, base=base, filters=4, units=4, attention_dim=4, embedding_dim=4,
                  encoder_heads=2, encoder_blocks=1, encoder_ff_dim=8, cross_attention_dim=4,
                  head_hidden=6, max_text_length=12, vocab_size=20, stream_dropout=0.2, head_dropout=0.3)
    values.update(overrides)
    return FusionConfig(**values)


def random_batch(config, batch_size: int, rng: np.random.Generator):
    """Random inputs matching a FusionConfig; text rows end in padding."""
    from dataset import CHANNEL_WIDTHS, Batch

    tokens = rng.integers(1, config.vocab_size, size=(batch_size, config.max_text_length))
    for row in range(batch_size):
        tokens[row, rng.integers(config.max_text_length // 2, config.max_text_length):] = 0
    return Batch(
        bond=rng.standard_normal((batch_size, CHANNEL_WIDTHS['bond'])),
        ratios=rng.standard_normal((batch_size, CHANNEL_WIDTHS['ratios'])),
        market=rng.standard_normal((batch_size, CHANNEL_WIDTHS['market'])),
        covariate=rng.standard_normal((batch_size, CHANNEL_WIDTHS['covariate'])),
        tokens=tokens,
        labels=rng.integers(1, config.num_classes + 1, size=batch_size),
    )


def check_model(config, num_samples: int = 20, seed: int = 0, batch_size: int = 3,
                epsilon: float = MODEL_EPSILON) -> GradCheckResult:
    """Gradient check of a full architecture on a random batch, sampling parameter coordinates."""
    from fusion_models import build_model

    rng = np.random.default_rng(seed)
    model = build_model(config, rng)
    batch = random_batch(config, batch_size, rng)
    targets = batch.labels - 1

    def loss():
        return T.mul(T.cross_entropy_loss(model(batch), targets), float(batch_size))

    return grad_check(loss, model.named_parameters(), epsilon=epsilon, num_samples=num_samples, seed=seed)


def run_gradcheck_suite(instances: int = 100, seed: int = 0, include_models: bool = True,
                        model_samples: int = 20, tolerance: float = DEFAULT_TOLERANCE) -> Dict[str, GradCheckResult]:
    """
    Gradient-check random layer instances and, optionally, all sixteen architectures.

    Args:
        instances: Number of random layer instances, spread round-robin over the cases
        seed: Base seed
        include_models: Also check every (group, base) architecture
        model_samples: Parameter coordinates sampled per architecture
        tolerance: Pass threshold on the maximum relative error

    Returns:
        Worst result per case name
    """
    from fusion_models import BASES, GROUPS

    rng = np.random.default_rng(seed)
    names = list(LAYER_CASES)
    results: Dict[str, GradCheckResult] = {}
    for i in range(instances):
        name = names[i % len(names)]
        function, parameters = LAYER_CASES[name](rng)
        result = grad_check(function, parameters)
        if name not in results or result.max_relative_error > results[name].max_relative_error:
            results[name] = result

    if include_models:
        for group in GROUPS:
            for base in BASES:
                results[f"model_group{group}_{base}"] = check_model(
                    small_model_config(group, base), num_samples=model_samples, seed=seed)

    failed = [name for name, result in results.items() if not result.passed(tolerance)]
    for name, result in results.items():
        logger.info(f"{name}: max relative error {result.max_relative_error:.3e}")
    if failed:
        logger.error(f"Gradient check failed for {failed}")
    else:
        logger.info(f"All {len(results)} gradient checks passed below {tolerance:g}")
    return results
