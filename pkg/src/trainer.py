"""
Training engine for the credit fusion framework.
Mini-batch Adam over seed-shuffled batches with validation-based selection
of the best epoch.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

import tensor as T
from dataset import Dataset
from layers import Module
from metrics import MetricError, auc_weighted_ovr
from tensor import ShapeError, Tensor
from utils import derive_seed, make_rng

logger = logging.getLogger("credit_fusion.trainer")

SELECTION_METRICS = ("val_auc", "val_loss")
PREDICT_BATCH_SIZE = 256


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"training loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class TrainConfig(BaseModel):
    """Optimizer and loop settings."""

    model_config = ConfigDict(extra='forbid')

    epochs: int = Field(default=100, ge=0)
    batch_size: int = Field(default=100, ge=1)
    learning_rate: float = Field(default=1e-4, ge=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    seed: int = 0
    selection_metric: Literal["val_auc", "val_loss"] = "val_auc"
    clip_gradients: bool = False
    max_grad_norm: float = Field(default=5.0, gt=0.0)


@dataclass
class AdamState:
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> AdamState:
    """
    One bias-corrected Adam update, applied to the parameter arrays in place.

    Args:
        params: Named parameters
        grads: Gradient per parameter name
        state: Moment estimates from earlier steps
        config: Learning rate, betas and epsilon

    Returns:
        The updated state

    Raises:
        ShapeError: If a gradient does not match its parameter
    """
    state.step += 1
    beta1, beta2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for '{name}' has shape {grad.shape}, parameter has {param.shape}")
        m = state.first_moment.get(name, np.zeros_like(param.data))
        v = state.second_moment.get(name, np.zeros_like(param.data))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.first_moment[name], state.second_moment[name] = m, v
        param.data -= config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
    return state


class Adam:
    """Adam over a fixed set of named parameters."""

    def __init__(self, params: Dict[str, Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.state = AdamState()

    def zero_grad(self) -> None:
        T.zero_grad(self.params.values())

    def gradients(self) -> Dict[str, np.ndarray]:
        return {name: p.grad if p.grad is not None else np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        grads = self.gradients()
        if self.config.clip_gradients:
            grads = clip_by_global_norm(grads, self.config.max_grad_norm)
        adam_step(self.params, grads, self.state, self.config)


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


@dataclass
class TrainTrace:
    """Per-epoch losses and validation AUC of one run."""

    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_auc: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_frame(self) -> pd.DataFrame:
        epochs = np.arange(1, len(self) + 1)
        return pd.DataFrame({
            'epoch': epochs,
            'train_loss': self.train_loss,
            'val_loss': self.val_loss,
            'val_auc': self.val_auc,
            'best': epochs == self.best_epoch,
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "TrainTrace":
        best = frame.loc[frame['best'].astype(bool), 'epoch']
        return cls(
            train_loss=frame['train_loss'].astype(float).tolist(),
            val_loss=frame['val_loss'].astype(float).tolist(),
            val_auc=frame['val_auc'].astype(float).tolist(),
            best_epoch=int(best.iloc[0]) if len(best) else None,
        )


def predict_logits(model: Module, dataset: Dataset, batch_size: int = PREDICT_BATCH_SIZE,
                   zero_text: bool = False) -> np.ndarray:
    """Evaluation-mode logits for every record, in dataset order."""
    chunks = []
    for start in range(0, len(dataset), batch_size):
        batch = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
        chunks.append(model(batch, training=False, zero_text=zero_text).data)
    if not chunks:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(chunks, axis=0)


def predict_probabilities(model: Module, dataset: Dataset, batch_size: int = PREDICT_BATCH_SIZE,
                          zero_text: bool = False) -> np.ndarray:
    """
    Class probabilities for every record.

    Returns:
        [records x classes]; column j is class j + 1
    """
    logits = predict_logits(model, dataset, batch_size, zero_text)
    return T.softmax(Tensor(logits), axis=-1).data


def evaluate_loss(model: Module, dataset: Dataset, batch_size: int = PREDICT_BATCH_SIZE) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and probabilities over a dataset."""
    logits = predict_logits(model, dataset, batch_size)
    loss = T.cross_entropy_loss(Tensor(logits), dataset.labels - 1).item()
    return loss, T.softmax(Tensor(logits), axis=-1).data


class Trainer:
    """Runs the epoch loop for one model."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.logger = logging.getLogger("credit_fusion.trainer")

    def _check_inputs(self, model: Module, train: Dataset, validation: Dataset) -> None:
        if len(train) == 0 or len(validation) == 0:
            raise ValueError(f"training needs nonempty train and validation sets, "
                             f"got {len(train)} and {len(validation)} records")
        if getattr(model, 'network_b', None) is not None and (train.tokens is None or validation.tokens is None):
            raise ValueError("model has a text stream but the datasets carry no token ids")

    def _score(self, val_loss: float, val_auc: float) -> float:
        if self.config.selection_metric == "val_loss":
            return -val_loss
        return -np.inf if np.isnan(val_auc) else val_auc

    def train(self, model: Module, train: Dataset, validation: Dataset) -> Tuple[Module, TrainTrace]:
        """
        Train a model and keep the parameters of its best validation epoch.

        Args:
            model: Freshly built model
            train: Training records (token ids attached when the model reads text)
            validation: Validation records

        Returns:
            (model with best-epoch parameters, trace)

        Raises:
            TrainingDivergedError: If a batch loss is NaN or infinite
        """
        trace = TrainTrace()
        if self.config.epochs == 0:
            self.logger.info("epochs=0, returning the initialized model")
            return model, trace
        self._check_inputs(model, train, validation)

        n = len(train)
        batch_size = self.config.batch_size
        if batch_size > n:
            self.logger.warning(f"batch_size {batch_size} exceeds the {n} training records, using {n}")
            batch_size = n

        params = model.named_parameters()
        optimizer = Adam(params, self.config)
        shuffle_rng = make_rng(derive_seed(self.config.seed, "shuffle"))
        dropout_rng = make_rng(derive_seed(self.config.seed, "dropout"))
        best_score, best_params = -np.inf, None
        self.logger.info(f"Training {len(params)} parameter tensors on {n} records for "
                         f"{self.config.epochs} epochs (batch {batch_size}, lr {self.config.learning_rate:g})")

        for epoch in range(1, self.config.epochs + 1):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for batch_number, start in enumerate(range(0, n, batch_size), start=1):
                batch = train.batch(order[start:start + batch_size])
                optimizer.zero_grad()
                loss = T.cross_entropy_loss(model(batch, training=True, rng=dropout_rng), batch.labels - 1)
                value = loss.item()
                if not np.isfinite(value):
                    self.logger.error(f"Loss is {value} at epoch {epoch}, batch {batch_number}")
                    raise TrainingDivergedError(epoch, batch_number, value)
                T.backward(loss)
                optimizer.step()
                total += value * batch.size
                self.logger.debug(f"epoch {epoch} batch {batch_number}: loss {value:.6f}")

            val_loss, probabilities = evaluate_loss(model, validation)
            try:
                val_auc = auc_weighted_ovr(probabilities, validation.labels)
            except MetricError as e:
                self.logger.warning(f"Validation AUC undefined at epoch {epoch}: {e}")
                val_auc = float('nan')
            trace.train_loss.append(total / n)
            trace.val_loss.append(val_loss)
            trace.val_auc.append(val_auc)

            score = self._score(val_loss, val_auc)
            if best_params is None or score > best_score:
                best_score, trace.best_epoch = score, epoch
                best_params = {name: p.data.copy() for name, p in params.items()}
            self.logger.info(f"Epoch {epoch}/{self.config.epochs}: train loss {total / n:.4f}, "
                             f"val loss {val_loss:.4f}, val AUC {val_auc:.4f}")

        for name, p in params.items():
            p.data[...] = best_params[name]
        optimizer.zero_grad()
        self.logger.info(f"Restored parameters of best epoch {trace.best_epoch} by {self.config.selection_metric}")
        return model, trace


def train(model: Module, train_set: Dataset, validation_set: Dataset,
          config: TrainConfig) -> Tuple[Module, TrainTrace]:
    return Trainer(config).train(model, train_set, validation_set)
