"""
Evaluation for the credit fusion framework.
Assembles metric reports with bootstrap intervals, recomputes them per
agency, prediction-lag bucket and period, and runs channel ablations.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import settings
from dataset import AGENCIES, ALL_CHANNELS, NUMERIC_CHANNELS, ChannelScaler, Dataset
from fusion_models import FusionConfig, MultimodalModel, build_model
from metrics import (
    MetricError, auc_weighted_ovr, accuracy, bootstrap_ci, confusion_matrix, f1_weighted,
    per_class_auc, row_normalized,
)
from splits import DatasetSplit
from text_preprocessing import Vocabulary, encode_corpus, fit_vocabulary
from trainer import TrainConfig, Trainer, TrainTrace, predict_probabilities
from utils import derive_seed, month_index

logger = logging.getLogger("credit_fusion.evaluation")

SLICE_KEYS = ("agency", "lag_bucket", "period")
LAG_BUCKETS = ("short", "medium", "long")
PERIODS = ("before", "after")
CHANNEL_GROUPS = {"numeric": list(NUMERIC_CHANNELS), "all": list(ALL_CHANNELS)}
OVERALL = "all"


def lag_bucket(lag_months: int) -> str:
    """short up to 4 months, medium 5 to 9, long from 10."""
    if lag_months <= 4:
        return "short"
    if lag_months <= 9:
        return "medium"
    return "long"


def period_bucket(time_index: str, cut: str) -> str:
    return "before" if month_index(time_index) < month_index(cut) else "after"


class EvaluationConfig(BaseModel):
    """Bootstrap and slicing options."""

    model_config = ConfigDict(extra='forbid')

    resamples: int = Field(default_factory=lambda: settings.bootstrap_resamples, ge=0)
    confidence_level: float = Field(default_factory=lambda: settings.confidence_level, gt=0.0, lt=1.0)
    slices: List[Literal["agency", "lag_bucket", "period"]] = Field(default_factory=list)
    period_cut: str = Field(default_factory=lambda: settings.period_cut)
    f1_average: Literal["weighted", "macro", "micro"] = "weighted"
    seed: int = 0

    @field_validator('resamples')
    @classmethod
    def validate_resamples(cls, v):
        if 0 < v < 100:
            raise ValueError('resamples must be 0 (no intervals) or at least 100')
        return v

    @field_validator('period_cut')
    @classmethod
    def validate_period_cut(cls, v):
        month_index(v)
        return v


@dataclass
class MetricsReport:
    """Metrics of one evaluation, optionally with per-slice reports."""

    weighted_auc: float
    f1: float
    accuracy: float
    per_class_auc: Dict[int, float]
    confusion: np.ndarray
    ci: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    slices: Dict[str, "MetricsReport"] = field(default_factory=dict)
    empty: bool = False

    @property
    def support(self) -> int:
        return int(self.confusion.sum())

    @classmethod
    def empty_report(cls, classes: int) -> "MetricsReport":
        nan = float('nan')
        return cls(weighted_auc=nan, f1=nan, accuracy=nan, per_class_auc={c: nan for c in range(1, classes + 1)},
                   confusion=np.zeros((classes, classes), dtype=np.int64), empty=True)

    def to_rows(self, slice_name: str = OVERALL) -> List[dict]:
        """Flat rows (slice, metric, value, ci_low, ci_high); slices follow the overall rows."""
        nan = float('nan')
        rows = [{'slice': slice_name, 'metric': 'support', 'value': self.support, 'ci_low': nan, 'ci_high': nan}]
        for metric in ('weighted_auc', 'f1', 'accuracy'):
            low, high = self.ci.get(metric, (nan, nan))
            rows.append({'slice': slice_name, 'metric': metric, 'value': getattr(self, metric),
                         'ci_low': low, 'ci_high': high})
        for c, value in self.per_class_auc.items():
            rows.append({'slice': slice_name, 'metric': f'auc_class_{c}', 'value': value, 'ci_low': nan, 'ci_high': nan})
        for (i, j), count in np.ndenumerate(self.confusion):
            rows.append({'slice': slice_name, 'metric': f'confusion_{i + 1}_{j + 1}', 'value': int(count),
                         'ci_low': nan, 'ci_high': nan})
        for name, report in self.slices.items():
            rows.extend(report.to_rows(name))
        return rows

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.to_rows(), columns=['slice', 'metric', 'value', 'ci_low', 'ci_high'])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "MetricsReport":
        """Rebuild a report (with slices) from its flat rows."""
        reports = {}
        for slice_name, rows in frame.groupby('slice', sort=False):
            values = dict(zip(rows['metric'], rows['value'].astype(float)))
            intervals = {m: (float(lo), float(hi)) for m, lo, hi in zip(rows['metric'], rows['ci_low'], rows['ci_high'])
                         if not (np.isnan(lo) and np.isnan(hi))}
            classes = sum(1 for m in values if m.startswith('auc_class_'))
            confusion = np.zeros((classes, classes), dtype=np.int64)
            for m, v in values.items():
                if m.startswith('confusion_'):
                    i, j = m.split('_')[1:]
                    confusion[int(i) - 1, int(j) - 1] = int(v)
            reports[slice_name] = cls(
                weighted_auc=values['weighted_auc'], f1=values['f1'], accuracy=values['accuracy'],
                per_class_auc={c: values[f'auc_class_{c}'] for c in range(1, classes + 1)},
                confusion=confusion, ci=intervals, empty=int(values['support']) == 0,
            )
        overall = reports.pop(OVERALL)
        overall.slices = reports
        return overall

    def to_text(self, title: str = "Overall") -> str:
        lines = [f"== {title} ({self.support} records) =="]
        if self.empty:
            lines.append("empty slice")
            return "\n".join(lines)
        for label, metric in (("Weighted AUC", 'weighted_auc'), ("F1", 'f1'), ("Accuracy", 'accuracy')):
            line = f"{label:<13}{_format_value(getattr(self, metric))}"
            if metric in self.ci:
                low, high = self.ci[metric]
                line += f"  (CI {_format_value(low)} - {_format_value(high)})"
            lines.append(line)
        per_class = ", ".join(f"{c}: {_format_value(v)}" for c, v in self.per_class_auc.items())
        lines.append(f"Per-class AUC  {per_class}")
        lines.append("Confusion matrix (row %, true class by row):")
        lines.append(format_confusion(self.confusion))
        text = "\n".join(lines)
        for name, report in self.slices.items():
            text += "\n\n" + report.to_text(name)
        return text


def _format_value(value: float) -> str:
    return "undefined" if value is None or np.isnan(value) else f"{value:.4f}"


def format_confusion(confusion: np.ndarray) -> str:
    """Row-normalised percentages, one line per true class."""
    percent = row_normalized(confusion)
    classes = percent.shape[0]
    header = "true\\pred " + " ".join(f"{j:>6d}" for j in range(1, classes + 1))
    lines = [header]
    for i in range(classes):
        lines.append(f"{i + 1:>9d} " + " ".join(f"{v:6.1f}" for v in percent[i]))
    return "\n".join(lines)


def evaluate(probabilities: np.ndarray, labels: np.ndarray, config: Optional[EvaluationConfig] = None,
             seed: Optional[int] = None) -> MetricsReport:
    """
    Metrics of one set of predictions with bootstrap intervals.

    Args:
        probabilities: [records x classes]
        labels: True classes 1..K
        config: Evaluation options (resamples=0 skips the intervals)
        seed: Bootstrap seed (defaults to config.seed)

    Returns:
        MetricsReport without slices
    """
    config = config or EvaluationConfig()
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = probabilities.shape[1]
    if len(labels) == 0:
        return MetricsReport.empty_report(classes)

    predictions = np.argmax(probabilities, axis=1) + 1
    try:
        weighted_auc = auc_weighted_ovr(probabilities, labels)
    except MetricError as e:
        logger.warning(f"Weighted AUC undefined: {e}")
        weighted_auc = float('nan')

    def f1(p, y):
        return f1_weighted(p, y, average=config.f1_average, classes=classes)

    report = MetricsReport(
        weighted_auc=weighted_auc,
        f1=f1(predictions, labels),
        accuracy=accuracy(predictions, labels),
        per_class_auc=per_class_auc(probabilities, labels),
        confusion=confusion_matrix(predictions, labels, classes),
    )
    if config.resamples:
        seed = config.seed if seed is None else seed
        level = config.confidence_level
        for metric, function, data in (('weighted_auc', auc_weighted_ovr, (probabilities, labels)),
                                       ('f1', f1, (predictions, labels)),
                                       ('accuracy', accuracy, (predictions, labels))):
            if np.isnan(getattr(report, metric)):
                continue
            try:
                report.ci[metric] = bootstrap_ci(function, data, config.resamples, level,
                                                 derive_seed(seed, "bootstrap", metric))
            except MetricError as e:
                logger.warning(f"No {metric} interval: {e}")
    return report


def slice_values(metadata: pd.DataFrame, key: str, period_cut: str) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Slice label of every record and the full list of labels for a key."""
    if key == "agency":
        return metadata['agency'].to_numpy().astype(str), AGENCIES
    if key == "lag_bucket":
        return np.array([lag_bucket(int(v)) for v in metadata['lag_months']]), LAG_BUCKETS
    if key == "period":
        return np.array([period_bucket(str(v), period_cut) for v in metadata['time_index']]), PERIODS
    raise ValueError(f"Unknown slice key '{key}'. Use one of: {SLICE_KEYS}")


def slice_metrics(probabilities: np.ndarray, labels: np.ndarray, metadata: pd.DataFrame,
                  keys: Iterable[str], config: Optional[EvaluationConfig] = None) -> MetricsReport:
    """
    Overall report plus one nested report per slice value ('agency=MR', 'lag_bucket=short', ...).

    Empty slices are kept and marked empty.
    """
    config = config or EvaluationConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if len(metadata) != len(labels):
        raise ValueError(f"metadata has {len(metadata)} rows for {len(labels)} predictions")
    report = evaluate(probabilities, labels, config)
    for key in keys:
        values, names = slice_values(metadata, key, config.period_cut)
        for name in names:
            slice_name = f"{key}={name}"
            rows = np.flatnonzero(values == name)
            if len(rows) == 0:
                logger.warning(f"Slice {slice_name} is empty")
                report.slices[slice_name] = MetricsReport.empty_report(probabilities.shape[1])
                continue
            report.slices[slice_name] = evaluate(probabilities[rows], labels[rows], config,
                                                 seed=derive_seed(config.seed, slice_name))
    return report


def resolve_channels(subset: Iterable[str]) -> List[str]:
    """Expand 'numeric' and 'all' and return the channels in canonical order."""
    selected = set()
    for name in subset:
        name = name.strip()
        if name in CHANNEL_GROUPS:
            selected.update(CHANNEL_GROUPS[name])
        elif name in ALL_CHANNELS:
            selected.add(name)
        else:
            raise ValueError(f"Unknown channel '{name}'. Use {ALL_CHANNELS} or {tuple(CHANNEL_GROUPS)}")
    if not selected:
        raise ValueError("channel subset must not be empty")
    return [c for c in ALL_CHANNELS if c in selected]


@dataclass
class PreparedSplits:
    """Scaled, tokenized train/validation/test datasets and the fitted preprocessing."""

    train: Dataset
    validation: Dataset
    test: Dataset
    vocabulary: Vocabulary
    scaler: ChannelScaler

    @property
    def max_text_length(self) -> int:
        return self.train.tokens.shape[1]


def prepare_splits(dataset: Dataset, split: DatasetSplit, max_text_length: int,
                   vocab_max_size: int) -> PreparedSplits:
    """
    Fit imputation, scaling and the vocabulary on the training records and apply them to every split.
    """
    train = dataset.subset(split.train)
    scaler = ChannelScaler().fit(train)
    vocabulary = fit_vocabulary(train.texts, vocab_max_size)

    def encode(part: Dataset) -> Dataset:
        return scaler.transform(part).with_tokens(encode_corpus(vocabulary, part.texts, max_text_length))

    logger.info(f"Prepared splits {split.sizes()} with a {len(vocabulary)}-token vocabulary")
    return PreparedSplits(
        train=encode(train),
        validation=encode(dataset.subset(split.validation)),
        test=encode(dataset.subset(split.test)),
        vocabulary=vocabulary,
        scaler=scaler,
    )


@dataclass
class FitResult:
    config: FusionConfig
    model: MultimodalModel
    trace: TrainTrace
    report: MetricsReport
    probabilities: np.ndarray


def fit_and_evaluate(config: FusionConfig, train_config: TrainConfig, prepared: PreparedSplits,
                     evaluation: Optional[EvaluationConfig] = None) -> FitResult:
    """
    Build, train and evaluate one architecture on prepared splits.

    The text stream is sized to the fitted vocabulary and encoded length.
    """
    evaluation = evaluation or EvaluationConfig()
    config = config.model_copy(update={'vocab_size': len(prepared.vocabulary),
                                       'max_text_length': prepared.max_text_length})
    model = build_model(config)
    model, trace = Trainer(train_config).train(model, prepared.train, prepared.validation)
    probabilities = predict_probabilities(model, prepared.test)
    report = slice_metrics(probabilities, prepared.test.labels, prepared.test.metadata,
                           evaluation.slices, evaluation)
    logger.info(f"Group {config.group} {config.base} on {config.channels}: "
                f"weighted AUC {_format_value(report.weighted_auc)}, F1 {_format_value(report.f1)}")
    return FitResult(config=config, model=model, trace=trace, report=report, probabilities=probabilities)


def ablation_run(config: FusionConfig, prepared: PreparedSplits, channel_subset: Iterable[str],
                 train_config: TrainConfig, evaluation: Optional[EvaluationConfig] = None) -> MetricsReport:
    """
    Retrain the architecture from scratch on a channel subset and evaluate it on the shared test split.

    Streams of unselected channels are not built.

    Raises:
        ValueError: If the subset is empty or names an unknown channel
    """
    channels = resolve_channels(channel_subset)
    logger.info(f"Ablation run on channels {channels}")
    return fit_and_evaluate(config.model_copy(update={'channels': channels}), train_config,
                            prepared, evaluation).report
