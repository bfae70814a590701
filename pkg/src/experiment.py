"""
Experiment orchestration for the credit fusion framework.
Loads data, splits it, trains and evaluates fusion architectures, runs
ablations and sweeps, and writes the artifacts of each run.
"""

import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from artifact_writer import (
    ABLATION_FILE, LEADERBOARD_FILE, METRICS_CSV_FILE, NGRAMS_FILE, TRACE_FILE, WORD_COUNTS_FILE,
    ArtifactWriter, read_manifest, read_metrics, read_table,
)
from channel_loader import ChannelFiles, load_channels
from config import get_preset, settings
from dataset import ALL_CHANNELS, Dataset
from evaluation import (
    EvaluationConfig, PreparedSplits, ablation_run, fit_and_evaluate, prepare_splits, resolve_channels,
)
from fusion_models import BASES, GROUPS, FusionConfig
from splits import make_split
from synthetic import SyntheticSpec, generate_synthetic
from text_analytics import differential_frame, word_count_frame
from trainer import TrainConfig
from utils import derive_seed

logger = logging.getLogger("credit_fusion.experiment")

SPEC_SECTIONS = ("fusion", "train", "evaluation")
TOP_LEVEL_KEYS = ("data_dir", "split", "out", "seed", "ablation", "vocab_max_size", "analytics")
SYNTHETIC_PREFIX = "synthetic_"


class ExperimentSpec(BaseModel):
    """Everything one run needs: data source, architecture, training, evaluation and output."""

    model_config = ConfigDict(extra='forbid')

    data_dir: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    split: Literal["random", "oot", "oou"] = "random"
    ablation: List[List[str]] = Field(default_factory=list)
    analytics: bool = True
    vocab_max_size: int = Field(default_factory=lambda: settings.vocab_max_size, ge=5)
    out: str = Field(default_factory=lambda: settings.output_dir)
    seed: int = Field(default_factory=lambda: settings.default_seed)

    @field_validator('ablation')
    @classmethod
    def validate_ablation(cls, v):
        return [resolve_channels(subset) for subset in v]

    @model_validator(mode='after')
    def check_data_source(self):
        if (self.data_dir is None) == (self.synthetic is None):
            raise ValueError("exactly one data source is required: data_dir or synthetic")
        return self

    def seeded(self) -> "ExperimentSpec":
        """Copy whose split, initialization, shuffling and bootstrap seeds derive from the run seed."""
        return self.model_copy(update={
            'fusion': self.fusion.model_copy(update={'init_seed': derive_seed(self.seed, "init")}),
            'train': self.train.model_copy(update={'seed': derive_seed(self.seed, "train")}),
            'evaluation': self.evaluation.model_copy(update={'seed': derive_seed(self.seed, "bootstrap")}),
        })


def _parse_value(text: Any) -> Any:
    if not isinstance(text, str):
        return text
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def parse_subsets(text: str) -> List[List[str]]:
    """'text;market;bond+ratios' -> [['text'], ['market'], ['bond', 'ratios']]."""
    return [[c for c in part.split('+') if c.strip()] for part in text.split(';') if part.strip()]


def spec_from_mapping(values: Dict[str, Any]) -> ExperimentSpec:
    """
    Build an ExperimentSpec from flat keys.

    FusionConfig, TrainConfig and EvaluationConfig fields are given by name,
    SyntheticSpec fields with a 'synthetic_' prefix; 'preset' names a
    model_config.json preset applied beneath the other values. List fields
    (channels, slices) are comma separated, ablation subsets are separated
    by ';' with '+' between channels.

    Raises:
        pydantic.ValidationError: On an invalid or unknown field
    """
    values = {k.lower(): v for k, v in values.items() if v is not None}
    preset = values.pop('preset', None)
    if preset is not None:
        overrides = get_preset(str(preset))
        overrides.pop('name', None)
        overrides.pop('description', None)
        values = {**{k.lower(): v for k, v in overrides.items()}, **values}

    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SPEC_SECTIONS}
    synthetic: Dict[str, Any] = {}
    top: Dict[str, Any] = {}
    models = {'fusion': FusionConfig, 'train': TrainConfig, 'evaluation': EvaluationConfig}
    for key, raw in values.items():
        value = _parse_value(raw)
        if key in ('channels', 'slices') and isinstance(value, str):
            value = [c.strip() for c in value.split(',') if c.strip()]
        if key == 'ablation' and isinstance(value, str):
            value = parse_subsets(value)
        if key.startswith(SYNTHETIC_PREFIX):
            synthetic[key[len(SYNTHETIC_PREFIX):]] = value
        elif key in TOP_LEVEL_KEYS:
            top[key] = value
        else:
            owner = next((name for name, model in models.items() if key in model.model_fields), None)
            if owner is None:
                raise ValueError(f"Unknown experiment setting '{key}'")
            sections[owner][key] = value
    for key in ('data_dir', 'out'):
        if key in top:
            top[key] = str(top[key])
    if synthetic:
        top['synthetic'] = synthetic
    return ExperimentSpec(**top, **{name: fields for name, fields in sections.items()})


def load_spec(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentSpec:
    """
    Read a KEY=value experiment file and apply command-line overrides on top.

    Raises:
        FileNotFoundError: If the config file does not exist
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        if not os.path.isfile(config_path):
            raise FileNotFoundError(f"Experiment config not found: {config_path}")
        values.update(dotenv_values(config_path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return spec_from_mapping(values)


def _report_frame(report, **columns) -> pd.DataFrame:
    frame = report.to_frame()
    for position, (name, value) in enumerate(columns.items()):
        frame.insert(position, name, value)
    return frame


class CreditRatingExperiment:
    """Runs one experiment spec end to end."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec.seeded()
        self.raw_spec = spec
        self.logger = logging.getLogger("credit_fusion.experiment")
        self.writer = ArtifactWriter(spec.out)

    def load_dataset(self) -> Dataset:
        if self.spec.synthetic is not None:
            self.logger.info(f"Generating synthetic data: {self.spec.synthetic.model_dump()}")
            return generate_synthetic(self.spec.synthetic)
        files = ChannelFiles.from_directory(self.spec.data_dir)
        dataset, report = load_channels(files)
        self.logger.info(f"Loaded {report.joined} records from {self.spec.data_dir} "
                         f"({report.dropped} dropped by the join)")
        return dataset

    def prepare(self, dataset: Dataset) -> PreparedSplits:
        if len(dataset) == 0:
            raise ValueError("no records to train on")
        split = make_split(dataset, self.spec.split, self.spec.seed)
        return prepare_splits(dataset, split, self.spec.fusion.max_text_length, self.spec.vocab_max_size)

    def _ablation_frame(self, prepared: PreparedSplits, subsets: List[List[str]]) -> pd.DataFrame:
        frames = []
        for subset in subsets:
            report = ablation_run(self.spec.fusion, prepared, subset, self.spec.train, self.spec.evaluation)
            frames.append(_report_frame(report, channels="+".join(subset)))
        return pd.concat(frames, ignore_index=True)

    def _write_analytics(self, dataset: Dataset) -> bool:
        try:
            ngrams = differential_frame(dataset)
            counts = word_count_frame(dataset)
        except Exception as e:
            self.logger.error(f"Text analytics failed: {e}")
            return False
        return self.writer.write_frame(NGRAMS_FILE, ngrams) and self.writer.write_frame(WORD_COUNTS_FILE, counts)

    def _finish(self, **extra) -> bool:
        if not self.writer.write_manifest(self.raw_spec.model_dump(mode='json'), self.raw_spec.seed, extra):
            return False
        if not self.writer.verify():
            self.logger.error("Some artifacts could not be read back")
            return False
        self.logger.info(f"Artifacts written to {self.writer.run_dir}: {self.writer.written}")
        return True

    def run_experiment(self) -> bool:
        """
        Train and evaluate the configured architecture and write its artifacts.

        Returns:
            True if every artifact was written and parses back, False otherwise
        """
        try:
            if not self.writer.prepare():
                return False
            dataset = self.load_dataset()
            prepared = self.prepare(dataset)
            result = fit_and_evaluate(self.spec.fusion, self.spec.train, prepared, self.spec.evaluation)

            ok = (self.writer.write_model(result.model, prepared.vocabulary, prepared.scaler)
                  and self.writer.write_trace(result.trace)
                  and self.writer.write_metrics(result.report))
            if ok and self.spec.ablation:
                ok = self.writer.write_frame(ABLATION_FILE, self._ablation_frame(prepared, self.spec.ablation))
            if ok and self.spec.analytics:
                ok = self._write_analytics(dataset)
            if not ok:
                return False
            return self._finish(best_epoch=result.trace.best_epoch, parameters=result.model.parameter_count(),
                                split_sizes={'train': len(prepared.train), 'validation': len(prepared.validation),
                                             'test': len(prepared.test)})
        except Exception as e:
            self.logger.error(f"Experiment failed: {e}")
            return False

    def run_ablation(self) -> bool:
        """Retrain on each ablation subset (every single channel by default) and write the ablation table."""
        try:
            if not self.writer.prepare():
                return False
            subsets = self.spec.ablation or [[c] for c in ALL_CHANNELS]
            prepared = self.prepare(self.load_dataset())
            if not self.writer.write_frame(ABLATION_FILE, self._ablation_frame(prepared, subsets)):
                return False
            return self._finish()
        except Exception as e:
            self.logger.error(f"Ablation failed: {e}")
            return False

    def _sweep_row(self, prepared: PreparedSplits, group: int, base: str) -> Dict[str, Any]:
        fusion = self.spec.fusion.model_copy(update={
            'group': group, 'base': base, 'init_seed': derive_seed(self.raw_spec.seed, "sweep", group, base),
        })
        train = self.spec.train.model_copy(update={'seed': derive_seed(self.raw_spec.seed, "sweep-train", group, base)})
        row = {'group': group, 'base': base, 'channels': "+".join(fusion.channels)}
        try:
            report = fit_and_evaluate(fusion, train, prepared, self.spec.evaluation).report
            nan = (float('nan'), float('nan'))
            auc_ci, f1_ci = report.ci.get('weighted_auc', nan), report.ci.get('f1', nan)
            row.update(status="ok", weighted_auc=report.weighted_auc, auc_low=auc_ci[0], auc_high=auc_ci[1],
                       f1=report.f1, f1_low=f1_ci[0], f1_high=f1_ci[1], error="")
        except Exception as e:
            self.logger.error(f"Sweep row group {group} {base} failed: {e}")
            row.update(status="failed", error=str(e))
        return row

    def run_sweep(self) -> bool:
        """
        Train every (group, base) pair on one shared split and write the leaderboard.

        Failed rows are recorded and the sweep continues.
        """
        try:
            if not self.writer.prepare():
                return False
            prepared = self.prepare(self.load_dataset())
            rows = [self._sweep_row(prepared, group, base) for group in GROUPS for base in BASES]
            leaderboard = pd.DataFrame(rows, columns=[
                'group', 'base', 'channels', 'status', 'weighted_auc', 'auc_low', 'auc_high',
                'f1', 'f1_low', 'f1_high', 'error',
            ])
            leaderboard = leaderboard.sort_values(['weighted_auc', 'group', 'base'], ascending=[False, True, True],
                                                  na_position='last', kind='mergesort').reset_index(drop=True)
            leaderboard.insert(0, 'rank', np.arange(1, len(leaderboard) + 1))
            failed = int((leaderboard['status'] == "failed").sum())
            if failed:
                self.logger.warning(f"{failed} of {len(leaderboard)} sweep rows failed")
            if not self.writer.write_frame(LEADERBOARD_FILE, leaderboard):
                return False
            if self.spec.ablation and not self.writer.write_frame(
                    ABLATION_FILE, self._ablation_frame(prepared, self.spec.ablation)):
                return False
            return self._finish(failed_rows=failed)
        except Exception as e:
            self.logger.error(f"Sweep failed: {e}")
            return False


def run_experiment(spec: ExperimentSpec) -> bool:
    return CreditRatingExperiment(spec).run_experiment()


def run_sweep(spec: ExperimentSpec) -> bool:
    return CreditRatingExperiment(spec).run_sweep()


def _format_leaderboard(frame: pd.DataFrame) -> str:
    lines = [f"{'rank':>4} {'group':>5} {'base':<5} {'AUC':>7} {'AUC CI':>17} {'F1':>7} {'F1 CI':>17}  status"]
    for row in frame.itertuples(index=False):
        lines.append(f"{row.rank:>4} {row.group:>5} {row.base:<5} {row.weighted_auc:7.4f} "
                     f"[{row.auc_low:6.4f}, {row.auc_high:6.4f}] {row.f1:7.4f} "
                     f"[{row.f1_low:6.4f}, {row.f1_high:6.4f}]  {row.status}")
    return "\n".join(lines)


def _format_ablation(frame: pd.DataFrame) -> str:
    overall = frame[(frame['slice'] == 'all') & frame['metric'].isin(['weighted_auc', 'f1'])]
    table = overall.pivot(index='channels', columns='metric', values='value')
    lines = [f"{'channels':<40} {'AUC':>7} {'F1':>7}"]
    for channels, row in table.iterrows():
        lines.append(f"{channels:<40} {row['weighted_auc']:7.4f} {row['f1']:7.4f}")
    return "\n".join(lines)


def report(run_dir: str) -> str:
    """
    Render the artifacts of a run directory as text.

    Raises:
        FileNotFoundError: If the directory or its manifest is missing
    """
    if not os.path.isdir(run_dir):
        raise FileNotFoundError(f"Run directory not found: {run_dir}")
    manifest = read_manifest(run_dir)
    sections = [f"Run {run_dir} (seed {manifest['seed']}, software {manifest['software_version']}, "
                f"spec {manifest['spec_hash'][:12]})"]
    files = set(manifest.get('files', []))
    if LEADERBOARD_FILE in files:
        sections.append("Leaderboard\n" + _format_leaderboard(read_table(run_dir, LEADERBOARD_FILE)))
    if METRICS_CSV_FILE in files:
        sections.append(read_metrics(run_dir).to_text())
    if TRACE_FILE in files and manifest.get('best_epoch') is not None:
        sections.append(f"Best epoch: {manifest['best_epoch']}")
    if ABLATION_FILE in files:
        sections.append("Ablation\n" + _format_ablation(read_table(run_dir, ABLATION_FILE)))
    if WORD_COUNTS_FILE in files:
        counts = read_table(run_dir, WORD_COUNTS_FILE)
        sections.append("Mean words per class\n" + "\n".join(
            f"  class {int(r['class'])}: {r['mean_words']:.1f} ({int(r['documents'])} documents)"
            for _, r in counts.iterrows()))
    if NGRAMS_FILE in files:
        ngrams = read_table(run_dir, NGRAMS_FILE)
        for (n, group), rows in ngrams.groupby(['n', 'group']):
            sections.append(f"Top {n}-grams only frequent in the {group}-rating group\n" + "\n".join(
                f"  {r['ngram']} ({int(r['count'])})" for _, r in rows.head(10).iterrows()))
    return "\n\n".join(sections)
