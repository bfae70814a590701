"""
Artifact persistence for the credit fusion framework.
Writes and reads back the files of one experiment directory: manifest,
parameter archive, training trace, metrics and analysis tables.
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config import SOFTWARE_VERSION
from dataset import ChannelScaler
from evaluation import MetricsReport
from fusion_models import FusionConfig, MultimodalModel, build_model
from text_preprocessing import Vocabulary
from trainer import TrainTrace
from utils import stable_hash, write_csv

MANIFEST_FILE = "manifest.json"
PARAMS_FILE = "params.npz"
TRACE_FILE = "trace.csv"
METRICS_CSV_FILE = "metrics.csv"
METRICS_TEXT_FILE = "metrics.txt"
LEADERBOARD_FILE = "leaderboard.csv"
ABLATION_FILE = "ablation.csv"
NGRAMS_FILE = "ngrams.csv"
WORD_COUNTS_FILE = "word_counts.csv"

# parameter archive layout: "param.<layer path>", "scaler.<channel>.<stat>", "meta.<key>"
ARCHIVE_FORMAT_VERSION = 1


class ArtifactWriter:
    """Writes the artifacts of one experiment directory."""

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        self.logger = logging.getLogger("credit_fusion.artifact_writer")
        self.written: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def _record(self, name: str) -> None:
        if name not in self.written:
            self.written.append(name)
        self.logger.info(f"Wrote {self.path(name)}")

    def prepare(self) -> bool:
        try:
            os.makedirs(self.run_dir, exist_ok=True)
            return True
        except OSError as e:
            self.logger.error(f"Cannot create output directory {self.run_dir}: {e}")
            return False

    def write_frame(self, name: str, frame: pd.DataFrame) -> bool:
        """
        Write a table as CSV.

        Args:
            name: File name inside the run directory
            frame: Table to write

        Returns:
            True if written, False otherwise
        """
        try:
            write_csv(frame, self.path(name))
            self._record(name)
            return True
        except Exception as e:
            self.logger.error(f"Failed to write {name}: {e}")
            return False

    def write_trace(self, trace: TrainTrace) -> bool:
        return self.write_frame(TRACE_FILE, trace.to_frame())

    def write_metrics(self, report: MetricsReport) -> bool:
        """Write the flat metrics CSV and the text rendering of a report."""
        if not self.write_frame(METRICS_CSV_FILE, report.to_frame()):
            return False
        try:
            with open(self.path(METRICS_TEXT_FILE), 'w', encoding='utf-8', newline='\n') as f:
                f.write(report.to_text() + "\n")
            self._record(METRICS_TEXT_FILE)
            return True
        except OSError as e:
            self.logger.error(f"Failed to write {METRICS_TEXT_FILE}: {e}")
            return False

    def write_model(self, model: MultimodalModel, vocabulary: Vocabulary, scaler: ChannelScaler) -> bool:
        """
        Write the parameter archive.

        Keys: 'param.<layer path>' for every parameter, 'scaler.<channel>.<stat>'
        for the fitted imputation and scaling, and 'meta.format_version',
        'meta.fusion_config', 'meta.vocabulary' (JSON strings).

        Returns:
            True if written, False otherwise
        """
        try:
            arrays: Dict[str, np.ndarray] = {
                f"param.{name}": p.data for name, p in model.named_parameters().items()
            }
            arrays.update(scaler.to_arrays())
            arrays['meta.format_version'] = np.array(ARCHIVE_FORMAT_VERSION)
            arrays['meta.fusion_config'] = np.array(model.config.model_dump_json())
            arrays['meta.vocabulary'] = np.array(json.dumps(vocabulary.to_dict()))
            with open(self.path(PARAMS_FILE), 'wb') as f:
                np.savez(f, **arrays)
            self._record(PARAMS_FILE)
            return True
        except Exception as e:
            self.logger.error(f"Failed to write model archive: {e}")
            return False

    def write_manifest(self, spec: Dict[str, Any], seed: int, extra: Optional[Dict[str, Any]] = None) -> bool:
        """Record the spec, its hash, the seed, the software version and the files written."""
        manifest = {
            'software_version': SOFTWARE_VERSION,
            'spec_hash': stable_hash(spec),
            'seed': seed,
            'spec': spec,
            'files': sorted(self.written),
            'archive_format_version': ARCHIVE_FORMAT_VERSION,
        }
        manifest.update(extra or {})
        try:
            with open(self.path(MANIFEST_FILE), 'w', encoding='utf-8', newline='\n') as f:
                json.dump(manifest, f, indent=2, sort_keys=True, default=str)
                f.write("\n")
            self._record(MANIFEST_FILE)
            return True
        except Exception as e:
            self.logger.error(f"Failed to write manifest: {e}")
            return False

    def verify(self, names: Optional[List[str]] = None) -> bool:
        """
        Parse every written artifact back.

        Returns:
            True if every file exists and parses
        """
        failed = []
        for name in names or self.written:
            try:
                read_artifact(self.run_dir, name)
            except Exception as e:
                self.logger.error(f"Artifact {name} does not parse back: {e}")
                failed.append(name)
        return not failed


def _require(run_dir: str, name: str) -> str:
    path = os.path.join(run_dir, name)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Artifact not found: {path}")
    return path


def read_manifest(run_dir: str) -> Dict[str, Any]:
    with open(_require(run_dir, MANIFEST_FILE), 'r', encoding='utf-8') as f:
        return json.load(f)


def read_metrics(run_dir: str) -> MetricsReport:
    return MetricsReport.from_frame(pd.read_csv(_require(run_dir, METRICS_CSV_FILE)))


def read_trace(run_dir: str) -> TrainTrace:
    return TrainTrace.from_frame(pd.read_csv(_require(run_dir, TRACE_FILE)))


def read_table(run_dir: str, name: str) -> pd.DataFrame:
    return pd.read_csv(_require(run_dir, name), keep_default_na=False, na_values=[''])


def load_model(run_dir: str) -> Tuple[MultimodalModel, Vocabulary, ChannelScaler]:
    """
    Rebuild a trained model with its vocabulary and scaler from a parameter archive.

    Raises:
        ValueError: On an unknown archive version or a parameter mismatch
    """
    with np.load(_require(run_dir, PARAMS_FILE), allow_pickle=False) as archive:
        version = int(archive['meta.format_version'])
        if version != ARCHIVE_FORMAT_VERSION:
            raise ValueError(f"Unsupported parameter archive version {version}")
        config = FusionConfig.model_validate_json(str(archive['meta.fusion_config']))
        vocabulary = Vocabulary.from_dict(json.loads(str(archive['meta.vocabulary'])))
        scaler = ChannelScaler.from_arrays(archive)
        model = build_model(config)
        params = model.named_parameters()
        stored = {key[len("param."):] for key in archive.files if key.startswith("param.")}
        if stored != set(params):
            raise ValueError(f"Archive parameters do not match the architecture: "
                             f"{sorted(stored ^ set(params))[:5]}")
        for name, p in params.items():
            values = archive[f"param.{name}"]
            if values.shape != p.shape:
                raise ValueError(f"Parameter '{name}' has shape {values.shape}, architecture expects {p.shape}")
            p.data[...] = values
    return model, vocabulary, scaler


def read_artifact(run_dir: str, name: str):
    """Parse one artifact by file name."""
    if name == MANIFEST_FILE:
        return read_manifest(run_dir)
    if name == PARAMS_FILE:
        return load_model(run_dir)
    if name == METRICS_CSV_FILE:
        return read_metrics(run_dir)
    if name == TRACE_FILE:
        return read_trace(run_dir)
    if name == METRICS_TEXT_FILE:
        with open(_require(run_dir, name), 'r', encoding='utf-8') as f:
            return f.read()
    return read_table(run_dir, name)
