"""
Command-line entry point for the credit fusion framework.
Runs experiments, sweeps and ablations, renders reports, writes synthetic
channel files and runs the gradient check suite.
"""

import argparse
import logging
import os
import sys

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from config import settings
from utils import setup_logging
from fusion_models import FusionConfig
from trainer import TrainConfig

EXPERIMENT_VERBS = ("run", "sweep", "ablate")
# run seed has its own flag; initialization seeds derive from it
SKIPPED_FLAGS = ("seed", "init_seed")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    """One override flag per FusionConfig and TrainConfig field."""
    for model in (FusionConfig, TrainConfig):
        group = parser.add_argument_group(f"{model.__name__} overrides")
        for name, info in model.model_fields.items():
            if name in SKIPPED_FLAGS:
                continue
            group.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None,
                               help=f"{info.description or name} (default {info.get_default(call_default_factory=True)})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multimodal credit rating fusion experiments")
    parser.add_argument("--log-level", default=settings.log_level, help="Logging level")
    verbs = parser.add_subparsers(dest="verb", required=True)

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", help="KEY=value experiment file")
    experiment.add_argument("--preset", help="Hyperparameter preset from model_config.json (full, desk)")
    experiment.add_argument("--seed", type=int, help="Run seed")
    experiment.add_argument("--out", help="Output directory")
    experiment.add_argument("--data-dir", dest="data_dir", help="Directory with the channel files")
    experiment.add_argument("--synthetic-n", dest="synthetic_n", type=int, help="Use n synthetic records")
    experiment.add_argument("--synthetic-signal", dest="synthetic_signal",
                            choices=["text_only", "numeric_only", "joint"], help="Planted synthetic signal")
    experiment.add_argument("--split", choices=["random", "oot", "oou"], help="Split mode")
    experiment.add_argument("--resamples", type=int, help="Bootstrap resamples (0 disables intervals)")
    experiment.add_argument("--slices", help="Comma-separated slice keys: agency, lag_bucket, period")
    experiment.add_argument("--period-cut", dest="period_cut", help="YYYY-MM cut of the period slice")
    experiment.add_argument("--ablation", help="Channel subsets, e.g. 'text;market;bond+ratios'")
    _add_model_flags(experiment)

    verbs.add_parser("run", parents=[experiment], help="Train and evaluate one architecture")
    verbs.add_parser("sweep", parents=[experiment], help="Train all 16 (group, base) pairs")
    verbs.add_parser("ablate", parents=[experiment], help="Retrain on channel subsets")

    report = verbs.add_parser("report", help="Summarize a run directory")
    report.add_argument("run_dir", help="Artifact directory")

    synth = verbs.add_parser("synth", help="Write synthetic channel files")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.add_argument("--n", type=int, default=500, help="Number of records")
    synth.add_argument("--signal", choices=["text_only", "numeric_only", "joint"], default="joint")
    synth.add_argument("--classes", type=int, default=8, help="Number of merged classes used")
    synth.add_argument("--seed", type=int, default=settings.default_seed)
    synth.add_argument("--missing-fraction", type=float, default=0.0,
                       help="Fraction of rows dropped from each non-label file")

    gradcheck = verbs.add_parser("gradcheck", help="Run the gradient check suite")
    gradcheck.add_argument("--instances", type=int, default=100, help="Random layer instances")
    gradcheck.add_argument("--samples", type=int, default=20, help="Parameters sampled per architecture")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--no-models", action="store_true", help="Skip the full architectures")
    return parser


def _experiment_overrides(args: argparse.Namespace) -> dict:
    skipped = {"verb", "config", "log_level"}
    return {key: value for key, value in vars(args).items() if key not in skipped and value is not None}


def run_verb(args: argparse.Namespace) -> bool:
    """
    Dispatch one CLI verb.

    Returns:
        True if successful, False otherwise
    """
    logger = logging.getLogger("credit_fusion")

    if args.verb in EXPERIMENT_VERBS:
        from experiment import CreditRatingExperiment, load_spec

        try:
            spec = load_spec(args.config, _experiment_overrides(args))
        except Exception as e:
            logger.error(f"Invalid experiment specification: {e}")
            return False
        experiment = CreditRatingExperiment(spec)
        if args.verb == "run":
            return experiment.run_experiment()
        if args.verb == "sweep":
            return experiment.run_sweep()
        return experiment.run_ablation()

    if args.verb == "report":
        from experiment import report

        try:
            print(report(args.run_dir))
            return True
        except Exception as e:
            logger.error(f"Cannot render report: {e}")
            return False

    if args.verb == "synth":
        from synthetic import SyntheticSpec, write_synthetic_files

        try:
            spec = SyntheticSpec(n=args.n, signal=args.signal, classes=args.classes, seed=args.seed)
            write_synthetic_files(spec, args.out, missing_fraction=args.missing_fraction)
            return True
        except Exception as e:
            logger.error(f"Synthetic data generation failed: {e}")
            return False

    from gradcheck import DEFAULT_TOLERANCE, run_gradcheck_suite

    results = run_gradcheck_suite(instances=args.instances, seed=args.seed, include_models=not args.no_models,
                                  model_samples=args.samples)
    for name, result in results.items():
        status = "ok" if result.passed(DEFAULT_TOLERANCE) else "FAILED"
        print(f"{name:<40} {result.max_relative_error:.3e}  {status}")
    return all(result.passed(DEFAULT_TOLERANCE) for result in results.values())


def main():
    """Main entry point."""
    args = build_parser().parse_args()
    setup_logging(args.log_level)

    try:
        success = run_verb(args)
        sys.exit(0 if success else 1)
    except KeyboardInterrupt:
        logging.getLogger("credit_fusion").info("Interrupted by user")
        sys.exit(1)
    except Exception as e:
        logging.getLogger("credit_fusion").error(f"Command failed: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
