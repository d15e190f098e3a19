import argparse
import sys
from pathlib import Path
from typing import List, Optional

from src.adguardian import logger
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.constants import PRESETS_DIR
from src.adguardian.pipeline.ablation_pipeline import AblationPipeline
from src.adguardian.pipeline.baseline_pipeline import BaselinePipeline
from src.adguardian.pipeline.evaluation_pipeline import EvaluationPipeline, ReportPipeline
from src.adguardian.pipeline.finetuning_pipeline import FinetuningPipeline
from src.adguardian.pipeline.pretraining_pipeline import AsrPretrainingPipeline, SslPretrainingPipeline
from src.adguardian.pipeline.split_pipeline import SplitPipeline
from src.adguardian.pipeline.synth_data_pipeline import SynthDataPipeline
from src.adguardian.utils.exceptions import AdGuardianError

STAGES = {
    "synth-data": ("Synthetic Data", SynthDataPipeline, "initiate_synth_data"),
    "split": ("Split", SplitPipeline, "initiate_split"),
    "pretrain-asr": ("ASR Pre-training", AsrPretrainingPipeline, "initiate_asr_pretraining"),
    "pretrain-ssl": ("SSL Pre-training", SslPretrainingPipeline, "initiate_ssl_pretraining"),
    "finetune": ("AD Fine-tuning", FinetuningPipeline, "initiate_finetuning"),
    "baseline": ("Baseline", BaselinePipeline, "initiate_baseline"),
    "evaluate": ("Model Evaluation", EvaluationPipeline, "initiate_model_evaluation"),
    "ablate": ("Ablation", AblationPipeline, "initiate_ablation"),
    "report": ("Report", ReportPipeline, "initiate_report"),
}


def resolve_config(value: Optional[str]) -> Optional[Path]:
    """A path, or the name of a shipped preset (`wav2vec-3-2`)."""
    if value is None:
        return None
    path = Path(value)
    if path.exists():
        return path
    preset = PRESETS_DIR / f"{value.removesuffix('.yaml')}.yaml"
    if preset.exists():
        return preset
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adguardian", description="AD/MCI/HC speech classification experiments")
    parser.add_argument("subcommand", choices=list(STAGES))
    parser.add_argument("experiment_dir", nargs="?", default=None,
                        help="report only: the experiment run directory, e.g. runs/exp1")
    parser.add_argument("--config", default=None, help="experiment YAML or preset name, merged over params.yaml")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, repeatable")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--force", action="store_true", help="overwrite a finished run with the same config digest")
    parser.add_argument("--out-dir", default=None, help="runs root (default from config/config.yaml)")
    return parser


def run_stage(name: str, pipeline_cls: type, method: str, config: ConfigurationManager, force: bool) -> int:
    """
    Execute a pipeline stage with standardized logging and error handling.

    Returns the process exit status: 0 ok, 2 config error, 3 missing upstream artifact, 4 runtime failure.
    """
    logger.info(f">>>>>> stage {name} started <<<<<<")
    try:
        pipeline = pipeline_cls(config=config, force=force)
        getattr(pipeline, method)()
        logger.info(f">>>>>> stage {name} completed <<<<<<\n\nx==========x")
        return 0
    except AdGuardianError as e:
        logger.exception(f"Failed {name}: {e}")
        return e.exit_code
    except Exception:
        logger.exception(f"Failed {name}.")
        return 4


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out_dir
    overrides = list(args.overrides)
    if args.subcommand == "report" and args.experiment_dir:
        experiment_dir = Path(args.experiment_dir)
        out_dir = out_dir or str(experiment_dir.parent)
        overrides.append(f"experiment.name={experiment_dir.name}")
    try:
        config = ConfigurationManager(experiment_filepath=resolve_config(args.config), overrides=overrides,
                                      seed=args.seed, out_dir=out_dir)
    except AdGuardianError as e:
        logger.error(f"Configuration rejected: {e}")
        return e.exit_code
    name, cls, method = STAGES[args.subcommand]
    return run_stage(name, cls, method, config, args.force)


if __name__ == "__main__":
    sys.exit(main())
