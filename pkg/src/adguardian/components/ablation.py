from dataclasses import replace
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from src.adguardian import logger
from src.adguardian.components.classifier_trainer import ClassifierTrainer
from src.adguardian.components.model_evaluation import ModelEvaluation, render_confusion, render_loss_curves
from src.adguardian.constants import CLASS_INDEX
from src.adguardian.entity.artifact_entity import EvalReport
from src.adguardian.entity.config_entity import AblationConfig, EvaluationConfig
from src.adguardian.utils.common import save_json

CONVERGENCE_EPOCH = 5
LIST_COLUMNS = ("mean_curves", "seeds", "best_epochs", "test_confusions", "test_confusion_summed",
                "ad_as_hc_per_seed")


class AblationRunner:
    """
    Fine-tunes the same architecture from scratch and from each pre-trained checkpoint,
    once per seed, and compares convergence and test confusions across conditions.
    """

    def __init__(self, config: AblationConfig):
        self.cfg = config

    def run_one(self, condition: str, seed: int) -> dict:
        run_dir = Path(self.cfg.run_dir) / condition / str(seed)
        ft = replace(self.cfg.finetune, checkpoint=self.cfg.checkpoints.get(condition), run_dir=run_dir, seed=seed)
        logger.info(f"Ablation {condition} seed {seed}: checkpoint={ft.checkpoint or 'none (scratch)'}")
        result = ClassifierTrainer(ft).train()

        base = self.cfg.evaluation
        evaluation = EvaluationConfig(
            model_dir=run_dir,
            split_dir=ft.split_dir,
            run_dir=run_dir / "evaluate",
            aggregation=base.aggregation if base else ft.aggregation,
            segmentation=base.segmentation if base else ft.dev_segmentation,
            track="long",
            short_len=base.short_len if base else 6.0,
            frontend=ft.frontend,
            model_tag=condition,
        )
        report = ModelEvaluation(evaluation).run()
        return {"curves": result.curves, "best_epoch": result.best_epoch,
                "dev_accuracy": result.best_dev_accuracy, "test": report}

    def summarize(self, condition: str, runs: List[dict]) -> dict:
        curves = pd.concat([r["curves"] for r in runs]).groupby("epoch", as_index=False).mean()
        at_epoch = curves.loc[curves["epoch"] == CONVERGENCE_EPOCH, "train_loss"]
        per_seed = [np.asarray(r["test"].confusion, dtype=int) for r in runs]
        summed = sum(per_seed)
        return {
            "condition": condition,
            "seeds": list(self.cfg.seeds),
            "train_loss_at_epoch_5": float(at_epoch.iloc[0]) if len(at_epoch) else None,
            "mean_dev_accuracy": float(np.mean([r["dev_accuracy"] for r in runs])),
            "mean_test_accuracy": float(np.mean([r["test"].accuracy for r in runs])),
            "mean_test_f1": float(np.mean([r["test"].f1 for r in runs])),
            "best_epochs": [int(r["best_epoch"]) for r in runs],
            "test_confusions": [cm.tolist() for cm in per_seed],
            "test_confusion_summed": summed.tolist(),
            "ad_as_hc_per_seed": [int(cm[CLASS_INDEX["AD"], CLASS_INDEX["HC"]]) for cm in per_seed],
            "ad_as_hc_summed": int(summed[CLASS_INDEX["AD"], CLASS_INDEX["HC"]]),
            "mean_curves": curves,
        }

    def run(self) -> Dict[str, dict]:
        out_dir = Path(self.cfg.run_dir)
        summaries: Dict[str, dict] = {}
        for condition in self.cfg.conditions:
            runs = [self.run_one(condition, seed) for seed in self.cfg.seeds]
            summaries[condition] = self.summarize(condition, runs)
            for seed, cm in zip(self.cfg.seeds, summaries[condition]["test_confusions"]):
                render_confusion(EvalReport(0.0, 0.0, 0.0, 0.0, np.asarray(cm), split_tag=condition), out_dir,
                                 stem=f"confusion_{condition}_seed{seed}", title=f"{condition}, seed {seed}")
            summed = EvalReport(0.0, 0.0, 0.0, 0.0, np.asarray(summaries[condition]["test_confusion_summed"]),
                                split_tag=condition)
            render_confusion(summed, out_dir, stem=f"confusion_{condition}_summed",
                             title=f"{condition}, summed over {len(self.cfg.seeds)} seeds")

        render_loss_curves({c: s["mean_curves"] for c, s in summaries.items()}, out_dir / "loss_curves.png")
        table = pd.DataFrame([{k: v for k, v in s.items() if k not in LIST_COLUMNS} for s in summaries.values()])
        table.to_csv(out_dir / "ablation_report.csv", index=False)
        save_json(out_dir / "ablation_report.json",
                  {c: {k: v for k, v in s.items() if k != "mean_curves"} for c, s in summaries.items()})
        logger.info(f"Ablation report written to {out_dir}")
        return summaries
