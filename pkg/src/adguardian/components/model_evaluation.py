from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from src.adguardian import logger
from src.adguardian.components.checkpoint import CheckpointReader
from src.adguardian.components.classifier import AdClassifier, predict_sequences
from src.adguardian.components.data_ingestion import read_manifest
from src.adguardian.components.data_preprocessing import DataPreprocessor, short_track_pieces
from src.adguardian.constants import CLASS_NAMES
from src.adguardian.entity.artifact_entity import EvalReport, PredictionSet, SampleRecord
from src.adguardian.entity.config_entity import EvaluationConfig, ReportConfig
from src.adguardian.utils.common import load_json, save_json
from src.adguardian.utils.exceptions import MetricError, UpstreamArtifactError

METRICS = ("accuracy", "precision", "recall", "f1")
LABELS = list(range(len(CLASS_NAMES)))
EVAL_BATCH_SIZE = 16


def aggregate(predictions: PredictionSet, mode: str = "vote") -> Dict[str, int]:
    """
    Sample-level labels from segment-level probabilities, in order of first appearance.

    vote: most frequent segment argmax; ties go to the higher summed probability, then the
    lowest class index. mean_prob: argmax of the averaged probability vectors.
    """
    if mode not in ("vote", "mean_prob"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    rows: Dict[str, List[np.ndarray]] = {}
    for sample_id, p in zip(predictions.sample_ids, predictions.probabilities):
        rows.setdefault(sample_id, []).append(p)

    out = {}
    for sample_id, probs in rows.items():
        probs = np.stack(probs)
        summed = probs.sum(axis=0)
        if mode == "mean_prob":
            out[sample_id] = int(np.argmax(summed / len(probs)))
            continue
        counts = np.bincount(probs.argmax(axis=1), minlength=len(CLASS_NAMES))
        tied = np.flatnonzero(counts == counts.max())
        best = tied[summed[tied] == summed[tied].max()]
        out[sample_id] = int(best.min())
    return out


def compute_metrics(labels_true: Sequence[int], labels_pred: Sequence[int], split_tag: str = "") -> EvalReport:
    """Accuracy plus macro precision/recall/F1 over the three classes; 0/0 counts as 0."""
    if len(labels_true) != len(labels_pred) or len(labels_true) == 0:
        raise MetricError(f"need equal non-empty label vectors, got {len(labels_true)} and {len(labels_pred)}")
    cm = confusion_matrix(labels_true, labels_pred, labels=LABELS)
    precision, recall, f1, support = precision_recall_fscore_support(
        labels_true, labels_pred, labels=LABELS, average=None, zero_division=0)
    per_class = {
        name: {"precision": float(precision[i]), "recall": float(recall[i]), "f1": float(f1[i]),
               "support": int(support[i])}
        for i, name in enumerate(CLASS_NAMES)
    }
    return EvalReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        precision=float(np.mean(precision)),
        recall=float(np.mean(recall)),
        f1=float(np.mean(f1)),
        confusion=cm,
        split_tag=split_tag,
        per_class=per_class,
    )


def format_cell(mean: float, std: Optional[float] = None) -> str:
    if std is None:
        return f"{100 * mean:.1f}"
    return f"{100 * mean:.1f}±{100 * std:.1f}"


def cross_split_report(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Population mean and std per metric across split versions; `cell` is the percent "m±s" rendering."""
    if len(reports) < 2:
        raise MetricError(f"cross-split summary needs at least 2 reports, got {len(reports)}")
    rows = []
    for metric in METRICS:
        values = np.array([getattr(r, metric) for r in reports], dtype=float)
        mean, std = float(values.mean()), float(values.std(ddof=0))
        rows.append({"metric": metric, "mean": mean, "std": std, "cell": format_cell(mean, std)})
    return pd.DataFrame(rows).set_index("metric")


def render_confusion(report: EvalReport, out_dir: Path, stem: str = "confusion", title: str = "Confusion Matrix"
                     ) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cm = np.asarray(report.confusion, dtype=int)
    csv_path = out_dir / f"{stem}.csv"
    pd.DataFrame(cm, index=list(CLASS_NAMES), columns=list(CLASS_NAMES)).to_csv(csv_path)

    plt.figure(figsize=(8, 6))
    sns.heatmap(cm, annot=True, fmt='d', cmap='Blues', xticklabels=CLASS_NAMES, yticklabels=CLASS_NAMES)
    plt.xlabel('Predicted')
    plt.ylabel('Actual')
    plt.title(title)
    plt.tight_layout()
    png_path = out_dir / f"{stem}.png"
    plt.savefig(png_path)
    plt.close()
    logger.info(f"Saved confusion matrix to {csv_path} and {png_path}")
    return csv_path, png_path


def read_confusion(path: Path) -> np.ndarray:
    return pd.read_csv(path, index_col=0).loc[list(CLASS_NAMES), list(CLASS_NAMES)].to_numpy(dtype=int)


def render_loss_curves(curves: Dict[str, pd.DataFrame], path: Path, dev_column: str = "dev_loss") -> Path:
    """Train loss (top) and dev loss (bottom) per condition against epoch."""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 8), sharex=True)
    for name, df in curves.items():
        top.plot(df["epoch"], df["train_loss"], marker="o", label=name)
        bottom.plot(df["epoch"], df[dev_column], marker="o", label=name)
    top.set_ylabel("train loss")
    bottom.set_ylabel("dev loss")
    bottom.set_xlabel("epoch")
    top.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    logger.info(f"Saved loss curves to {path}")
    return path


def predictions_frames(predictions: PredictionSet, segment_index: Sequence[int],
                       labels: Dict[str, int]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Sample-level (mean segment probabilities) and segment-level prediction tables."""
    prob_cols = [f"p_{c}" for c in CLASS_NAMES]
    seg = pd.DataFrame(predictions.probabilities, columns=prob_cols)
    seg.insert(0, "segment_index", list(segment_index))
    seg.insert(0, "sample_id", predictions.sample_ids)
    seg["predicted"] = [CLASS_NAMES[i] for i in predictions.probabilities.argmax(axis=1)]
    seg["truth"] = [CLASS_NAMES[predictions.truth[s]] for s in predictions.sample_ids]

    sample = seg.groupby("sample_id", sort=False)[prob_cols].mean().reset_index()
    sample["predicted"] = [CLASS_NAMES[labels[s]] for s in sample["sample_id"]]
    sample["truth"] = [CLASS_NAMES[predictions.truth[s]] for s in sample["sample_id"]]
    return sample, seg


def score_predictions(predictions: PredictionSet, mode: str, split_tag: str = "") -> Tuple[Dict[str, int], EvalReport]:
    labels = aggregate(predictions, mode)
    ids = list(labels)
    return labels, compute_metrics([predictions.truth[s] for s in ids], [labels[s] for s in ids], split_tag)


def write_evaluation(out_dir: Path, predictions: PredictionSet, segment_index: Sequence[int], mode: str,
                     split_tag: str, stem: str = "") -> EvalReport:
    """Aggregate, score and persist predictions CSVs, metrics JSON and the confusion matrix."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels, report = score_predictions(predictions, mode, split_tag)
    sample, seg = predictions_frames(predictions, segment_index, labels)
    prefix = f"{stem}_" if stem else ""
    sample.to_csv(out_dir / f"{prefix}predictions.csv", index=False)
    seg.to_csv(out_dir / f"{prefix}segment_predictions.csv", index=False)
    save_json(out_dir / f"{prefix}metrics.json", report.to_dict())
    render_confusion(report, out_dir, stem=f"{prefix}confusion")
    logger.info(f"{split_tag} {stem or 'test'}: accuracy={report.accuracy:.4f} macro-F1={report.f1:.4f}")
    return report


def load_split_set(split_dir: Path, name: str) -> List[SampleRecord]:
    path = Path(split_dir) / f"{name}.jsonl"
    if not path.exists():
        raise UpstreamArtifactError(str(path), "split")
    return read_manifest(path)


def short_track_items(records: Sequence[SampleRecord], preprocessor: DataPreprocessor, kind: str, short_len: float):
    """Every test sample cut into non-overlapping pieces, each scored as its own sample `<id>#k`."""
    items, truth = [], {}
    for r in records:
        seq = preprocessor.load_features(r.audio_path, kind)
        for k, piece in enumerate(short_track_pieces(seq, short_len)):
            items.append((f"{r.sample_id}#{k}", piece))
            truth[f"{r.sample_id}#{k}"] = r.label
    return items, truth


class ModelEvaluation:
    def __init__(self, config: EvaluationConfig):
        self.cfg = config
        reader = CheckpointReader(config.model_dir / "model" / "best.pt", producer="finetune")
        self.model = AdClassifier.from_ad_checkpoint(reader)
        self.preprocessor = DataPreprocessor(config.frontend)

    def predict(self, records: Sequence[SampleRecord]) -> Tuple[PredictionSet, List[int]]:
        kind = self.model.input_kind
        if self.cfg.track == "short":
            items, truth = short_track_items(records, self.preprocessor, kind, self.cfg.short_len)
        else:
            items = [(r.sample_id, self.preprocessor.load_features(r.audio_path, kind)) for r in records]
            truth = {r.sample_id: r.label for r in records}
        ids, index, probs = predict_sequences(self.model, items, self.cfg.segmentation, EVAL_BATCH_SIZE)
        return PredictionSet(ids, probs, truth), index

    def run(self) -> EvalReport:
        split_tag = self.cfg.split_dir.name
        for name in ("dev", "test"):
            records = load_split_set(self.cfg.split_dir, name)
            predictions, index = self.predict(records)
            report = write_evaluation(self.cfg.run_dir, predictions, index, self.cfg.aggregation, split_tag,
                                      stem="" if name == "test" else name)
        logger.info(f"Evaluation of {self.cfg.model_tag} on {split_tag} ({self.cfg.track} track) complete")
        return report


class ReportBuilder:
    """Collects per-version test metrics of every evaluated model and baseline into one table."""

    def __init__(self, config: ReportConfig):
        self.cfg = config

    def collect(self) -> Dict[str, Dict[str, EvalReport]]:
        found: Dict[str, Dict[str, EvalReport]] = {}
        for family in ("evaluate", "baseline"):
            for metrics_path in sorted((self.cfg.experiment_dir / family).glob("*/v*/metrics.json")):
                model = metrics_path.parent.parent.name if family == "evaluate" else \
                    f"{metrics_path.parent.parent.name} (baseline)"
                found.setdefault(model, {})[metrics_path.parent.name] = EvalReport.from_dict(load_json(metrics_path))
        if not found:
            raise UpstreamArtifactError(str(self.cfg.experiment_dir / "evaluate"), "evaluate")
        return found

    def table(self) -> pd.DataFrame:
        rows = []
        for model, by_version in self.collect().items():
            reports = [by_version[v] for v in sorted(by_version)]
            row = {"model": model, "versions": ",".join(sorted(by_version))}
            if len(reports) >= 2:
                summary = cross_split_report(reports)
                row.update({m: summary.loc[m, "cell"] for m in METRICS})
            else:
                logger.warning(f"{model}: only {len(reports)} split version evaluated; no ± reported")
                row.update({m: format_cell(getattr(reports[0], m)) for m in METRICS})
            rows.append(row)
        return pd.DataFrame(rows, columns=["model", "versions", *METRICS])

    def run(self) -> pd.DataFrame:
        self.cfg.run_dir.mkdir(parents=True, exist_ok=True)
        df = self.table()
        df.to_csv(self.cfg.run_dir / "report.csv", index=False)
        header = "| " + " | ".join(df.columns) + " |"
        lines = [header, "|" + "---|" * len(df.columns)]
        lines += ["| " + " | ".join(str(v) for v in row) + " |" for row in df.itertuples(index=False)]
        lines += ["", "Cells are mean±std in percent across split versions (population standard deviation)."]
        (self.cfg.run_dir / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")

        for model, by_version in self.collect().items():
            total = sum(np.asarray(r.confusion) for r in by_version.values())
            summed = EvalReport(0.0, 0.0, 0.0, 0.0, total, split_tag="all")
            render_confusion(summed, self.cfg.run_dir, stem=f"confusion_{model.split(' ')[0]}"
                             + ("_baseline" if "baseline" in model else ""),
                             title=f"{model}, summed over {len(by_version)} versions")
        logger.info(f"Report written to {self.cfg.run_dir}")
        return df
