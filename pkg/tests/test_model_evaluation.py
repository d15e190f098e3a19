import itertools

import numpy as np
import pandas as pd
import pytest

from src.adguardian.components.classifier_trainer import ClassifierTrainer
from src.adguardian.components.model_evaluation import (
    ModelEvaluation,
    ReportBuilder,
    aggregate,
    compute_metrics,
    cross_split_report,
    format_cell,
    load_split_set,
    read_confusion,
    render_confusion,
    render_loss_curves,
    write_evaluation,
)
from src.adguardian.entity.artifact_entity import EvalReport, PredictionSet, SegmentationPolicy
from src.adguardian.entity.config_entity import EvaluationConfig, FrontendConfig, ReportConfig
from src.adguardian.utils.common import save_json
from src.adguardian.utils.exceptions import MetricError, UpstreamArtifactError

ONE_HOT = np.eye(3)


def _predictions(rows, truth=0):
    ids = [sid for sid, _ in rows]
    return PredictionSet(ids, np.array([p for _, p in rows]), {sid: truth for sid in ids})


def _report(accuracy, f1=0.5, confusion=None):
    return EvalReport(accuracy, 0.5, 0.5, f1, np.eye(3, dtype=int) if confusion is None else confusion)


def test_vote_tie_goes_to_higher_probability_mass():
    rows = [("s", [0.6, 0.0, 0.4]), ("s", [0.5, 0.0, 0.5 + 1e-9]), ("s", [0.0, 0.0, 1.0]),
            ("s", [0.5 + 1e-9, 0.0, 0.5])]
    # two votes each for AD and HC; HC holds more summed probability
    assert aggregate(_predictions(rows))["s"] == 2


def test_vote_exact_tie_goes_to_lowest_index():
    rows = [("s", [0.6, 0.0, 0.4]), ("s", [0.4, 0.0, 0.6])]
    assert aggregate(_predictions(rows))["s"] == 0


def test_mean_prob_aggregation():
    rows = [("s", [0.9, 0.1, 0.0]), ("s", [0.3, 0.4, 0.3]), ("s", [0.3, 0.4, 0.3])]
    assert aggregate(_predictions(rows), "mean_prob")["s"] == 0
    assert aggregate(_predictions(rows), "vote")["s"] == 1


def test_vote_against_exhaustive_sequences():
    rng = np.random.default_rng(0)
    for n in range(1, 6):
        for winners in itertools.product(range(3), repeat=n):
            probs = np.array([0.5 * ONE_HOT[w] + rng.dirichlet([1, 1, 1]) * 0.5 for w in winners])
            probs[np.arange(n), list(winners)] += 1.0
            probs /= probs.sum(axis=1, keepdims=True)
            argmaxes = probs.argmax(axis=1)
            counts = np.bincount(argmaxes, minlength=3)
            summed = probs.sum(axis=0)
            candidates = [k for k in range(3) if counts[k] == counts.max()]
            top = max(summed[k] for k in candidates)
            expected = min(k for k in candidates if summed[k] == top)
            got = aggregate(_predictions([("s", p) for p in probs]))["s"]
            assert got == expected


def test_aggregate_keeps_first_appearance_order():
    rows = [("b", ONE_HOT[1]), ("a", ONE_HOT[0]), ("b", ONE_HOT[1])]
    assert list(aggregate(_predictions(rows))) == ["b", "a"]


def test_metrics_worked_example():
    truth = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
    pred = [0, 0, 1, 1, 1, 1, 2, 2, 2, 0]
    report = compute_metrics(truth, pred, "v1")
    assert report.accuracy == pytest.approx(0.8)
    assert report.f1 == pytest.approx((2 / 3 + 6 / 7 + 6 / 7) / 3)
    assert report.confusion.tolist() == [[2, 1, 0], [0, 3, 0], [1, 0, 3]]
    assert report.per_class["HC"]["support"] == 4


def test_absent_class_counts_as_zero():
    report = compute_metrics([0, 0, 1, 1], [0, 0, 1, 1])
    assert report.accuracy == 1.0
    assert report.f1 == pytest.approx(2 / 3)
    assert report.per_class["HC"]["f1"] == 0.0


def _hand_metrics(truth, pred):
    """Accuracy and macro-F1 from per-class TP/FP/FN; an undefined F1 counts as 0."""
    f1s = []
    for c in range(3):
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, pred) if t == c and p != c)
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return sum(t == p for t, p in zip(truth, pred)) / len(truth), sum(f1s) / 3


def test_metrics_match_hand_counts():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        truth, pred = rng.integers(0, 3, n).tolist(), rng.integers(0, 3, n).tolist()
        report = compute_metrics(truth, pred)
        accuracy, f1 = _hand_metrics(truth, pred)
        assert report.accuracy == pytest.approx(accuracy)
        assert report.f1 == pytest.approx(f1)
        assert report.confusion.sum() == n


def test_metrics_reject_bad_input():
    with pytest.raises(MetricError):
        compute_metrics([], [])
    with pytest.raises(MetricError):
        compute_metrics([0, 1], [0])


def test_cross_split_summary():
    summary = cross_split_report([_report(0.88), _report(0.872), _report(0.888)])
    assert summary.loc["accuracy", "mean"] == pytest.approx(0.88)
    assert summary.loc["accuracy", "std"] == pytest.approx(np.std([0.88, 0.872, 0.888]))
    assert summary.loc["accuracy", "cell"] == "88.0±0.7"
    assert summary.loc["f1", "std"] == 0.0


def test_cross_split_needs_two_reports():
    with pytest.raises(MetricError):
        cross_split_report([_report(0.9)])


def test_format_cell():
    assert format_cell(0.88, 0.008) == "88.0±0.8"
    assert format_cell(0.5) == "50.0"


def test_confusion_files(tmp_path):
    cm = np.array([[7, 0, 5], [1, 12, 1], [0, 2, 15]])
    csv_path, png_path = render_confusion(_report(0.79, confusion=cm), tmp_path)
    assert png_path.exists()
    read = read_confusion(csv_path)
    assert read[0, 2] == 5
    np.testing.assert_array_equal(read, cm)


def test_loss_curves_figure(tmp_path):
    curves = {"ssl": pd.DataFrame({"epoch": [1, 2], "train_loss": [1.0, 0.5], "dev_loss": [1.1, 0.9]})}
    assert render_loss_curves(curves, tmp_path / "curves.png").exists()


def test_write_evaluation_outputs(tmp_path):
    predictions = PredictionSet(["a", "a", "b"], np.array([ONE_HOT[0], ONE_HOT[2], ONE_HOT[1]]), {"a": 0, "b": 1})
    report = write_evaluation(tmp_path, predictions, [0, 1, 0], "vote", "v2", stem="dev")
    assert report.accuracy == 1.0 and report.split_tag == "v2"
    sample = pd.read_csv(tmp_path / "dev_predictions.csv")
    assert list(sample["sample_id"]) == ["a", "b"]
    assert list(sample["predicted"]) == ["AD", "MCI"]
    assert len(pd.read_csv(tmp_path / "dev_segment_predictions.csv")) == 3
    assert (tmp_path / "dev_metrics.json").exists() and (tmp_path / "dev_confusion.csv").exists()


def test_missing_split_set(tmp_path):
    with pytest.raises(UpstreamArtifactError, match="split"):
        load_split_set(tmp_path, "test")


def test_report_builder(tmp_path):
    experiment = tmp_path / "exp"
    runs = [("evaluate/ssl/v1", 0.8), ("evaluate/ssl/v2", 0.9), ("evaluate/ssl/v3", 0.85), ("baseline/minlld/v1", 0.6)]
    for sub, acc in runs:
        (experiment / sub).mkdir(parents=True)
        save_json(experiment / sub / "metrics.json", _report(acc).to_dict())

    out = tmp_path / "report"
    df = ReportBuilder(ReportConfig(experiment_dir=experiment, run_dir=out)).run()
    by_model = df.set_index("model")
    assert by_model.loc["ssl", "versions"] == "v1,v2,v3"
    assert by_model.loc["ssl", "accuracy"] == "85.0±4.1"
    assert by_model.loc["minlld (baseline)", "accuracy"] == "60.0"
    assert (out / "report.md").read_text().count("|") > 0
    assert read_confusion(out / "confusion_ssl.csv").trace() == 9
    assert (out / "confusion_minlld_baseline.csv").exists()


def test_report_without_evaluations(tmp_path):
    with pytest.raises(UpstreamArtifactError):
        ReportBuilder(ReportConfig(experiment_dir=tmp_path, run_dir=tmp_path / "report")).collect()


@pytest.mark.parametrize("track,segmentation", [
    ("full", None),
    ("full", SegmentationPolicy(0.5, 0.5, min_keep=0.5)),
    ("short", None),
])
def test_evaluation_end_to_end(make_finetune_config, split_dir, tmp_path, track, segmentation):
    finetune = make_finetune_config(max_epochs=0, run_dir=tmp_path / "finetune")
    ClassifierTrainer(finetune).train()
    config = EvaluationConfig(model_dir=finetune.run_dir, split_dir=split_dir, run_dir=tmp_path / "evaluate",
                              aggregation="vote", segmentation=segmentation, track=track, short_len=0.5,
                              frontend=FrontendConfig(), model_tag="ssl")
    report = ModelEvaluation(config).run()

    assert report.split_tag == split_dir.name
    assert np.asarray(report.confusion).sum() >= 6
    for name in ("metrics.json", "dev_metrics.json", "predictions.csv", "dev_predictions.csv", "confusion.png"):
        assert (tmp_path / "evaluate" / name).exists(), name
    sample = pd.read_csv(tmp_path / "evaluate" / "predictions.csv")
    if track == "short":
        assert all("#" in s for s in sample["sample_id"])
    else:
        assert len(sample) == 6


def test_evaluation_without_model(split_dir, tmp_path):
    config = EvaluationConfig(model_dir=tmp_path / "nothing", split_dir=split_dir, run_dir=tmp_path / "evaluate",
                              aggregation="vote", segmentation=None, track="full", short_len=6.0,
                              frontend=FrontendConfig(), model_tag="ssl")
    with pytest.raises(UpstreamArtifactError, match="finetune"):
        ModelEvaluation(config)
