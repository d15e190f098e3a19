import shutil

import numpy as np
import pandas as pd
import pytest

from main import build_parser, main, resolve_config
from src.adguardian.constants import DATA_ROOT_ENV
from src.adguardian.utils.common import file_sha256, load_json
from tests.conftest import ROOT

SMALL_SPLIT = ["--set", "split.ratios=[0.34, 0.33, 0.33]", "--set", "split.n_versions=2"]
TINY = [
    "--set", "synth.asr_corpus.n_utts=12", "--set", "synth.asr_corpus.len_range=[2, 3]",
    "--set", "synth.ad_corpus.n_speakers_per_class=3", "--set", "synth.ad_corpus.samples_per_speaker=2",
    "--set", "synth.ad_corpus.duration_range=[1.0, 1.5]",
    "--set", "ssl.conv_dim=16", "--set", "ssl.d_model=16", "--set", "ssl.heads=2", "--set", "ssl.ff_dim=32",
    "--set", "ssl.layers=3", "--set", "ssl.codebook_entries=8", "--set", "ssl.codevector_dim=16",
    "--set", "ssl.epochs=1", "--set", "ssl.ctc_epochs=1", "--set", "ssl.crop_seconds=0.5",
    "--set", "ssl.mask_length=3", "--set", "ssl.num_negatives=4", "--set", "ssl.batch_size=4",
    "--set", "finetune.max_epochs=1", "--set", "finetune.batch_size=4",
    "--set", "finetune.train_augmentation.crop_len=1.0",
    "--set", "evaluation.segmentation.segment_len=0.5", "--set", "evaluation.segmentation.hop=0.5",
    "--set", "evaluation.segmentation.min_keep=0.5",
    *SMALL_SPLIT,
]


@pytest.fixture(autouse=True)
def in_repo(monkeypatch):
    monkeypatch.chdir(ROOT)


@pytest.fixture
def data_root(tmp_path, monkeypatch, ad_corpus):
    root = tmp_path / "data"
    shutil.copytree(ad_corpus[0], root / "ad")
    monkeypatch.setenv(DATA_ROOT_ENV, str(root))
    return root


def test_parser_knows_every_subcommand():
    parser = build_parser()
    for sub in ("synth-data", "split", "pretrain-asr", "pretrain-ssl", "finetune", "baseline", "evaluate",
                "ablate", "report"):
        assert parser.parse_args([sub]).subcommand == sub
    with pytest.raises(SystemExit):
        parser.parse_args(["train"])


def test_preset_names_resolve():
    assert resolve_config("wav2vec-6-5").resolve() == ROOT / "config" / "presets" / "wav2vec-6-5.yaml"
    assert resolve_config(None) is None


def test_unknown_preset_is_a_config_error(tmp_path):
    assert main(["finetune", "--config", "wav2vec-99-1", "--out-dir", str(tmp_path)]) == 2


def test_invalid_override_is_a_config_error(tmp_path):
    assert main(["finetune", "--set", "finetune.bogus=1", "--out-dir", str(tmp_path)]) == 2


def test_finetune_before_split(tmp_path):
    assert main(["finetune", "--set", "finetune.checkpoint=scratch", "--out-dir", str(tmp_path)]) == 3


def test_report_on_missing_experiment(tmp_path):
    assert main(["report", str(tmp_path / "runs" / "exp9")]) == 3


def test_split_refuses_to_overwrite(tmp_path, data_root):
    args = ["split", "--out-dir", str(tmp_path / "runs"), *SMALL_SPLIT]
    assert main(args) == 0
    split_dir = tmp_path / "runs" / "exp1" / "splits"
    assert (split_dir / "v1" / "test.jsonl").exists() and (split_dir / "v2" / "train.jsonl").exists()
    assert (split_dir / "config_digest.txt").exists()

    assert main(args) == 4
    assert main([*args, "--force"]) == 0


@pytest.mark.slow
def test_tiny_experiment_end_to_end(tmp_path, monkeypatch):
    out = ["--out-dir", str(tmp_path / "runs")]
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path / "data"))
    for stage in ("synth-data", "split", "pretrain-ssl", "finetune", "evaluate"):
        assert main([stage, *out, *TINY]) == 0, stage
    assert main(["report", str(tmp_path / "runs" / "exp1")]) == 0

    report = pd.read_csv(tmp_path / "runs" / "exp1" / "report" / "report.csv")
    assert list(report["model"]) == ["wav2vec-3-2"]
    assert report.loc[0, "versions"] == "v1,v2"
    assert "±" in report.loc[0, "accuracy"]


@pytest.mark.slow
def test_rerun_from_config_snapshot_gives_identical_metrics(tmp_path, monkeypatch):
    out = ["--out-dir", str(tmp_path / "runs")]
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path / "data"))
    for stage in ("synth-data", "split", "pretrain-ssl", "finetune", "evaluate"):
        assert main([stage, *out, *TINY]) == 0, stage

    experiment = tmp_path / "runs" / "exp1"
    metrics = sorted((experiment / "evaluate").glob("*/v*/metrics.json"))
    assert len(metrics) == 2
    before = {p: file_sha256(p) for p in metrics}

    snapshot = experiment / "finetune" / "wav2vec-3-2" / "v1" / "config.yaml"
    for stage in ("finetune", "evaluate"):
        assert main([stage, *out, "--config", str(snapshot), "--force"]) == 0, stage
    assert {p: file_sha256(p) for p in metrics} == before


@pytest.mark.slow
def test_desk_scale_pipeline_beats_the_svm_baseline(tmp_path, monkeypatch):
    out = ["--out-dir", str(tmp_path / "runs")]
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path / "data"))
    for stage in ("synth-data", "split", "pretrain-ssl", "finetune", "evaluate"):
        assert main([stage, *out]) == 0, stage
    assert main(["baseline", *out, "--config", "svm-minlld"]) == 0

    experiment = tmp_path / "runs" / "exp1"
    ssl = [load_json(p).accuracy for p in sorted((experiment / "evaluate" / "wav2vec-3-2").glob("v*/metrics.json"))]
    svm = [load_json(p).accuracy for p in sorted((experiment / "baseline" / "svm-minlld").glob("v*/metrics.json"))]
    assert len(ssl) == len(svm) == 3
    assert np.mean(ssl) > 0.80
    assert np.mean(ssl) >= np.mean(svm) + 0.05
