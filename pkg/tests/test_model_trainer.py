from dataclasses import asdict, replace

import math

import numpy as np
import pandas as pd
import pytest
import torch

from src.adguardian.components.checkpoint import CheckpointReader, save_checkpoint
from src.adguardian.components.data_synthesis import build_language, gen_asr_corpus, write_asr_corpus
from src.adguardian.components.model_trainer import (
    AsrPretrainer,
    SslPretrainer,
    batch_order,
    corpus_cer,
    pad_batch,
    state_fingerprint,
)
from src.adguardian.components.ssl_model import Wav2VecModel
from src.adguardian.entity.artifact_entity import JointLossConfig
from src.adguardian.entity.config_entity import (
    AsrModelConfig,
    AsrPretrainConfig,
    FrontendConfig,
    SslModelConfig,
    SslPretrainConfig,
)
from src.adguardian.utils.exceptions import ConfigError, UpstreamArtifactError
from tests.conftest import TINY_ASR, TINY_SSL


@pytest.fixture
def asr_config(asr_corpus_dir, tmp_path):
    return AsrPretrainConfig(corpus_dir=asr_corpus_dir, run_dir=tmp_path / "asr", language_tag="alpha",
                             model=TINY_ASR, frontend=FrontendConfig(), loss=JointLossConfig(),
                             epochs=0, batch_size=2, lr=1e-3, seed=7)


@pytest.fixture
def ssl_config(asr_corpus_dir, tmp_path):
    return SslPretrainConfig(corpus_dir=asr_corpus_dir, run_dir=tmp_path / "ssl", language_tag="alpha",
                             model=TINY_SSL, sample_rate=16000, mask_prob=0.2, mask_length=3, num_negatives=4,
                             logit_temperature=0.1, diversity_weight=0.1, epochs=1, batch_size=2, lr=1e-3,
                             crop_seconds=0.25, ctc_epochs=1, ctc_lr=1e-3, seed=0)


def test_batch_order_depends_on_seed_and_epoch():
    a = np.concatenate(batch_order(10, 3, seed=1, epoch=2))
    b = np.concatenate(batch_order(10, 3, seed=1, epoch=2))
    c = np.concatenate(batch_order(10, 3, seed=1, epoch=3))
    np.testing.assert_array_equal(a, b)
    assert sorted(a) == list(range(10))
    assert not np.array_equal(a, c)
    assert [len(x) for x in batch_order(10, 3, 0, 0)] == [3, 3, 3, 1]


def test_pad_batch():
    x, lengths = pad_batch([torch.ones(3, 2), torch.ones(5, 2)])
    assert x.shape == (2, 5, 2)
    assert lengths.tolist() == [3, 5]
    assert not x[0, 3:].any()


def test_corpus_cer_pools_edit_distance():
    assert corpus_cer([[1, 2, 3], [4]], [[1, 3], [4]]) == pytest.approx(0.25)
    assert corpus_cer([[1, 2]], [[1, 2]]) == 0.0


def test_zero_epoch_pretraining_is_reproducible(asr_config, tmp_path):
    fingerprints = []
    for name in ("first", "second"):
        trainer = AsrPretrainer(replace(asr_config, run_dir=tmp_path / name))
        trainer.train()
        assert (trainer.ckpt_dir / "epoch_000.pt").exists()
        assert (trainer.ckpt_dir / "best.pt").exists()
        fingerprints.append(state_fingerprint(trainer.model))
    assert fingerprints[0] == fingerprints[1]


def test_checkpoint_carries_vocabulary(asr_config):
    trainer = AsrPretrainer(asr_config)
    trainer.train()
    reader = CheckpointReader(trainer.ckpt_dir / "best.pt")
    assert reader.vocab == trainer.corpus.vocab
    assert reader.module_names == ["ctc", "decoder", "encoder"]
    assert reader.kind == "asr_ctc_attn"
    assert "best" in reader.tags


def test_vocabulary_mismatch(asr_config):
    with pytest.raises(ConfigError, match="Vocabulary"):
        AsrPretrainer(replace(asr_config, model=replace(TINY_ASR, vocab_size=9)))


def test_missing_corpus(asr_config, tmp_path):
    with pytest.raises(UpstreamArtifactError, match="synth-data"):
        AsrPretrainer(replace(asr_config, corpus_dir=tmp_path / "nothing"))


def test_one_asr_epoch(asr_config):
    trainer = AsrPretrainer(replace(asr_config, epochs=1))
    curves = trainer.train()
    assert list(curves["epoch"]) == [1]
    assert np.isfinite(curves["train_loss"]).all()
    assert 0.0 <= curves["valid_cer"].iloc[0]
    assert (trainer.ckpt_dir / "epoch_001.pt").exists()
    assert pd.read_csv(trainer.run_dir / "curves.csv").shape == (1, 4)


def test_ssl_pretraining_then_ctc(ssl_config):
    trainer = SslPretrainer(ssl_config)
    pretrain_curves, ctc_curves = trainer.train()
    assert list(pretrain_curves["epoch"]) == [1]
    assert np.isfinite(pretrain_curves["train_loss"]).all()
    assert list(ctc_curves["epoch"]) == [1]

    pretrained = CheckpointReader(trainer.ckpt_dir / "pretrain_best.pt")
    assert pretrained.kind == "ssl_pretrain"
    assert "quantizer" in pretrained.module_names
    ctc = CheckpointReader(trainer.ckpt_dir / "best.pt")
    assert ctc.kind == "ssl_ctc"
    assert ctc.module_names == ["context_encoder", "feature_encoder", "projection"]


def test_ctc_stage_keeps_feature_encoder_frozen(ssl_config):
    trainer = SslPretrainer(replace(ssl_config, epochs=0))
    before = state_fingerprint(trainer.model.encoder.feature_encoder)
    path = trainer.save_pretrain(0)
    model, _ = trainer.asr_finetune(CheckpointReader(path))
    assert state_fingerprint(model.encoder.feature_encoder) == before


def test_ctc_stage_rejects_foreign_vocabulary(ssl_config, tmp_path):
    trainer = SslPretrainer(ssl_config)
    model = Wav2VecModel(TINY_SSL)
    path = save_checkpoint(tmp_path / "foreign.pt", "ssl_pretrain", model.modules_for_checkpoint(),
                           asdict(TINY_SSL), vocab=["x", "y"])
    with pytest.raises(ConfigError, match="Vocabulary"):
        trainer.asr_finetune(CheckpointReader(path))


def test_pretrain_checkpoint_carries_corpus_vocabulary(ssl_config):
    trainer = SslPretrainer(replace(ssl_config, epochs=0))
    reader = CheckpointReader(trainer.save_pretrain(0))
    assert reader.vocab == trainer.corpus.vocab

    trainer.corpus.vocab = list(reversed(trainer.corpus.vocab))
    with pytest.raises(ConfigError, match="Vocabulary"):
        trainer.asr_finetune(reader)


@pytest.fixture(scope="module")
def desk_corpus_dir(tmp_path_factory):
    """500 utterances of an 8-token language, 5-20 tokens each."""
    language = build_language("alpha", 8, (220.0, 1100.0), seed=0)
    out_dir = tmp_path_factory.mktemp("desk_alpha")
    corpus = gen_asr_corpus(language, n_utts=500, len_range=(5, 20), seed=0)
    write_asr_corpus(corpus, language, out_dir, valid_fraction=0.1, seed=0)
    return out_dir


@pytest.mark.slow
def test_desk_scale_joint_ctc_attention_reaches_low_cer(desk_corpus_dir, tmp_path):
    config = AsrPretrainConfig(corpus_dir=desk_corpus_dir, run_dir=tmp_path / "asr", language_tag="alpha",
                               model=AsrModelConfig(vocab_size=10), frontend=FrontendConfig(),
                               loss=JointLossConfig(), epochs=30, batch_size=16, lr=1e-3, seed=42)
    curves = AsrPretrainer(config).train()
    assert curves["valid_cer"].min() < 0.15


@pytest.mark.slow
def test_desk_scale_ssl_pretraining_beats_uniform_and_ctc_reaches_low_cer(desk_corpus_dir, tmp_path):
    num_negatives = 20
    config = SslPretrainConfig(corpus_dir=desk_corpus_dir, run_dir=tmp_path / "ssl", language_tag="alpha",
                               model=SslModelConfig(), sample_rate=16000, mask_prob=0.065, mask_length=10,
                               num_negatives=num_negatives, logit_temperature=0.1, diversity_weight=0.1,
                               epochs=20, batch_size=8, lr=5e-4, crop_seconds=4.0, ctc_epochs=30, ctc_lr=1e-3,
                               seed=42)
    pretrain_curves, ctc_curves = SslPretrainer(config).train()
    assert pretrain_curves["contrastive"].iloc[-1] < math.log(num_negatives + 1)
    assert ctc_curves["valid_cer"].min() < 0.2
