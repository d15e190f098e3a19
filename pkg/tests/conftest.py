from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from src.adguardian.components.data_split import save_split
from src.adguardian.components.data_synthesis import (
    build_language,
    build_profile,
    gen_ad_corpus,
    gen_asr_corpus,
    write_asr_corpus,
)
from src.adguardian.entity.artifact_entity import SplitResult
from src.adguardian.entity.config_entity import (
    AsrModelConfig,
    AugmentationConfig,
    FinetuneConfig,
    FrontendConfig,
    SslModelConfig,
)

ROOT = Path(__file__).resolve().parents[1]

TINY_ASR = AsrModelConfig(vocab_size=6, n_mels=80, d_model=16, heads=2, ff_dim=32, layers=3, dropout=0.0)
TINY_SSL = SslModelConfig(conv_dim=16, d_model=16, heads=2, ff_dim=32, layers=3, dropout=0.0,
                          codebook_groups=2, codebook_entries=8, codevector_dim=16)


@pytest.fixture(scope="session")
def tiny_language():
    return build_language("alpha", 4, (300.0, 1200.0), seed=0)


@pytest.fixture(scope="session")
def tiny_profiles():
    return {
        "AD": build_profile("AD", 4, 0.5, (300.0, 600.0), 1.5, 1.5),
        "MCI": build_profile("MCI", 4, 0.25, (200.0, 400.0), 0.75, 1.2),
        "HC": build_profile("HC", 4, 0.0, (100.0, 200.0), 0.0, 1.0),
    }


@pytest.fixture(scope="session")
def ad_corpus(tmp_path_factory, tiny_language, tiny_profiles):
    """3 speakers x 2 samples per class, 1.0-1.5 s each."""
    out_dir = tmp_path_factory.mktemp("ad")
    records = gen_ad_corpus(tiny_language, tiny_profiles, n_speakers_per_class=3, samples_per_speaker=2,
                            duration_range=(1.0, 1.5), seed=0, out_dir=out_dir)
    return out_dir, records


@pytest.fixture(scope="session")
def split_dir(tmp_path_factory, ad_corpus):
    """Hand-made v1 split: the first speaker of every class trains, the second is dev, the third test."""
    _, records = ad_corpus
    by_slot = {0: [], 1: [], 2: []}
    for r in records:
        by_slot[int(r.speaker_id[-4:]) - 1].append(r)
    result = SplitResult("v1", train=by_slot[0], dev=by_slot[1], test=by_slot[2])
    return save_split(result, tmp_path_factory.mktemp("splits"))


@pytest.fixture(scope="session")
def asr_corpus_dir(tmp_path_factory, tiny_language):
    out_dir = tmp_path_factory.mktemp("asr_alpha")
    corpus = gen_asr_corpus(tiny_language, n_utts=6, len_range=(2, 3), seed=0)
    write_asr_corpus(corpus, tiny_language, out_dir, valid_fraction=0.34, seed=0)
    return out_dir


@pytest.fixture
def make_finetune_config(split_dir, tmp_path):
    """Factory for small fine-tuning configs on the hand-made split."""

    def factory(encoder: str = "ssl", **overrides) -> FinetuneConfig:
        config = FinetuneConfig(
            encoder=encoder,
            checkpoint=None,
            split_dir=split_dir,
            run_dir=tmp_path / "finetune",
            layer_select="last",
            hidden_dim=8,
            dropout=0.0,
            batch_size=4,
            optimizer="adam",
            lr=1e-3,
            scheduler="none",
            max_epochs=1,
            early_stop_patience=1,
            train_augmentation=AugmentationConfig(mode="none"),
            freeze_encoder=False,
            freeze_feature_encoder=False,
            frontend=FrontendConfig(),
            dev_segmentation=None,
            aggregation="vote",
            seed=0,
            asr_model=TINY_ASR if encoder == "ctc_attn" else None,
            ssl_model=TINY_SSL if encoder == "ssl" else None,
        )
        return replace(config, **overrides)

    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(0)
