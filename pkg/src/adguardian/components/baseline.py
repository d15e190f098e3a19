from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import librosa
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import softmax
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from src.adguardian import logger
from src.adguardian.components.data_preprocessing import DataPreprocessor, frame_params, segment
from src.adguardian.components.model_evaluation import load_split_set, write_evaluation
from src.adguardian.constants import CLASS_NAMES
from src.adguardian.entity.artifact_entity import (
    AcousticSequence,
    EvalReport,
    FeatureVector,
    PredictionSet,
    SampleRecord,
    SegmentationPolicy,
)
from src.adguardian.entity.config_entity import BaselineConfig, FrontendConfig
from src.adguardian.utils.common import save_bin
from src.adguardian.utils.exceptions import ConfigError, FrontendError, MetricError

FEATURE_SET = "minlld-v1"
N_MFCC = 10
MFCC_MELS = 40
ROLLOFF = 0.85
ENERGY_FLOOR = 1e-10
BASE_LLDS = ("log_energy", "zcr", "spectral_centroid", "spectral_rolloff",
             *(f"mfcc{i}" for i in range(1, N_MFCC + 1)))
LLD_NAMES = BASE_LLDS + tuple(f"delta_{n}" for n in BASE_LLDS)
FUNCTIONALS = ("mean", "std", "min", "max", "range", "slope")
FEATURE_NAMES = tuple(f"{lld}_{fn}" for lld in LLD_NAMES for fn in FUNCTIONALS)


def lld_tracks(waveform: AcousticSequence, frontend: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """(28, frames) matrix of base LLDs and their deltas."""
    y = waveform.data.astype(np.float64)
    sr = waveform.sample_rate
    win, hop = frame_params(frontend)
    if len(y) < win + 2 * hop:
        raise FrontendError(f"minlld-v1 needs at least 3 frames ({win + 2 * hop} samples), got {len(y)}")

    frames = librosa.util.frame(y, frame_length=win, hop_length=hop)
    energy = np.log(np.maximum((frames ** 2).sum(axis=0), ENERGY_FLOOR))
    zcr = librosa.feature.zero_crossing_rate(y, frame_length=win, hop_length=hop, center=False)[0]
    centroid = librosa.feature.spectral_centroid(y=y, sr=sr, n_fft=win, hop_length=hop, center=False)[0]
    rolloff = librosa.feature.spectral_rolloff(y=y, sr=sr, n_fft=win, hop_length=hop, center=False,
                                               roll_percent=ROLLOFF)[0]
    mfcc = librosa.feature.mfcc(y=y, sr=sr, n_mfcc=N_MFCC + 1, n_fft=win, hop_length=hop, center=False,
                                n_mels=MFCC_MELS)[1:]
    n = min(len(energy), len(zcr), len(centroid), len(rolloff), mfcc.shape[1])
    base = np.vstack([energy[:n], zcr[:n], centroid[:n], rolloff[:n], mfcc[:, :n]])
    base = np.nan_to_num(base, nan=0.0, posinf=0.0, neginf=0.0)
    delta = librosa.feature.delta(base, width=3, mode="nearest", axis=-1)
    return np.vstack([base, delta])


def functionals(tracks: np.ndarray, frame_rate: float) -> np.ndarray:
    """mean, std, min, max, range and least-squares slope (per second) of every row."""
    t = np.arange(tracks.shape[1]) / frame_rate
    tc = t - t.mean()
    denom = float((tc ** 2).sum())
    mean = tracks.mean(axis=1)
    lo, hi = tracks.min(axis=1), tracks.max(axis=1)
    slope = ((tracks - mean[:, None]) * tc).sum(axis=1) / denom if denom > 0 else np.zeros(len(tracks))
    stats = np.stack([mean, tracks.std(axis=1), lo, hi, hi - lo, slope], axis=1)
    return np.nan_to_num(stats, nan=0.0, posinf=0.0, neginf=0.0).reshape(-1)


def extract_lld_functionals(waveform: AcousticSequence, feature_set: str = FEATURE_SET,
                            frontend: FrontendConfig = FrontendConfig()) -> FeatureVector:
    if feature_set != FEATURE_SET:
        raise ConfigError("Unknown feature set", [f"{feature_set!r}; available: {FEATURE_SET}"])
    if waveform.kind != "waveform":
        raise FrontendError("LLD extraction works on waveforms")
    _, hop = frame_params(frontend)
    values = functionals(lld_tracks(waveform, frontend), waveform.sample_rate / hop)
    return FeatureVector(values=values, feature_set_tag=feature_set, names=FEATURE_NAMES)


def train_svm(features: np.ndarray, labels: Sequence[int], C: float = 1.0, tol: float = 1e-5,
              max_iter: int = 20000, seed: int = 0) -> Pipeline:
    """Standardisation fitted on the training rows, then a one-vs-rest hinge-loss linear SVM."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ConfigError("SVM training needs at least two classes", [f"classes present: {np.unique(labels).tolist()}"])
    model = Pipeline([
        ("scaler", StandardScaler()),
        ("svm", LinearSVC(C=C, loss="hinge", dual=True, tol=tol, max_iter=max_iter, random_state=seed)),
    ])
    model.fit(np.asarray(features, dtype=np.float64), labels)
    logger.info(f"Linear SVM trained on {len(labels)} vectors of dim {features.shape[1]} (C={C})")
    return model


def svm_scores(model: Pipeline, features: np.ndarray) -> np.ndarray:
    """(N, 3) one-vs-rest scores; classes absent from training score -inf."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    expected = model.named_steps["scaler"].n_features_in_
    if features.shape[1] != expected:
        raise MetricError(f"feature vector length {features.shape[1]} != model input {expected}")
    raw = model.decision_function(features)
    classes = model.named_steps["svm"].classes_
    scores = np.full((len(features), len(CLASS_NAMES)), -np.inf)
    if raw.ndim == 1:
        scores[:, classes[1]], scores[:, classes[0]] = raw, -raw
    else:
        scores[:, classes] = raw
    return scores


def predict_svm(model: Pipeline, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Labels (argmax, ties to the lowest class index) and the raw scores."""
    scores = svm_scores(model, features)
    return scores.argmax(axis=1), scores


class BaselineRunner:
    """minlld-v1 functionals + linear SVM on one split version."""

    def __init__(self, config: BaselineConfig, n_jobs: int = -1):
        self.cfg = config
        self.n_jobs = n_jobs
        self.preprocessor = DataPreprocessor(config.frontend)

    def _sample_vectors(self, record: SampleRecord, policy: Optional[SegmentationPolicy]) -> List[np.ndarray]:
        seq = self.preprocessor.load(record.audio_path)
        pieces = (segment(seq, policy) if policy is not None else []) or [seq]
        return [extract_lld_functionals(p, self.cfg.feature_set, self.cfg.frontend).values for p in pieces]

    def features(self, records: Sequence[SampleRecord], policy: Optional[SegmentationPolicy]) -> pd.DataFrame:
        """One row per segment: sample_id, segment_index, label and the feature dimensions."""
        per_sample = Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(self._sample_vectors)(r, policy) for r in records)
        rows, meta = [], []
        for record, vectors in zip(records, per_sample):
            for k, v in enumerate(vectors):
                rows.append(v)
                meta.append((record.sample_id, k, record.label))
        df = pd.DataFrame(np.vstack(rows) if rows else np.zeros((0, len(FEATURE_NAMES))), columns=list(FEATURE_NAMES))
        df.insert(0, "label", [m[2] for m in meta])
        df.insert(0, "segment_index", [m[1] for m in meta])
        df.insert(0, "sample_id", [m[0] for m in meta])
        return df

    def run(self) -> EvalReport:
        run_dir = Path(self.cfg.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        train = self.features(load_split_set(self.cfg.split_dir, "train"), self.cfg.train_segmentation)
        test_records = load_split_set(self.cfg.split_dir, "test")
        test = self.features(test_records, self.cfg.test_segmentation)
        train.to_csv(run_dir / "train_features.csv", index=False)
        test.to_csv(run_dir / "test_features.csv", index=False)
        logger.info(f"Features exported: {len(train)} train rows, {len(test)} test rows")

        model = train_svm(train[list(FEATURE_NAMES)].to_numpy(), train["label"].to_numpy(), self.cfg.C,
                          self.cfg.tol, self.cfg.max_iter, self.cfg.seed)
        save_bin(model, run_dir / "svm.joblib")

        _, scores = predict_svm(model, test[list(FEATURE_NAMES)].to_numpy())
        predictions = PredictionSet(test["sample_id"].tolist(), softmax(scores, axis=1),
                                    {r.sample_id: r.label for r in test_records})
        return write_evaluation(run_dir, predictions, test["segment_index"].tolist(), self.cfg.aggregation,
                                self.cfg.split_dir.name)
