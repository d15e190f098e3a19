from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from tqdm import tqdm

from src.adguardian import logger
from src.adguardian.constants import CLASS_INDEX, CLASS_NAMES, SAMPLE_RATE
from src.adguardian.components.data_ingestion import write_manifest
from src.adguardian.components.data_preprocessing import write_audio
from src.adguardian.entity.artifact_entity import (
    ExclusionList,
    SampleRecord,
    SynthAdProfile,
    SynthLanguage,
    TokenRenderer,
)
from src.adguardian.utils.common import save_json, save_jsonl
from src.adguardian.utils.exceptions import ConfigError

# gap between consecutive tokens; keeps repeated tokens separable
TOKEN_GAP_MS = 20.0
PEAK = 0.8


def build_language(tag: str, vocab_size: int, band_hz: Tuple[float, float], seed: int = 0) -> SynthLanguage:
    """
    A toy language: `vocab_size` tokens, each rendered as a harmonic tone in `band_hz`.

    Base frequencies are log-spaced over the band so that two languages built on disjoint
    bands never share a renderer.
    """
    rng = np.random.default_rng([seed, vocab_size])
    freqs = np.geomspace(band_hz[0], band_hz[1], vocab_size)
    durations = rng.uniform(80.0, 160.0, size=vocab_size)
    renderers = tuple(
        TokenRenderer(base_hz=float(f), duration_ms=float(round(d)), attack_ms=10.0, noise_level=0.02)
        for f, d in zip(freqs, durations)
    )
    vocab = tuple(f"{tag}{i}" for i in range(vocab_size))
    weights = tuple([1.0 / vocab_size] * vocab_size)
    return SynthLanguage(language_tag=tag, vocab=vocab, token_renderers=renderers, token_weights=weights)


def build_profile(label: str, vocab_size: int, pause_rate: float, pause_ms: Sequence[float],
                  token_skew: float, speaking_rate_scale: float) -> SynthAdProfile:
    """Token distribution proportional to exp(-skew * i / (V - 1)); skew 0 is uniform."""
    ranks = np.arange(vocab_size) / max(vocab_size - 1, 1)
    dist = np.exp(-token_skew * ranks)
    dist = dist / dist.sum()
    return SynthAdProfile(class_label=label, pause_rate=pause_rate, pause_ms=tuple(pause_ms),
                          token_distribution=tuple(float(p) for p in dist),
                          speaking_rate_scale=speaking_rate_scale)


def check_profiles(profiles: Dict[str, SynthAdProfile]):
    if set(profiles) != set(CLASS_NAMES):
        raise ConfigError("Invalid AD profiles", [f"need exactly {CLASS_NAMES}, got {sorted(profiles)}"])
    keys = {k: (p.pause_rate, p.pause_ms, p.token_distribution, p.speaking_rate_scale) for k, p in profiles.items()}
    for i, a in enumerate(CLASS_NAMES):
        for b in CLASS_NAMES[i + 1:]:
            if keys[a] == keys[b]:
                raise ConfigError("Invalid AD profiles", [f"{a} and {b} profiles are identical"])


def render_token(renderer: TokenRenderer, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE,
                 rate_scale: float = 1.0, pitch_scale: float = 1.0) -> np.ndarray:
    n = int(round(renderer.duration_ms * rate_scale * sample_rate / 1000.0))
    t = np.arange(n) / sample_rate
    f0 = renderer.base_hz * pitch_scale
    tone = np.sin(2 * np.pi * f0 * t) + 0.5 * np.sin(2 * np.pi * 2 * f0 * t)
    attack = max(1, int(round(renderer.attack_ms * sample_rate / 1000.0)))
    env = np.ones(n)
    ramp = np.linspace(0.0, 1.0, min(attack, n), endpoint=False)
    env[:ramp.size] = ramp
    env[n - ramp.size:] = np.minimum(env[n - ramp.size:], ramp[::-1] + 1.0 / attack)
    noise = renderer.noise_level * rng.standard_normal(n)
    return (PEAK / 1.5) * env * tone + noise * env


def _silence(ms: float, sample_rate: int) -> np.ndarray:
    return np.zeros(int(round(ms * sample_rate / 1000.0)))


def render_tokens(language: SynthLanguage, token_ids: Sequence[int], rng: np.random.Generator,
                  sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    parts = []
    for k, tok in enumerate(token_ids):
        if k:
            parts.append(_silence(TOKEN_GAP_MS, sample_rate))
        parts.append(render_token(language.token_renderers[tok], rng, sample_rate))
    wav = np.concatenate(parts) if parts else np.zeros(0)
    return np.clip(wav, -1.0, 1.0)


def gen_asr_corpus(language: SynthLanguage, n_utts: int, len_range: Tuple[int, int], seed: int,
                   sample_rate: int = SAMPLE_RATE) -> List[Tuple[np.ndarray, str]]:
    """Utterance i depends only on (seed, i); the token string is space separated."""
    if n_utts < 1:
        raise ConfigError("Invalid ASR corpus request", ["n_utts must be >= 1"])
    lo, hi = len_range
    weights = np.asarray(language.token_weights)
    corpus = []
    for i in range(n_utts):
        rng = np.random.default_rng([seed, i])
        length = int(rng.integers(lo, hi + 1))
        token_ids = rng.choice(len(language.vocab), size=length, p=weights)
        wav = render_tokens(language, token_ids, rng, sample_rate)
        corpus.append((wav, " ".join(language.vocab[t] for t in token_ids)))
    return corpus


def write_asr_corpus(corpus: List[Tuple[np.ndarray, str]], language: SynthLanguage, out_dir: Path,
                     valid_fraction: float, seed: int, sample_rate: int = SAMPLE_RATE) -> Dict[str, int]:
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    order = np.random.default_rng([seed, len(corpus)]).permutation(len(corpus))
    n_valid = max(1, int(round(valid_fraction * len(corpus))))
    valid_idx = set(order[:n_valid].tolist())
    rows = {"train": [], "valid": []}
    for i, (wav, tokens) in enumerate(tqdm(corpus, desc=f"asr_{language.language_tag}")):
        utt_id = f"{language.language_tag}_{i:05d}"
        path = out_dir / "wav" / f"{utt_id}.wav"
        write_audio(path, wav, sample_rate)
        rows["valid" if i in valid_idx else "train"].append(
            {"utt_id": utt_id, "audio_path": str(path), "tokens": tokens, "language_tag": language.language_tag})
    for name, items in rows.items():
        save_jsonl(out_dir / f"{name}.jsonl", items)
    save_json(out_dir / "vocab.json", {"language_tag": language.language_tag, "vocab": list(language.vocab)})
    return {name: len(items) for name, items in rows.items()}


def speaker_pitch_scale(seed: int, speaker_index: int) -> float:
    """Fixed per-speaker pitch offset within +-2 semitones."""
    semitones = np.random.default_rng([seed, 7919, speaker_index]).uniform(-2.0, 2.0)
    return float(2.0 ** (semitones / 12.0))


def render_ad_sample(language: SynthLanguage, profile: SynthAdProfile, duration: float, pitch_scale: float,
                     rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Tokens drawn from the class profile, with pauses at token boundaries, cut to `duration`."""
    target = int(round(duration * sample_rate))
    dist = np.asarray(profile.token_distribution)
    parts, total = [], 0
    while total < target:
        tok = int(rng.choice(len(dist), p=dist))
        piece = render_token(language.token_renderers[tok], rng, sample_rate,
                             rate_scale=profile.speaking_rate_scale, pitch_scale=pitch_scale)
        if rng.random() < profile.pause_rate:
            gap = _silence(rng.uniform(*profile.pause_ms), sample_rate)
        else:
            gap = _silence(TOKEN_GAP_MS, sample_rate)
        parts.extend([piece, gap])
        total += piece.size + gap.size
    return np.clip(np.concatenate(parts)[:target], -1.0, 1.0)


def gen_ad_corpus(language: SynthLanguage, profiles: Dict[str, SynthAdProfile], n_speakers_per_class: int,
                  samples_per_speaker: int, duration_range: Tuple[float, float], seed: int, out_dir: Path,
                  sample_rate: int = SAMPLE_RATE) -> List[SampleRecord]:
    """
    Write the 3-class corpus as `GROUP_SEX_SPEAKER_SEQ.wav` files plus `manifest.jsonl`.

    Each speaker keeps one pitch offset for all its samples; sex alternates F/M.
    """
    if n_speakers_per_class < 3:
        raise ConfigError("Invalid AD corpus request", ["n_speakers_per_class must be >= 3"])
    check_profiles(profiles)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for group in CLASS_NAMES:
        ci = CLASS_INDEX[group]
        for k in tqdm(range(n_speakers_per_class), desc=f"ad_{group}"):
            speaker_index = ci * n_speakers_per_class + k
            speaker = f"{ci + 1:02d}{k + 1:04d}"
            sex = "F" if k % 2 == 0 else "M"
            pitch = speaker_pitch_scale(seed, speaker_index)
            for j in range(samples_per_speaker):
                rng = np.random.default_rng([seed, speaker_index, j])
                duration = float(np.round(rng.uniform(*duration_range), 2))
                wav = render_ad_sample(language, profiles[group], duration, pitch, rng, sample_rate)
                sample_id = f"{group}_{sex}_{speaker}_{j + 1:03d}"
                path = out_dir / f"{sample_id}.wav"
                write_audio(path, wav, sample_rate)
                records.append(SampleRecord(sample_id=sample_id, speaker_id=speaker, group=group, sex=sex,
                                            audio_path=str(path), duration=wav.size / sample_rate))
    write_manifest(out_dir / "manifest.jsonl", records)
    logger.info(f"AD corpus written to {out_dir}: {len(records)} samples")
    return records


def silence_fraction(wav: np.ndarray, sample_rate: int = SAMPLE_RATE, frame_ms: float = 10.0,
                     threshold: float = 1e-4) -> float:
    """Share of frames whose mean energy is below `threshold`."""
    n = int(sample_rate * frame_ms / 1000.0)
    frames = wav[: (wav.size // n) * n].reshape(-1, n)
    if frames.size == 0:
        return 0.0
    return float(np.mean((frames ** 2).mean(axis=1) < threshold))


def token_rate(wav: np.ndarray, sample_rate: int = SAMPLE_RATE, frame_ms: float = 10.0,
               threshold: float = 1e-4) -> float:
    """Voiced-onset count per second; a crude speaking-rate measurement."""
    n = int(sample_rate * frame_ms / 1000.0)
    frames = wav[: (wav.size // n) * n].reshape(-1, n)
    voiced = (frames ** 2).mean(axis=1) >= threshold
    onsets = int(voiced[0]) + int(np.sum(voiced[1:] & ~voiced[:-1])) if voiced.size else 0
    return onsets / (wav.size / sample_rate)


# --------------------------------------------------------------------------- reference corpus mirror
def synthesize_reference_records(seed: int = 0) -> Tuple[List[SampleRecord], ExclusionList, Set[str]]:
    """
    Raw records with the published group totals of the challenge corpus (AD 79/26, MCI 93/54,
    HC 108/44), the duplicated/abnormal ids to exclude and the v1 test speaker set
    (#12 (10), #14 (10), #17 (11)). No audio is attached.
    """
    rng = np.random.default_rng(seed)
    records: List[SampleRecord] = []
    test_speakers: Set[str] = set()
    layout = {
        # group: list of (n_speakers, samples_each, in_test)
        "AD": [(8, 1, True), (2, 2, True), (10, 1, False), (5, 2, False)],
        "MCI": [(6, 1, True), (4, 2, True), (35, 2, False), (9, 1, False)],
        "HC": [(5, 1, True), (6, 2, True), (25, 3, False), (8, 2, False)],
    }
    for group, blocks in layout.items():
        counter = 0
        if group == "AD":
            for seq in range(1, 48):
                records.append(_mirror_record("AD", "F", "040108", seq, rng))
        for n_speakers, per_speaker, in_test in blocks:
            for _ in range(n_speakers):
                counter += 1
                sex = "F" if counter % 2 else "M"
                speaker = f"{CLASS_INDEX[group] + 1}{counter:05d}"
                if group == "HC" and not in_test and per_speaker == 2 and "019216" not in {r.speaker_id for r in records}:
                    speaker, sex = "019216", "M"
                for seq in range(1, per_speaker + 1):
                    records.append(_mirror_record(group, sex, speaker, seq, rng))
                if in_test:
                    test_speakers.add(speaker)
    exclusions = ExclusionList(frozenset({"AD_F_040108_045", "AD_F_040108_046", "AD_F_040108_047",
                                          "HC_M_019216_001"}))
    return records, exclusions, test_speakers


def _mirror_record(group: str, sex: str, speaker: str, seq: int, rng: np.random.Generator) -> SampleRecord:
    sample_id = f"{group}_{sex}_{speaker}_{seq:03d}"
    return SampleRecord(sample_id=sample_id, speaker_id=speaker, group=group, sex=sex,
                        audio_path=f"{sample_id}.wav", duration=float(np.round(rng.uniform(30.0, 60.0), 2)))


class DataSynthesis:
    """Generates both corpora from a SynthDataConfig."""

    def __init__(self, config):
        self.cfg = config

    def languages(self) -> Dict[str, SynthLanguage]:
        return {which: build_language(lang.tag, lang.vocab_size, lang.band_hz, self.cfg.seed)
                for which, lang in self.cfg.languages.items()}

    def profiles(self, vocab_size: int) -> Dict[str, SynthAdProfile]:
        return {label: build_profile(label, vocab_size, p["pause_rate"], p["pause_ms"], p["token_skew"],
                                     p["speaking_rate_scale"])
                for label, p in self.cfg.profiles.items()}

    def generate_asr_corpora(self) -> Dict[str, Dict[str, int]]:
        counts = {}
        for which, language in self.languages().items():
            corpus = gen_asr_corpus(language, self.cfg.n_utts, self.cfg.len_range, self.cfg.seed,
                                    self.cfg.sample_rate)
            counts[language.language_tag] = write_asr_corpus(
                corpus, language, self.cfg.asr_dirs[language.language_tag], self.cfg.valid_fraction,
                self.cfg.seed, self.cfg.sample_rate)
            logger.info(f"ASR corpus {which} ({language.language_tag}): {counts[language.language_tag]}")
        return counts

    def generate_ad_corpus(self) -> List[SampleRecord]:
        language = self.languages()[self.cfg.ad_language]
        return gen_ad_corpus(language, self.profiles(len(language.vocab)), self.cfg.n_speakers_per_class,
                             self.cfg.samples_per_speaker, self.cfg.duration_range, self.cfg.seed,
                             self.cfg.ad_dir, self.cfg.sample_rate)
