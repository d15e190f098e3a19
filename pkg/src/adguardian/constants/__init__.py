from pathlib import Path

CONFIG_FILE_PATH = Path("config/config.yaml")
PARAMS_FILE_PATH = Path("params.yaml")
SCHEMA_FILE_PATH = Path("schema.yaml")
PRESETS_DIR = Path("config/presets")

# Class index order is fixed across the repo: rows/cols of every confusion matrix follow it.
CLASS_NAMES = ("AD", "MCI", "HC")
CLASS_INDEX = {name: idx for idx, name in enumerate(CLASS_NAMES)}
SEXES = ("F", "M")

SAMPLE_RATE = 16000
BLANK_INDEX = 0
AUDIO_EXTENSIONS = (".wav", ".flac")

# SAMPLEID = GROUP_SEX_SPEAKER_SEQ, e.g. AD_F_040108_045
SAMPLE_ID_PATTERN = r"^(AD|MCI|HC)_(M|F)_([0-9A-Za-z]+)_([0-9]+)$"

DATA_ROOT_ENV = "ADGUARDIAN_DATA_ROOT"
CHECKPOINT_FORMAT_VERSION = 1
