import os
import logging
import yaml
import json
import hashlib
import joblib
import numpy as np
from ensure import ensure_annotations
from box import ConfigBox
from box.exceptions import BoxValueError
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterable, List
from src.adguardian import logger, logging_str
from src.adguardian.utils.exceptions import RunDirectoryExistsError, RunLockedError


@ensure_annotations
def read_yaml(path_to_yaml: Path) -> ConfigBox:
    """
    Load a YAML configuration file and return it as a ConfigBox.

    Args:
        path_to_yaml (Path): Path to the YAML file.

    Raises:
        ValueError: If the file is empty.
        Exception: For any other I/O or parsing errors.

    Returns:
        ConfigBox: Parsed YAML content.
    """
    try:
        with open(path_to_yaml, 'r') as f:
            content = yaml.safe_load(f)
            if content is None:
                raise BoxValueError("Empty YAML")
            logger.info(f"YAML loaded: {path_to_yaml}")
            return ConfigBox(content)
    except BoxValueError:
        logger.error(f"YAML file is empty: {path_to_yaml}")
        raise ValueError(f"YAML file {path_to_yaml} is empty.")
    except Exception as e:
        logger.error(f"Failed to load YAML {path_to_yaml}: {e}")
        raise


@ensure_annotations
def save_yaml(path: Path, data: dict):
    """
    Save a dictionary to a YAML file.

    Args:
        path (Path): Destination YAML file path.
        data (dict): Data to serialize.
    """
    with open(path, 'w') as f:
        yaml.safe_dump(_to_builtin(data), f, sort_keys=True)
    logger.info(f"YAML saved: {path}")


def _to_builtin(obj: Any) -> Any:
    """Recursively turn numpy scalars/arrays, tuples, sets and Paths into JSON/YAML friendly values."""
    if isinstance(obj, dict):
        return {str(k): _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_to_builtin(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return _to_builtin(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


@ensure_annotations
def save_json(path: Path, data: dict):
    """
    Save a dictionary to a JSON file.

    Keys are sorted so that identical content always produces identical bytes.

    Args:
        path (Path): Destination JSON file path.
        data (dict): Data to serialize.
    """
    with open(path, 'w') as f:
        json.dump(_to_builtin(data), f, indent=4, sort_keys=True)
    logger.info(f"JSON saved: {path}")


@ensure_annotations
def load_json(path: Path) -> ConfigBox:
    """
    Load a JSON file and return it as a ConfigBox.

    Args:
        path (Path): Path to the JSON file.

    Returns:
        ConfigBox: Parsed JSON content.
    """
    with open(path, 'r') as f:
        content = json.load(f)
    logger.info(f"JSON loaded: {path}")
    return ConfigBox(content)


def save_jsonl(path: Path, rows: Iterable[dict]) -> int:
    """Write one JSON object per line; returns the number of lines written."""
    count = 0
    with open(path, 'w') as f:
        for row in rows:
            f.write(json.dumps(_to_builtin(row), sort_keys=True) + "\n")
            count += 1
    logger.info(f"JSONL saved: {path} ({count} rows)")
    return count


def load_jsonl(path: Path) -> List[dict]:
    with open(path, 'r') as f:
        rows = [json.loads(line) for line in f if line.strip()]
    logger.info(f"JSONL loaded: {path} ({len(rows)} rows)")
    return rows


@ensure_annotations
def create_directories(paths: list, verbose: bool = True):
    """
    Create multiple directories, if they don't already exist.

    Args:
        paths (list): List of directory paths (str or Path).
        verbose (bool): Whether to log directory creation.
    """
    for p in paths:
        os.makedirs(p, exist_ok=True)
        if verbose:
            logger.info(f"Directory created or exists: {p}")


@ensure_annotations
def save_bin(data: object, path: Path):
    """
    Serialize an object to disk with joblib.

    Args:
        data (Any): Object to serialize.
        path (Path): Path to the output .pkl file.
    """
    joblib.dump(data, path)
    logger.info(f"Binary saved: {path}")


@ensure_annotations
def load_bin(path: Path) -> object:
    """
    Load a joblib‐serialized object from disk.

    Args:
        path (Path): Path to the .pkl file.

    Returns:
        Any: The deserialized Python object.
    """
    obj = joblib.load(path)
    logger.info(f"Binary loaded: {path}")
    return obj


def config_digest(document: dict) -> str:
    """SHA-256 over the canonical JSON dump; independent of key order."""
    canonical = json.dumps(_to_builtin(document), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@contextmanager
def run_directory(run_dir: Path, digest: str, snapshot: dict, force: bool = False):
    """
    Own `run_dir` for the duration of one stage.

    Refuses a directory that already completed a run with the same config digest unless
    `force`, takes an exclusive lock file, writes the config snapshot and mirrors the
    package log into `run.log`. The digest file is written only when the stage succeeds.
    """
    run_dir = Path(run_dir)
    digest_file = run_dir / "config_digest.txt"
    if digest_file.exists() and digest_file.read_text().strip() == digest and not force:
        raise RunDirectoryExistsError(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLockedError(run_dir)
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)

    handler = logging.FileHandler(run_dir / "run.log")
    handler.setFormatter(logging.Formatter(logging_str))
    logger.addHandler(handler)
    try:
        if digest_file.exists():
            digest_file.unlink()
        save_yaml(run_dir / "config.yaml", snapshot)
        yield run_dir
        digest_file.write_text(digest + "\n")
    finally:
        logger.removeHandler(handler)
        handler.close()
        lock.unlink(missing_ok=True)
