import os
from pathlib import Path
from typing import Iterable, List, Optional

import soundfile as sf

from src.adguardian import logger
from src.adguardian.constants import AUDIO_EXTENSIONS
from src.adguardian.entity.artifact_entity import ExclusionList, ManifestIssue, ManifestParse, SampleRecord
from src.adguardian.utils.common import load_jsonl, save_jsonl
from src.adguardian.utils.exceptions import UpstreamArtifactError

MANIFEST_FILE = "manifest.jsonl"


def read_duration(path: Path) -> float:
    """Duration in seconds read from the audio header (no decoding)."""
    info = sf.info(str(path))
    return info.frames / float(info.samplerate)


def parse_manifest(root_listing: Iterable) -> ManifestParse:
    """
    Build one SampleRecord per audio file of the listing.

    Malformed names, unsupported extensions and unreadable headers are collected
    as ManifestIssue entries; they never abort the parse.
    """
    records, issues = [], []
    for item in root_listing:
        path = Path(item)
        if path.suffix.lower() not in AUDIO_EXTENSIONS:
            issues.append(ManifestIssue(str(path), f"unsupported extension {path.suffix!r}"))
            continue
        try:
            duration = read_duration(path)
        except Exception as e:
            issues.append(ManifestIssue(str(path), f"duration read failed: {e}"))
            continue
        try:
            records.append(SampleRecord.from_sample_id(path.stem, str(path), duration))
        except ValueError as e:
            issues.append(ManifestIssue(str(path), str(e).splitlines()[0]))

    for issue in issues:
        logger.warning(f"Manifest entry skipped: {issue.path} ({issue.reason})")
    logger.info(f"Parsed {len(records)} records, {len(issues)} issues")
    return ManifestParse(records=records, issues=issues)


def apply_exclusions(records: List[SampleRecord], exclusions: ExclusionList) -> List[SampleRecord]:
    present = {r.sample_id for r in records}
    for missing in sorted(exclusions.excluded_ids - present):
        logger.warning(f"Excluded id {missing} is not in the manifest")
    kept = [r for r in records if r.sample_id not in exclusions.excluded_ids]
    logger.info(f"Exclusions applied: {len(records)} -> {len(kept)} records")
    return kept


def read_exclusions(path: Optional[Path]) -> ExclusionList:
    """Plain text, one sample id per line; blank lines and `#` comments are ignored."""
    if path is None:
        return ExclusionList(frozenset())
    with open(path, "r") as f:
        ids = [line.split("#", 1)[0].strip() for line in f]
    return ExclusionList(frozenset(i for i in ids if i))


def write_exclusions(path: Path, exclusions: ExclusionList):
    with open(path, "w") as f:
        for sample_id in sorted(exclusions.excluded_ids):
            f.write(sample_id + "\n")


def write_manifest(path: Path, records: List[SampleRecord]) -> int:
    return save_jsonl(path, (r.model_dump() for r in records))


def read_manifest(path: Path) -> List[SampleRecord]:
    if not Path(path).exists():
        raise UpstreamArtifactError(str(path), "synth-data")
    return [SampleRecord(**row) for row in load_jsonl(Path(path))]


class DataIngestion:
    """Collects the AD corpus listing from disk into a cleaned record list."""

    def __init__(self, manifest_dir: Path, exclusions_file: Optional[Path] = None):
        self.manifest_dir = Path(manifest_dir)
        self.exclusions_file = exclusions_file

    def list_audio_files(self) -> List[Path]:
        if not self.manifest_dir.exists():
            raise UpstreamArtifactError(str(self.manifest_dir), "synth-data")
        listing = []
        for root, _, files in os.walk(self.manifest_dir):
            listing.extend(Path(root) / f for f in files if Path(f).suffix.lower() in AUDIO_EXTENSIONS)
        return sorted(listing)

    def load_records(self) -> ManifestParse:
        parsed = parse_manifest(self.list_audio_files())
        exclusions = read_exclusions(self.exclusions_file)
        parsed.records = apply_exclusions(parsed.records, exclusions)
        return parsed
