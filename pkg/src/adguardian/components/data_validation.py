from collections import Counter
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from src.adguardian import logger
from src.adguardian.entity.artifact_entity import SampleRecord, SplitResult
from src.adguardian.utils.common import load_jsonl, save_json


def validate_split(result: SplitResult, allow_dev_overlap: bool,
                   manifest: Optional[Sequence[SampleRecord]] = None) -> List[str]:
    """
    Check the partition rules of one split version. Never raises.

    Returns an empty list iff test speakers are unseen by train/dev, dev speakers are unseen
    by train (unless overlap is allowed), no sample appears twice and, when the cleaned
    manifest is given, the three sets cover it exactly.
    """
    violations = []
    speakers = {name: {r.speaker_id for r in items} for name, items in result.sets().items()}

    for other in ("train", "dev"):
        for spk in sorted(speakers["test"] & speakers[other]):
            violations.append(f"test-{other} speaker leak: {spk}")
    if not allow_dev_overlap:
        for spk in sorted(speakers["dev"] & speakers["train"]):
            violations.append(f"dev-train speaker leak: {spk}")

    counts = Counter(r.sample_id for items in result.sets().values() for r in items)
    for sample_id in sorted(s for s, n in counts.items() if n > 1):
        violations.append(f"duplicate sample: {sample_id}")

    if manifest is not None:
        expected = {r.sample_id for r in manifest}
        for sample_id in sorted(expected - set(counts)):
            violations.append(f"missing sample: {sample_id}")
        for sample_id in sorted(set(counts) - expected):
            violations.append(f"unknown sample: {sample_id}")
    return violations


class DataValidation:
    """Checks persisted split manifests against the schema and the partition rules."""

    def __init__(self, manifest_columns: Iterable[str]):
        self.manifest_columns = set(manifest_columns)

    def validate_manifest_file(self, path: Path) -> bool:
        rows = load_jsonl(path)
        bad = [i for i, row in enumerate(rows) if set(row) != self.manifest_columns]
        if bad:
            logger.error(f"Invalid columns in {path}: rows {bad[:5]}")
        return not bad

    def validate_all(self, results: Sequence[SplitResult], manifest: Sequence[SampleRecord],
                     allow_dev_overlap: bool, out_dir: Path) -> dict:
        report = {}
        for result in results:
            version_dir = Path(out_dir) / result.version_tag
            schema_ok = all(self.validate_manifest_file(version_dir / f"{name}.jsonl")
                            for name in ("train", "dev", "test"))
            violations = validate_split(result, allow_dev_overlap, manifest)
            entry = {
                "schema_ok": schema_ok,
                "violations": violations,
                "dev_overlap_speakers": sorted(result.dev_overlap_speakers),
                "diagnostics": result.diagnostics,
                "counts": result.counts(),
            }
            save_json(version_dir / "validation.json", entry)
            report[result.version_tag] = entry
            if violations:
                logger.error(f"{result.version_tag}: {len(violations)} split violations")
            else:
                logger.info(f"{result.version_tag}: split valid")
        return report
