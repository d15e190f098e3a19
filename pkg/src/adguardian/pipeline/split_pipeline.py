from typing import Optional

from src.adguardian import logger
from src.adguardian.components.data_ingestion import DataIngestion, write_manifest
from src.adguardian.components.data_split import make_split, save_split
from src.adguardian.components.data_validation import DataValidation
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.entity.artifact_entity import SplitSpec
from src.adguardian.utils.common import run_directory

STAGE_NAME = "Split"


class SplitPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_split(self) -> dict:
        split_config = self.config.get_split_config()
        parsed = DataIngestion(split_config.manifest_dir, split_config.exclusions_file).load_records()
        spec = SplitSpec(ratios=split_config.ratios, seed=split_config.seed,
                         allow_dev_overlap=split_config.allow_dev_overlap, n_versions=split_config.n_versions,
                         frozen_test=frozenset(split_config.frozen_test) if split_config.frozen_test else None)

        with run_directory(split_config.run_dir, self.config.digest, self.config.params, self.force) as run_dir:
            write_manifest(run_dir / "manifest.jsonl", parsed.records)
            results = make_split(parsed.records, spec)
            for result in results:
                save_split(result, run_dir)
            validation = DataValidation(self.config.schema.MANIFEST_COLUMNS.keys())
            report = validation.validate_all(results, parsed.records, split_config.allow_dev_overlap, run_dir)
        logger.info(f"Split versions written: {[r.version_tag for r in results]} "
                    f"({len(parsed.records)} records, {len(parsed.issues)} manifest issues)")
        return report


if __name__ == '__main__':
    try:
        logger.info(f">>>>>> stage {STAGE_NAME} started <<<<<<")
        SplitPipeline().initiate_split()
        logger.info(f">>>>>> stage {STAGE_NAME} completed <<<<<<\n\nx==========x")
    except Exception as e:
        logger.exception(e)
        raise e
