from typing import Dict, Optional

from src.adguardian import logger
from src.adguardian.components.classifier_trainer import ClassifierTrainer, FinetuneResult
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.utils.common import run_directory

STAGE_NAME = "AD Fine-tuning"


class FinetuningPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_finetuning(self) -> Dict[str, FinetuneResult]:
        results = {}
        for version in self.config.split_versions():
            finetune_config = self.config.get_finetune_config(version)
            with run_directory(finetune_config.run_dir, self.config.digest, self.config.params, self.force):
                results[version] = ClassifierTrainer(config=finetune_config).train()
            logger.info(f"{version}: best epoch {results[version].best_epoch}, "
                        f"dev accuracy {results[version].best_dev_accuracy:.4f}")
        return results


if __name__ == '__main__':
    try:
        logger.info(f">>>>>> stage {STAGE_NAME} started <<<<<<")
        FinetuningPipeline().initiate_finetuning()
        logger.info(f">>>>>> stage {STAGE_NAME} completed <<<<<<\n\nx==========x")
    except Exception as e:
        logger.exception(e)
        raise e
