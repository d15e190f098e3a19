from typing import Optional

from src.adguardian import logger
from src.adguardian.components.data_synthesis import DataSynthesis
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.utils.common import run_directory

STAGE_NAME = "Synthetic Data"


class SynthDataPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_synth_data(self):
        synth_config = self.config.get_synth_data_config()
        with run_directory(synth_config.root_dir, self.config.digest, self.config.params, self.force):
            synthesis = DataSynthesis(config=synth_config)
            counts = synthesis.generate_asr_corpora()
            records = synthesis.generate_ad_corpus()
        logger.info(f"ASR corpora: {counts}; AD corpus: {len(records)} samples in {synth_config.ad_dir}")


if __name__ == '__main__':
    try:
        logger.info(f">>>>>> stage {STAGE_NAME} started <<<<<<")
        SynthDataPipeline().initiate_synth_data()
        logger.info(f">>>>>> stage {STAGE_NAME} completed <<<<<<\n\nx==========x")
    except Exception as e:
        logger.exception(e)
        raise e
