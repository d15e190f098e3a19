from typing import Optional

from src.adguardian import logger
from src.adguardian.components.model_trainer import AsrPretrainer, SslPretrainer
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.utils.common import run_directory


class AsrPretrainingPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_asr_pretraining(self):
        asr_config = self.config.get_asr_pretrain_config()
        with run_directory(asr_config.run_dir, self.config.digest, self.config.params, self.force):
            curves = AsrPretrainer(config=asr_config).train()
        if len(curves):
            logger.info(f"ASR pre-training done: final valid CER {curves['valid_cer'].iloc[-1]:.4f}")


class SslPretrainingPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_ssl_pretraining(self):
        ssl_config = self.config.get_ssl_pretrain_config()
        with run_directory(ssl_config.run_dir, self.config.digest, self.config.params, self.force):
            _, ctc_curves = SslPretrainer(config=ssl_config).train()
        if len(ctc_curves):
            logger.info(f"SSL pre-training done: final valid CER {ctc_curves['valid_cer'].iloc[-1]:.4f}")
