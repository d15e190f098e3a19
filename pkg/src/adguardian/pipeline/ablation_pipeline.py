from typing import Optional

from src.adguardian.components.ablation import AblationRunner
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.utils.common import run_directory


class AblationPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_ablation(self) -> dict:
        ablation_config = self.config.get_ablation_config()
        with run_directory(ablation_config.run_dir, self.config.digest, self.config.params, self.force):
            return AblationRunner(config=ablation_config).run()
