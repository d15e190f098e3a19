from typing import Dict, Optional

from src.adguardian.components.baseline import BaselineRunner
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.entity.artifact_entity import EvalReport
from src.adguardian.utils.common import run_directory


class BaselinePipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_baseline(self) -> Dict[str, EvalReport]:
        reports = {}
        for version in self.config.split_versions():
            baseline_config = self.config.get_baseline_config(version)
            with run_directory(baseline_config.run_dir, self.config.digest, self.config.params, self.force):
                reports[version] = BaselineRunner(config=baseline_config).run()
        return reports
