from typing import Dict, Optional

import pandas as pd

from src.adguardian import logger
from src.adguardian.components.model_evaluation import ModelEvaluation, ReportBuilder
from src.adguardian.config.configuration import ConfigurationManager
from src.adguardian.entity.artifact_entity import EvalReport
from src.adguardian.utils.common import run_directory


class EvaluationPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_model_evaluation(self) -> Dict[str, EvalReport]:
        reports = {}
        for version in self.config.split_versions():
            evaluation_config = self.config.get_evaluation_config(version)
            with run_directory(evaluation_config.run_dir, self.config.digest, self.config.params, self.force):
                reports[version] = ModelEvaluation(config=evaluation_config).run()
        return reports


class ReportPipeline:
    def __init__(self, config: Optional[ConfigurationManager] = None, force: bool = False):
        self.config = config or ConfigurationManager()
        self.force = force

    def initiate_report(self) -> pd.DataFrame:
        report_config = self.config.get_report_config()
        # the report is a view over other runs; it is always rebuilt
        with run_directory(report_config.run_dir, self.config.digest, self.config.params, force=True):
            table = ReportBuilder(config=report_config).run()
        logger.info(f"Report:\n{table.to_string(index=False)}")
        return table
