from typing import List, Optional


class AdGuardianError(Exception):
    """Base class of every error raised on purpose by the package."""

    exit_code = 4


class ConfigError(AdGuardianError):
    exit_code = 2

    def __init__(self, message: str, fields: Optional[List[str]] = None):
        self.fields = list(fields or [])
        detail = "; ".join(self.fields)
        super().__init__(f"{message}: {detail}" if detail else message)


class UpstreamArtifactError(AdGuardianError):
    """A stage input is missing; `producer` names the subcommand that creates it."""

    exit_code = 3

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(f"Missing upstream artifact {artifact}. Run `{producer}` first.")


class AudioReadError(AdGuardianError):
    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        super().__init__(f"Cannot read audio file {path}" + (f": {reason}" if reason else ""))


class FrontendError(AdGuardianError):
    pass


class SplitError(AdGuardianError):
    pass


class MetricError(AdGuardianError):
    pass


class TrainingDivergedError(AdGuardianError):
    def __init__(self, message: str, last_good_checkpoint=None):
        self.last_good_checkpoint = last_good_checkpoint
        suffix = f" (last good checkpoint: {last_good_checkpoint})" if last_good_checkpoint else ""
        super().__init__(message + suffix)


class RunDirectoryExistsError(AdGuardianError):
    def __init__(self, run_dir):
        self.run_dir = str(run_dir)
        super().__init__(
            f"Run directory {run_dir} already holds a run with the same config digest; pass --force to overwrite."
        )


class RunLockedError(AdGuardianError):
    def __init__(self, run_dir):
        self.run_dir = str(run_dir)
        super().__init__(f"Run directory {run_dir} is locked by another process (remove {run_dir}/.lock if stale).")
