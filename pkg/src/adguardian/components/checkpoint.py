from pathlib import Path
from typing import Dict, Iterable, List, Optional

import torch
import torch.nn as nn

from src.adguardian import logger
from src.adguardian.constants import CHECKPOINT_FORMAT_VERSION
from src.adguardian.utils.exceptions import ConfigError, UpstreamArtifactError


def save_checkpoint(path: Path, kind: str, modules: Dict[str, nn.Module], model_config: dict,
                    config_digest: str = "", vocab: Optional[List[str]] = None, epoch: int = 0,
                    tags: Iterable[str] = (), extra: Optional[dict] = None) -> Path:
    """
    Persist named sub-modules as one versioned file.

    The `modules` key lists exactly which sub-modules the checkpoint contains.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "config_digest": config_digest,
        "model_config": model_config,
        "vocab": list(vocab) if vocab is not None else None,
        "modules": {name: module.state_dict() for name, module in modules.items()},
        "epoch": int(epoch),
        "tags": sorted(tags),
        "extra": extra or {},
    }
    torch.save(payload, path)
    logger.info(f"Checkpoint saved: {path} ({kind}, modules={sorted(modules)}, epoch={epoch})")
    return path


class CheckpointReader:
    """Read access to a checkpoint that records which sub-modules were handed out."""

    def __init__(self, path: Path, producer: str = "pretrain"):
        self.path = Path(path)
        if not self.path.exists():
            raise UpstreamArtifactError(str(self.path), producer)
        self._payload = torch.load(self.path, map_location="cpu", weights_only=False)
        version = self._payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"Unsupported checkpoint {self.path}",
                              [f"format_version {version} != {CHECKPOINT_FORMAT_VERSION}"])
        self.accessed: List[str] = []

    @property
    def kind(self) -> str:
        return self._payload["kind"]

    @property
    def model_config(self) -> dict:
        return dict(self._payload["model_config"])

    @property
    def vocab(self) -> Optional[List[str]]:
        return self._payload.get("vocab")

    @property
    def config_digest(self) -> str:
        return self._payload.get("config_digest", "")

    @property
    def epoch(self) -> int:
        return self._payload.get("epoch", 0)

    @property
    def tags(self) -> List[str]:
        return list(self._payload.get("tags", []))

    @property
    def extra(self) -> dict:
        return dict(self._payload.get("extra", {}))

    @property
    def module_names(self) -> List[str]:
        return sorted(self._payload["modules"])

    def state_dict(self, name: str) -> dict:
        if name not in self._payload["modules"]:
            raise ConfigError(f"Checkpoint {self.path} has no module {name!r}", self.module_names)
        self.accessed.append(name)
        logger.info(f"Checkpoint {self.path.name}: reading module {name}")
        return self._payload["modules"][name]

    def load_into(self, name: str, module: nn.Module) -> nn.Module:
        module.load_state_dict(self.state_dict(name))
        return module
