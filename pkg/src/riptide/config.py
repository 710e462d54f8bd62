"""Project and campaign configuration.

Settings are read from ``riptide.cfg`` at the project root::

    [riptide]
    test_command = python -m pytest
    timeout = 30
    runs = 10
    exclude = build/*, docs/*
    plugin_autoload = true
    runner = spawn

Command line flags override the file.
"""
from __future__ import annotations

import configparser
import shlex
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_FILE = "riptide.cfg"
STAGES = ("infection", "propagation", "all")
RUNNERS = ("spawn", "fork")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExecutionConfig:
    test_command: tuple[str, ...] = ()
    timeout: float = 30.0
    exclude: tuple[str, ...] = ()
    plugin_autoload: bool = True
    runner: str = "spawn"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.runner not in RUNNERS:
            raise ConfigError(f"runner must be one of {', '.join(RUNNERS)}")


@dataclass(frozen=True)
class CampaignConfig:
    project_root: Path
    runs: int = 10
    workers: int = 1
    stage: str = "all"
    out: Path | None = None
    only: tuple[str, ...] = ()
    include: tuple[str, ...] = ()
    execution: ExecutionConfig = field(default_factory=ExecutionConfig)

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {', '.join(STAGES)}")

    @property
    def out_dir(self) -> Path:
        return self.out if self.out is not None else self.project_root / ".riptide"

    def fingerprint(self) -> dict:
        """Settings that change analysis results (used for cache keys)."""
        ex = self.execution
        return {
            "runs": self.runs,
            "timeout": ex.timeout,
            "exclude": list(ex.exclude),
            "include": list(self.include),
            "test_command": list(ex.test_command),
            "plugin_autoload": ex.plugin_autoload,
        }


def _globs(text: str) -> tuple[str, ...]:
    return tuple(g.strip() for g in text.replace("\n", ",").split(",") if g.strip())


def read_config_file(project_root: Path) -> dict:
    path = Path(project_root) / CONFIG_FILE
    if not path.is_file():
        return {}
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not parser.has_section("riptide"):
        return {}
    sec = parser["riptide"]
    out: dict = {}
    try:
        if "test_command" in sec:
            out["test_command"] = tuple(shlex.split(sec["test_command"]))
        if "timeout" in sec:
            out["timeout"] = sec.getfloat("timeout")
        if "runs" in sec:
            out["runs"] = sec.getint("runs")
        if "workers" in sec:
            out["workers"] = sec.getint("workers")
        if "exclude" in sec:
            out["exclude"] = _globs(sec["exclude"])
        if "include" in sec:
            out["include"] = _globs(sec["include"])
        if "plugin_autoload" in sec:
            out["plugin_autoload"] = sec.getboolean("plugin_autoload")
        if "runner" in sec:
            out["runner"] = sec["runner"].strip()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return out


def load_execution_config(project_root: Path, **overrides) -> ExecutionConfig:
    values = {k: v for k, v in read_config_file(project_root).items()
              if k in ExecutionConfig.__dataclass_fields__}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExecutionConfig(**values)


def load_campaign_config(project_root: Path, **overrides) -> CampaignConfig:
    """Merge ``riptide.cfg`` with explicit overrides (``None`` means unset)."""
    root = Path(project_root).resolve()
    file_values = read_config_file(root)
    ex_keys = ExecutionConfig.__dataclass_fields__
    ex_values = {k: v for k, v in file_values.items() if k in ex_keys}
    ex_values.update({k: v for k, v in overrides.items() if k in ex_keys and v is not None})
    camp = {k: v for k, v in file_values.items() if k not in ex_keys}
    camp.update({k: v for k, v in overrides.items() if k not in ex_keys and v is not None})
    if "out" in camp:
        camp["out"] = Path(camp["out"]).resolve()
    return CampaignConfig(project_root=root, execution=ExecutionConfig(**ex_values), **camp)

