"""Pipeline configuration: one flat ``key = value`` text file covering every
threshold, grouped by module prefix (detect., match., register., map.,
classify.). Unknown keys are rejected so typos cannot silently fall back to
defaults; every run logs the resolved configuration.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

from .classify import ClassifyConfig
from .detect import DetectConfig
from .errors import ParseError
from .planemap import MapConfig
from .register import MatchThresholds, RegisterConfig

log = logging.getLogger("reflectmap")


@dataclass
class PipelineConfig:
    detect: DetectConfig = field(default_factory=DetectConfig)
    match: MatchThresholds = field(default_factory=MatchThresholds)
    register: RegisterConfig = field(default_factory=RegisterConfig)
    map: MapConfig = field(default_factory=MapConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)

    def _sections(self):
        return {"detect": self.detect, "match": self.match,
                "register": self.register, "map": self.map,
                "classify": self.classify}

    def set(self, key: str, raw: str) -> None:
        if "." not in key:
            raise ParseError(f"config key {key!r} must be section.name")
        section_name, name = key.split(".", 1)
        sections = self._sections()
        if section_name not in sections:
            raise ParseError(f"unknown config section {section_name!r}")
        section = sections[section_name]
        for f in fields(section):
            if f.name == name:
                kind = f.type if isinstance(f.type, type) else type(getattr(section, name))
                try:
                    value = kind(raw) if kind is not bool else raw.lower() in ("1", "true", "yes")
                except ValueError as exc:
                    raise ParseError(f"bad value for {key}: {raw!r}") from exc
                setattr(section, name, value)
                return
        raise ParseError(f"unknown config key {key!r}")

    def items(self):
        for section_name, section in self._sections().items():
            for f in fields(section):
                yield f"{section_name}.{f.name}", getattr(section, f.name)

    def dump(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.items())

    def log_resolved(self) -> None:
        for k, v in self.items():
            log.info("config %s = %s", k, v)


def load_config(path=None) -> PipelineConfig:
    """Defaults, optionally overridden by a key = value file."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        cfg.set(key, raw)
    return cfg


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(cfg.dump() + "\n")
