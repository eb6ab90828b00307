"""Pipeline configuration as an INI file with ``section.key=value`` overrides.

Every learner lives in its own ``[learner.<id>]`` section; the id becomes the
column prefix of its meta-features.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .dsp import DspConfig
from .gbdt import GbdtConfig
from .level1 import BaseLearnerSpec
from .synth import SynthConfig

__all__ = ["ConfigError", "PipelineConfig", "default_learners", "load_config", "apply_overrides"]


class ConfigError(ValueError):
    pass


def default_learners() -> dict:
    return {
        "logmel_softmax": BaseLearnerSpec("softmax_regression", "flattened_logmel", learning_rate=0.01,
                                          epochs=20, batch_size=32, l2=1e-3, seed=1),
        "mfcc_mlp": BaseLearnerSpec("mlp", "flattened_mfcc", learning_rate=0.02, epochs=20,
                                    batch_size=32, hidden_sizes=(32,), l2=1e-3, seed=2),
    }


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    cache_dir: str = "cache"
    output_dir: str = "out"
    train_manifest: str = "train.csv"
    test_manifest: str = "test.csv"
    audio_subdir: str = "audio"


@dataclass(frozen=True)
class ExtractConfig:
    segments_per_clip: int = 1
    stats_full_clip: bool = False
    seed: int = 0


@dataclass(frozen=True)
class StackConfig:
    k_folds: int = 5
    seed: int = 0
    mixup_alpha: Optional[float] = 0.2
    aggregation: str = "mean"


@dataclass(frozen=True)
class GridConfig:
    r_values: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    both_arms: bool = True


@dataclass(frozen=True)
class Level2Config:
    r: float = 0.6
    with_stats: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = PathsConfig()
    synth: SynthConfig = SynthConfig()
    dsp: DspConfig = DspConfig()
    extract: ExtractConfig = ExtractConfig()
    stacking: StackConfig = StackConfig()
    learners: dict = field(default_factory=default_learners)
    gbdt: GbdtConfig = GbdtConfig()
    grid: GridConfig = GridConfig()
    level2: Level2Config = Level2Config()
    base_dir: str = field(default=".", compare=False)

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_ini(self, absolute_paths: bool = True) -> str:
        """Serialise; directory paths are resolved so the echo runs from anywhere."""
        cp = configparser.ConfigParser(interpolation=None)
        for name in _SECTIONS:
            cp[name] = {k: _format(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
        if absolute_paths:
            for key in ("data_dir", "cache_dir", "output_dir"):
                cp["paths"][key] = str(self.path(key).resolve())
        for lid, spec in self.learners.items():
            cp[f"learner.{lid}"] = {k: _format(v) for k, v in dataclasses.asdict(spec).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")


_SECTIONS = ("paths", "synth", "dsp", "extract", "stacking", "gbdt", "grid", "level2")


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _parse_value(raw: str, default, annotation: str = ""):
    text = raw.strip()
    if text.lower() == "none":
        return None
    if default is None and "int" in str(annotation):
        return int(text)
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        elem = default[0] if default else 0.0
        return tuple(_parse_value(t, elem) for t in items)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or default is None:
        return float(text)
    return text


def _build(cls, values: dict, base=None, section=""):
    base = base if base is not None else cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    updates = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        try:
            updates[key] = _parse_value(raw, getattr(base, key), known[key].type)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    try:
        return dataclasses.replace(base, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _from_parser(cp: configparser.ConfigParser, base_dir: str) -> PipelineConfig:
    cfg = PipelineConfig(base_dir=base_dir)
    kwargs = {}
    for name in cp.sections():
        if name.startswith("learner."):
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        kwargs[name] = _build(type(getattr(cfg, name)), dict(cp[name]), getattr(cfg, name), name)
    learner_sections = [s for s in cp.sections() if s.startswith("learner.")]
    learners = dict(cfg.learners)
    if learner_sections:
        defaults = learners
        learners = {}
        for s in learner_sections:
            lid = s[len("learner."):]
            learners[lid] = _build(BaseLearnerSpec, dict(cp[s]), defaults.get(lid, BaseLearnerSpec()), s)
    return dataclasses.replace(cfg, learners=learners, **kwargs)


def apply_overrides(text: str, overrides: Sequence[str]) -> str:
    """Merge ``section.key=value`` overrides into INI text."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not section.key=value")
        dotted, value = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override {item!r} needs a section prefix")
        section, key = dotted.strip().rsplit(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value.strip()
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_config(path=None, overrides: Sequence[str] = (), text: Optional[str] = None) -> PipelineConfig:
    """Read a config file (or text); relative paths resolve against its directory."""
    base_dir = "."
    if text is None:
        if path is None:
            text = PipelineConfig().to_ini(absolute_paths=False)
        else:
            text = Path(path).read_text(encoding="utf-8")
            base_dir = str(Path(path).resolve().parent)
    try:
        merged = apply_overrides(text, overrides)
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(merged)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return _from_parser(cp, base_dir)
