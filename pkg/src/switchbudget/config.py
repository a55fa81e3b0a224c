"""Run configuration: an INI file with [adversary], [learner], [engine] and [output].

Example::

    [adversary]
    generator = stochastic_gap
    T = 10000
    K = 4
    gap = 0.2
    base = 0.4

    [learner]
    mode = full
    budget = 1024

    [engine]
    repetitions = 200
    base_seed = 0

Keys are case-insensitive.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .adversary import DEFAULT_C1, DEFAULT_C2, DEFAULT_C3
from .errors import ConfigError

GENERATORS = ("stochastic_gap", "hard", "file")
MODES = ("full", "flex", "bandit", "router")
SEED_POLICIES = ("fresh", "fixed")
SETTINGS = ("TOTAL_BUDGET", "EXTRA_BUDGET")


@dataclass(frozen=True)
class AdversaryConfig:
    generator: str = "stochastic_gap"
    T: int = 1000
    K: int = 2
    gap: float = 0.2
    base: float = 0.4
    k_star: int | None = None
    epsilon: float | None = None  # hard instance; regime default when unset
    sigma: float | None = None    # hard instance; 1/(9 log2 T) when unset
    b_ex: int | None = None       # budget fed to the regime formula; engine budget when unset
    c1: float = DEFAULT_C1
    c2: float = DEFAULT_C2
    c3: float = DEFAULT_C3
    path: str | None = None
    seed_policy: str = "fresh"    # fresh: new instance per repetition; fixed: one instance
    seed: int = 0


@dataclass(frozen=True)
class LearnerConfig:
    mode: str = "full"
    budget: int = 0
    obs_per_batch: int | None = None
    num_batches: int | None = None
    batch_size: int | None = None
    learning_rate: float | None = None
    sd_enabled: bool | None = None
    c_threshold: float = 1.0


@dataclass(frozen=True)
class EngineConfig:
    repetitions: int = 10
    base_seed: int = 0
    switching_costs_enabled: bool = True
    setting: str = "TOTAL_BUDGET"
    workers: int = 1


@dataclass(frozen=True)
class OutputConfig:
    out_dir: str = "out"
    export_trajectories: bool = False


@dataclass(frozen=True)
class RunConfig:
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    # the file's own text, section -> key -> value, for provenance
    source: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "adversary": dataclasses.asdict(self.adversary),
            "learner": dataclasses.asdict(self.learner),
            "engine": dataclasses.asdict(self.engine),
            "output": dataclasses.asdict(self.output),
        }

    def with_overrides(self, **sections: Mapping[str, Any]) -> RunConfig:
        """Replace fields, e.g. ``with_overrides(engine={"repetitions": 5})``."""
        updated = {}
        for name, values in sections.items():
            current = getattr(self, name)
            updated[name] = dataclasses.replace(current, **values)
        out = dataclasses.replace(self, **updated)
        _validate(out)
        return out


_SECTIONS = {
    "adversary": AdversaryConfig,
    "learner": LearnerConfig,
    "engine": EngineConfig,
    "output": OutputConfig,
}


def _convert(section: str, key: str, text: str, kind: str) -> Any:
    where = f"[{section}] {key}"
    base = kind.replace(" | None", "")
    if kind.endswith("| None") and text.strip().lower() in ("", "none"):
        return None
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "bool":
            v = text.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _validate(cfg: RunConfig) -> None:
    a, lr, e = cfg.adversary, cfg.learner, cfg.engine
    if a.generator not in GENERATORS:
        raise ConfigError(f"[adversary] generator must be one of {GENERATORS}, got {a.generator!r}")
    if a.seed_policy not in SEED_POLICIES:
        raise ConfigError(f"[adversary] seed_policy must be one of {SEED_POLICIES}, got {a.seed_policy!r}")
    if a.generator == "file" and not a.path:
        raise ConfigError("[adversary] generator = file needs a path")
    if lr.mode not in MODES:
        raise ConfigError(f"[learner] mode must be one of {MODES}, got {lr.mode!r}")
    if lr.mode == "flex" and lr.obs_per_batch is None:
        raise ConfigError("[learner] mode = flex needs obs_per_batch")
    if e.setting not in SETTINGS:
        raise ConfigError(f"[engine] setting must be one of {SETTINGS}, got {e.setting!r}")
    if lr.mode == "router" and e.setting != "EXTRA_BUDGET":
        raise ConfigError("[learner] mode = router needs [engine] setting = EXTRA_BUDGET")
    if e.repetitions < 1:
        raise ConfigError("[engine] repetitions must be positive")
    if e.workers < 1:
        raise ConfigError("[engine] workers must be positive")
    if not 0 <= e.base_seed < 1 << 64:
        raise ConfigError("[engine] base_seed must be a 64-bit unsigned integer")


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    source: dict[str, dict[str, str]] = {}
    sections: dict[str, Any] = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]; expected {sorted(_SECTIONS)}")
        cls = _SECTIONS[name]
        fields = {f.name.lower(): f for f in dataclasses.fields(cls)}
        values = {}
        source[name] = dict(parser.items(name))
        for key, text_value in parser.items(name):
            if key not in fields:
                raise ConfigError(f"[{name}] unknown key {key!r}; expected one of {sorted(fields)}")
            f = fields[key]
            values[f.name] = _convert(name, key, text_value, str(f.type))
        sections[name] = cls(**values)
    cfg = RunConfig(**sections, source=source)
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
