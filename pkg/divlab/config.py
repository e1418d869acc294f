"""Diversification settings and their TOML key=value file format.

    seed = 7
    p_nop = 0.25
    max_garbage_len = 2
    enable.obfuscate_data = false
    garbage_mix.mul = 3.0
"""
import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Mapping

from divlab.errors import ConfigError
from divlab.isa import ARITHMETIC

PASSES = ("obfuscate_data", "substitute", "garbage", "nops", "reorder", "registers", "blocks", "strip")
PROBABILITIES = ("p_substitute", "p_reorder", "p_nop", "p_garbage", "p_split")
# every pass except data obfuscation and garbage: the set canonicalization undoes
COLLAPSIBLE = ("substitute", "nops", "reorder", "registers", "blocks", "strip")


def _all_enabled():
    return {name: True for name in PASSES}


def _equal_mix():
    return {m: 1.0 for m in ARITHMETIC}


@dataclass(frozen=True)
class DiversityConfig:
    seed: int = 0
    p_substitute: float = 0.5
    p_reorder: float = 0.5
    p_nop: float = 0.5
    p_garbage: float = 0.5
    p_split: float = 0.5
    max_garbage_len: int = 3
    strip_symbols: bool = True
    enable: Mapping[str, bool] = field(default_factory=_all_enabled)
    identity: bool = False
    emit_empty_decoder: bool = True
    garbage_mix: Mapping[str, float] = field(default_factory=_equal_mix)

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed < (1 << 64):
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        for name in PROBABILITIES:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be within [0, 1], got {value!r}")
        if not isinstance(self.max_garbage_len, int) or self.max_garbage_len < 1:
            raise ConfigError(f"max_garbage_len must be >= 1, got {self.max_garbage_len!r}")
        unknown = set(self.enable) - set(PASSES)
        if unknown:
            raise ConfigError(f"unknown pass names: {sorted(unknown)}")
        merged = _all_enabled()
        merged.update({k: bool(v) for k, v in self.enable.items()})
        object.__setattr__(self, "enable", merged)
        bad = set(self.garbage_mix) - set(ARITHMETIC)
        if bad:
            raise ConfigError(f"garbage_mix names non-arithmetic mnemonics: {sorted(bad)}")
        if any(w < 0 for w in self.garbage_mix.values()) or sum(self.garbage_mix.values()) <= 0:
            raise ConfigError("garbage_mix weights must be non-negative with a positive sum")

    def enabled(self, name):
        if name == "strip":
            return self.enable["strip"] and self.strip_symbols
        return self.enable[name]

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["enable"] = dict(sorted(self.enable.items()))
        out["garbage_mix"] = dict(sorted(self.garbage_mix.items()))
        return out

    def digest(self):
        """Identifies the settings independent of the seed."""
        body = self.to_dict()
        body.pop("seed")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def from_mapping(values: Mapping[str, Any], base: DiversityConfig = None) -> DiversityConfig:
    base = base or DiversityConfig()
    known = set(DiversityConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    changes = dict(values)
    if "enable" in changes:
        if not isinstance(changes["enable"], Mapping):
            raise ConfigError("enable must be a table of pass flags")
        changes["enable"] = {**base.enable, **changes["enable"]}
    if "garbage_mix" in changes:
        if not isinstance(changes["garbage_mix"], Mapping):
            raise ConfigError("garbage_mix must be a table of weights")
        changes["garbage_mix"] = {**base.garbage_mix, **changes["garbage_mix"]}
    try:
        return replace(base, **changes)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path, base: DiversityConfig = None) -> DiversityConfig:
    try:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return from_mapping(values, base)


def parse_config(text: str, base: DiversityConfig = None) -> DiversityConfig:
    try:
        values = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(str(e)) from e
    return from_mapping(values, base)


def collapse_config(seed=0) -> DiversityConfig:
    """Only the passes canonicalization is expected to undo."""
    return DiversityConfig(seed=seed, enable={name: name in COLLAPSIBLE for name in PASSES})


def identity_config(seed=0) -> DiversityConfig:
    return DiversityConfig(seed=seed, identity=True)
