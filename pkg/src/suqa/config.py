"""RunConfig: one structured config for every CLI command.

A config file is JSON with one object per section. Unknown keys and
wrongly typed values are rejected before anything runs. The resolved
config (defaults filled in) is embedded in every artifact the CLI writes,
together with a content hash of the inputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from suqa import remote
from suqa.corpus import SyntheticSpec
from suqa.errors import InvalidArgument
from suqa.explainer.model import ModelConfig
from suqa.explainer.training import RLRunConfig, TrainConfig
from suqa.pipeline import PipelineConfig
from suqa.ranker import RankerConfig
from suqa.rewards import RLConfig

ORACLE_KINDS = ("synthetic_rule", "span_matcher", "remote")


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "synthetic_rule"
    endpoint: str | None = None
    timeout: float = remote.DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.kind not in ORACLE_KINDS:
            raise InvalidArgument(f"oracle kind must be one of {ORACLE_KINDS}, got {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise InvalidArgument("a remote oracle needs an endpoint")
        if self.timeout <= 0:
            raise InvalidArgument("oracle timeout must be > 0")


@dataclass(frozen=True)
class DataConfig:
    """Which instances carry gold explanations, and which R4C annotator to use."""

    annotate_fraction: float = 1.0
    annotate_seed: int = 0
    r4c_annotator: int = 0
    split_fractions: tuple[float, ...] = (0.8, 0.1, 0.1)

    def __post_init__(self) -> None:
        if not 0.0 <= self.annotate_fraction <= 1.0:
            raise InvalidArgument("annotate_fraction must lie in [0, 1]")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise InvalidArgument("split_fractions needs three nonnegative values")
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))


SECTIONS: dict[str, type] = {
    "synthetic": SyntheticSpec,
    "data": DataConfig,
    "ranker": RankerConfig,
    "model": ModelConfig,
    "supervised": TrainConfig,
    "rl": RLConfig,
    "rl_run": RLRunConfig,
    "pipeline": PipelineConfig,
    "oracle": OracleConfig,
}


@dataclass
class RunConfig:
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    data: DataConfig = field(default_factory=DataConfig)
    ranker: RankerConfig = field(default_factory=RankerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    supervised: TrainConfig = field(default_factory=TrainConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    rl_run: RLRunConfig = field(default_factory=RLRunConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    # Training-time oracle; evaluation uses ``eval_oracle`` when given.
    oracle: OracleConfig | None = field(default_factory=OracleConfig)
    eval_oracle: OracleConfig | None = None
    acceptability_endpoint: str = "builtin"

    @property
    def resolved_eval_oracle(self) -> OracleConfig | None:
        return self.eval_oracle or self.oracle

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = asdict(value) if dataclasses.is_dataclass(value) else value
        return _jsonable(out)

    def digest(self) -> str:
        return sha256_json(self.to_dict())

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(raw, Mapping):
            raise InvalidArgument("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidArgument(f"unknown config sections: {unknown}")
        kwargs: dict[str, Any] = {}
        for name, value in raw.items():
            if name == "acceptability_endpoint":
                _check_type("acceptability_endpoint", value, str)
                kwargs[name] = value
            elif name in ("oracle", "eval_oracle"):
                kwargs[name] = None if value is None else build_section(OracleConfig, value, name)
            else:
                kwargs[name] = build_section(SECTIONS[name], value, name)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def override(self, section: str, **values: Any) -> "RunConfig":
        """Copy with some fields of one section replaced (CLI flags)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        merged = {**(asdict(current) if current is not None else {}), **values}
        cls = OracleConfig if section in ("oracle", "eval_oracle") else SECTIONS[section]
        return dataclasses.replace(self, **{section: build_section(cls, merged, section)})


def build_section(cls: type, raw: Any, where: str):
    if not isinstance(raw, Mapping):
        raise InvalidArgument(f"config section {where!r} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise InvalidArgument(f"unknown keys in {where!r}: {unknown}")
    for key, value in raw.items():
        _check_type(f"{where}.{key}", value, hints[key])
    return cls(**raw)


def _check_type(where: str, value: Any, hint: Any) -> None:
    if not _matches(value, hint):
        raise InvalidArgument(f"{where}: expected {_hint_name(hint)}, got {type(value).__name__} {value!r}")


def _matches(value: Any, hint: Any) -> bool:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        return any(_matches(value, h) for h in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            return False
        args = [a for a in typing.get_args(hint) if a is not Ellipsis]
        return all(_matches(v, args[0]) for v in value) if args else True
    return True


def _hint_name(hint: Any) -> str:
    return getattr(hint, "__name__", None) or str(hint)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def sha256_json(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


def hash_files(paths) -> str:
    """Git-style content hash over input files (order-insensitive on names)."""
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        data = Path(p).read_bytes()
        h.update(f"blob {len(data)}\0".encode("utf-8"))
        h.update(data)
    return h.hexdigest()
