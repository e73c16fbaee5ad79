"""
Configuration objects and their loading.

Every section is a frozen dataclass validated against its schema in
`sesiam_helpers.fields` when constructed. A run configuration is resolved with
flag-over-file-over-default precedence and can be echoed as JSON that is itself
a valid config file.
"""

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import fields as flds
from .errors import ConfigError
from .utilities import config_hash


def _matches_datatype(value, datatype) -> bool:
    if datatype is bool:
        return isinstance(value, bool)
    if datatype is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if datatype is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if datatype is list:
        return isinstance(value, (list, tuple))
    return isinstance(value, datatype)


def validate_section(data: Dict, fields_order: Dict, section: str) -> List[str]:
    """
    Validate a config section against its schema.

    Args:
        data (dict): field name -> value.
        fields_order (dict): schema, see `sesiam_helpers.fields`.
        section (str): label used in messages.

    Returns:
        list: one message per problem; empty when the section is valid.
    """
    problems = []
    not_known_fields = [name for name in data if name not in fields_order]
    if not_known_fields:
        problems.append(f"{section} contains not known fields: {not_known_fields}")

    for name, rules in fields_order.items():
        if name not in data:
            continue
        value = data[name]
        if value is None:
            if not rules.get("nullable"):
                problems.append(f"{section} field '{name}' cannot be None")
            continue
        expected_type = rules["datatype"]
        if not _matches_datatype(value, expected_type):
            problems.append(
                f"{section} field '{name}' has incorrect datatype. "
                f"Expected {expected_type.__name__}, found {type(value).__name__}."
            )
            continue
        checker = rules.get("checker")
        if checker:
            check_result = checker(value)
            if check_result is not True:
                problems.append(f"{section} field '{name}': {check_result}")
    return problems


class _Section:
    """Shared behaviour of the config dataclasses."""

    SECTION = ""
    FIELDS_ORDER: Dict = {}

    def __post_init__(self):
        problems = validate_section(self.to_dict(), self.FIELDS_ORDER, self.SECTION)
        problems.extend(self._cross_field_problems() if not problems else [])
        if problems:
            raise ConfigError(self.SECTION, problems)

    def _cross_field_problems(self) -> List[str]:
        return []

    def to_dict(self) -> Dict:
        values = {}
        for item in fields(self):
            value = getattr(self, item.name)
            values[item.name] = list(value) if isinstance(value, tuple) else value
        return values

    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, data: Optional[Dict]):
        data = dict(data or {})
        known = {item.name for item in fields(cls)}
        unknown = [name for name in data if name not in known]
        if unknown:
            raise ConfigError(cls.SECTION, [f"{cls.SECTION} contains not known fields: {unknown}"])
        for name, value in data.items():
            rules = cls.FIELDS_ORDER.get(name, {})
            if isinstance(value, list):
                data[name] = tuple(value)
            elif rules.get("datatype") is float and isinstance(value, int) and not isinstance(value, bool):
                data[name] = float(value)
        return cls(**data)

    def updated(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class ModelConfig(_Section):
    """
    Network shape parameters.

    Defaults give the standard input sizes (239 / 125) and feature sizes
    (w_x = 15, w_z = 7).
    """

    SECTION = "model"
    FIELDS_ORDER = flds.MODEL_FIELDS_ORDER

    template_input: int = 125
    detection_input: int = 239
    w_z: int = 7
    w_x: int = 15
    channels: int = 64
    se_reduction: int = 4
    backbone_id: str = "small"
    stage_widths: Tuple[int, int, int, int] = (16, 32, 48, 64)
    use_se: bool = True

    def _cross_field_problems(self):
        problems = []
        if not self.w_x > self.w_z >= 1:
            problems.append(f"expected w_x > w_z >= 1, got w_x={self.w_x}, w_z={self.w_z}")
        if not self.detection_input > self.template_input:
            problems.append(
                f"detection_input ({self.detection_input}) must exceed "
                f"template_input ({self.template_input})"
            )
        if self.channels % self.se_reduction:
            problems.append(
                f"channels ({self.channels}) must be divisible by "
                f"se_reduction ({self.se_reduction})"
            )
        return problems

    @property
    def response_size(self) -> int:
        return self.w_x - self.w_z + 1


@dataclass(frozen=True)
class TrainConfig(_Section):
    SECTION = "train"
    FIELDS_ORDER = flds.TRAIN_FIELDS_ORDER

    learning_rate: float = 1e-3
    batch_size: int = 80
    epochs: int = 5
    sigma: float = 1.0
    samples_per_epoch: int = 5000
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9
    num_workers: int = 0
    checkpoint_dir: Optional[str] = None

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.samples_per_epoch // self.batch_size)


@dataclass(frozen=True)
class SynthConfig(_Section):
    """
    Synthetic sequence family: a solid rectangle moving at constant velocity
    over a static textured background.

    `object_size`, `start`, `velocity` and `color` pin the corresponding random
    draw when set.
    """

    SECTION = "synth"
    FIELDS_ORDER = flds.SYNTH_FIELDS_ORDER

    sequences: int = 4
    length: int = 50
    frame_width: int = 160
    frame_height: int = 160
    object_size_range: Tuple[int, int] = (24, 40)
    velocity_range: Tuple[float, float] = (-3.0, 3.0)
    noise_sigma: float = 8.0
    color: Optional[Tuple[int, int, int]] = None
    object_size: Optional[Tuple[int, int]] = None
    start: Optional[Tuple[int, int]] = None
    velocity: Optional[Tuple[float, float]] = None
    seed: int = 0

    def _cross_field_problems(self):
        problems = []
        largest = self.object_size_range[1]
        if self.object_size is not None:
            largest = max(self.object_size)
        if largest > min(self.frame_width, self.frame_height):
            problems.append(
                f"object size {largest} px does not fit a "
                f"{self.frame_width}x{self.frame_height} frame"
            )
        if self.object_size_range[0] < 1:
            problems.append("object sizes must be at least 1 px")
        return problems


@dataclass(frozen=True)
class TrackConfig(_Section):
    SECTION = "track"
    FIELDS_ORDER = flds.TRACK_FIELDS_ORDER

    delta: float = 0.5
    reset_skip: int = 5
    warmup: int = 5
    reps: int = 3
    workers: int = 1
    frame_rate: Optional[float] = None
    dump_frames: bool = False


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "track": TrackConfig,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI command needs, loadable from a single JSON file."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    dataset: Optional[str] = None
    sequence: Optional[str] = None
    checkpoint: Optional[str] = None
    out: str = "runs"
    deterministic: bool = False

    def __post_init__(self):
        problems = validate_section(self._paths_dict(), flds.RUN_FIELDS_ORDER, "run")
        if problems:
            raise ConfigError("run", problems)

    def _paths_dict(self) -> Dict:
        return {name: getattr(self, name) for name in flds.RUN_FIELDS_ORDER}

    def to_dict(self) -> Dict:
        data = {name: section.to_dict() for name, section in self._sections().items()}
        data.update(self._paths_dict())
        return data

    def _sections(self) -> Dict:
        return {name: getattr(self, name) for name in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "RunConfig":
        data = dict(data or {})
        unknown = [
            name for name in data if name not in SECTIONS and name not in flds.RUN_FIELDS_ORDER
        ]
        if unknown:
            raise ConfigError("run", [f"run config contains not known fields: {unknown}"])
        kwargs = {
            name: section_cls.from_dict(data.pop(name, None))
            for name, section_cls in SECTIONS.items()
        }
        kwargs.update(data)
        return cls(**kwargs)

    def require_paths(self, *names: str) -> None:
        """Check that the named path fields are set and exist on disk."""
        problems = []
        for name in names:
            value = getattr(self, name)
            if not value:
                problems.append(f"'{name}' is required for this command")
            elif not Path(value).exists():
                problems.append(f"'{name}' path `{value}` does not exist")
        if problems:
            raise ConfigError("run", problems)


def merge_overrides(base: Dict, overrides: Dict) -> Dict:
    """
    Apply `{section: {field: value}}` / `{field: value}` overrides onto a
    config dictionary; None values mean "flag not given" and are skipped.
    """
    merged = json.loads(json.dumps(base))
    for key, value in overrides.items():
        if isinstance(value, dict):
            section = merged.setdefault(key, {})
            section.update({name: item for name, item in value.items() if item is not None})
        elif value is not None:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> RunConfig:
    """
    Resolve a run configuration: defaults, then the JSON file, then overrides.

    Args:
        path (str, optional): JSON config file.
        overrides (dict, optional): values from command-line flags.

    Returns:
        RunConfig: the validated configuration.
    """
    data = RunConfig().to_dict()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as file:
                file_data = json.load(file)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("run", [f"cannot read config file `{path}`: {e}"]) from e
        data = merge_overrides(data, file_data)
    if overrides:
        data = merge_overrides(data, overrides)
    return RunConfig.from_dict(data)
