"""Scenario configuration: schema, strict YAML loading, and round-trip echo.

A scenario file is a YAML mapping with sections ``dataset``, ``partition``,
``model``, ``protocol`` and optional ``attack``, ``poison``, ``defense``,
plus top-level ``trials`` and ``base_seed``. Unknown keys anywhere are
errors; validation failures raise :class:`ConfigError` with the dotted path
of the offending field.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any

import yaml

from fednetsim.adversary import OBSERVATION_KINDS
from fednetsim.defense import SERVER_MODES
from fednetsim.models import ACTIVATIONS
from fednetsim.protocol import DENOMINATOR_MODES

ATTACK_KINDS = ("targeted", "perfect_knowledge", "random_drop")


class ConfigError(ValueError):
    """A scenario configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    class_count: int = 10
    input_dim: int = 10
    per_class: int = 4000
    separation: float = 1.6
    eval_per_class: int = 200
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass(frozen=True)
class PartitionConfig:
    n: int = 60
    k: int = 15
    target_class: int = 0
    alpha_t: float = 0.6
    alpha_d: float = 1.0
    local_size: int = 200


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple[int, ...] = (64,)
    activation: str = "relu"


@dataclass(frozen=True)
class ProtocolSection:
    m: int = 10
    rounds: int = 150
    server_lr: float = 0.25
    local_epochs: int = 2
    local_lr: float = 0.1
    batch_size: int | None = 100
    clip_norm: float | None = None
    denominator_mode: str = "received_count"


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "targeted"
    mode: str = "encrypted"
    t_n: int = 30
    k_n: int = 15
    refresh: bool = True
    target_set_size: int = 100
    visible_size: int | None = None
    alpha_v: float | None = None


@dataclass(frozen=True)
class PoisonConfig:
    k_p: int = 5
    boost: float = 10.0
    flip_to: int | None = None
    start_round: int | None = None


@dataclass(frozen=True)
class DefenseConfig:
    t_s: int = 30
    k_s: int = 15
    upsample_factor: float = 2.0
    server_mode: str = "plain"
    valid_set_size: int = 100
    clip_norm: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    attack: AttackConfig | None = None
    poison: PoisonConfig | None = None
    defense: DefenseConfig | None = None
    trials: int = 4
    base_seed: int = 1234

    def replace(self, **kwargs) -> "ScenarioConfig":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(kwargs)
        return ScenarioConfig(**current)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"]["hidden_dims"] = list(self.model.hidden_dims)
        return {k: v for k, v in out.items()}


_SECTIONS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "model": ModelConfig,
    "protocol": ProtocolSection,
    "attack": AttackConfig,
    "poison": PoisonConfig,
    "defense": DefenseConfig,
}
_OPTIONAL_SECTIONS = ("attack", "poison", "defense")


def _build_section(cls, data: Any, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = dict(data)
    if cls is ModelConfig and "hidden_dims" in kwargs:
        dims = kwargs["hidden_dims"]
        if not isinstance(dims, (list, tuple)) or not all(isinstance(h, int) for h in dims):
            raise ConfigError(f"{path}.hidden_dims: expected a list of integers")
        kwargs["hidden_dims"] = tuple(dims)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from a plain mapping."""
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a mapping")
    allowed = set(_SECTIONS) | {"trials", "base_seed"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"top level: unknown keys {sorted(unknown)}")

    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in _OPTIONAL_SECTIONS:
            kwargs[name] = _build_section(cls, data[name], name) if data.get(name) is not None else None
        else:
            kwargs[name] = _build_section(cls, data.get(name), name)
    cfg = ScenarioConfig(
        **kwargs,
        trials=data.get("trials", 4),
        base_seed=data.get("base_seed", 1234),
    )
    validate_scenario(cfg)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario YAML file."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    with fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        raise ConfigError(f"{path}: empty configuration")
    return scenario_from_dict(data)


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def validate_scenario(cfg: ScenarioConfig):
    """Cross-field consistency checks with field-level messages."""
    ds, part, model, proto = cfg.dataset, cfg.partition, cfg.model, cfg.protocol

    _require(ds.kind in ("synthetic", "idx"), "dataset.kind: must be 'synthetic' or 'idx'")
    if ds.kind == "synthetic":
        _require(ds.class_count >= 2, "dataset.class_count: must be >= 2")
        _require(ds.input_dim >= 1, "dataset.input_dim: must be >= 1")
        _require(ds.per_class >= 1, "dataset.per_class: must be >= 1")
        _require(ds.eval_per_class >= 1, "dataset.eval_per_class: must be >= 1")
        _require(ds.separation >= 0, "dataset.separation: must be >= 0")
    else:
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            _require(getattr(ds, name) is not None, f"dataset.{name}: required for kind 'idx'")

    _require(part.n >= 1, "partition.n: must be >= 1")
    _require(0 <= part.k <= part.n, "partition.k: need 0 <= k <= n")
    _require(0 <= part.target_class < ds.class_count, "partition.target_class: out of range")
    _require(0 < part.alpha_t <= 1, "partition.alpha_t: must be in (0, 1]")
    _require(part.alpha_d > 0, "partition.alpha_d: must be > 0")
    _require(part.local_size >= 1, "partition.local_size: must be >= 1")

    _require(model.activation in ACTIVATIONS, f"model.activation: must be one of {ACTIVATIONS}")
    _require(all(h >= 1 for h in model.hidden_dims), "model.hidden_dims: widths must be >= 1")

    _require(1 <= proto.m <= part.n, "protocol.m: need 1 <= m <= n")
    _require(proto.rounds >= 1, "protocol.rounds: must be >= 1")
    _require(proto.server_lr > 0, "protocol.server_lr: must be > 0")
    _require(proto.local_epochs >= 0, "protocol.local_epochs: must be >= 0")
    _require(proto.local_lr > 0, "protocol.local_lr: must be > 0")
    _require(
        proto.batch_size is None or proto.batch_size >= 1,
        "protocol.batch_size: must be >= 1 when set",
    )
    _require(
        proto.clip_norm is None or proto.clip_norm > 0,
        "protocol.clip_norm: must be > 0 when set",
    )
    _require(
        proto.denominator_mode in DENOMINATOR_MODES,
        f"protocol.denominator_mode: must be one of {DENOMINATOR_MODES}",
    )

    if cfg.attack is not None:
        atk = cfg.attack
        _require(atk.kind in ATTACK_KINDS, f"attack.kind: must be one of {ATTACK_KINDS}")
        _require(atk.k_n >= 0, "attack.k_n: must be >= 0")
        _require(atk.k_n <= part.n, "attack.k_n: cannot exceed n")
        if atk.kind == "targeted":
            _require(atk.mode in OBSERVATION_KINDS, f"attack.mode: must be one of {OBSERVATION_KINDS}")
            _require(atk.t_n >= 1, "attack.t_n: must be >= 1")
            _require(atk.target_set_size >= 1, "attack.target_set_size: must be >= 1")
            if atk.mode == "encrypted_limited":
                _require(
                    atk.visible_size is not None and 1 <= atk.visible_size <= part.n,
                    "attack.visible_size: need 1 <= visible_size <= n for encrypted_limited",
                )
                _require(
                    atk.alpha_v is not None and atk.alpha_v > 0,
                    "attack.alpha_v: must be > 0 for encrypted_limited",
                )
        elif atk.kind == "perfect_knowledge":
            _require(atk.k_n <= part.k, "attack.k_n: perfect knowledge drops at most k target clients")

    if cfg.poison is not None:
        poi = cfg.poison
        _require(poi.k_p >= 0, "poison.k_p: must be >= 0")
        _require(poi.k_p + part.k <= part.n, "poison.k_p: need k + k_p <= n")
        _require(poi.boost > 0, "poison.boost: must be > 0")
        if poi.flip_to is not None:
            _require(
                0 <= poi.flip_to < ds.class_count and poi.flip_to != part.target_class,
                "poison.flip_to: must be a non-target class id",
            )
        if poi.start_round is None:
            _require(
                cfg.attack is not None and cfg.attack.kind == "targeted",
                "poison.start_round: required when no targeted attack provides t_n",
            )
        else:
            _require(poi.start_round >= 0, "poison.start_round: must be >= 0")

    if cfg.defense is not None:
        dfn = cfg.defense
        _require(dfn.t_s >= 1, "defense.t_s: must be >= 1")
        _require(dfn.k_s >= 0, "defense.k_s: must be >= 0")
        _require(dfn.upsample_factor >= 1, "defense.upsample_factor: must be >= 1")
        _require(
            dfn.k_s * dfn.upsample_factor < part.n,
            "defense.k_s: need k_s * upsample_factor < n",
        )
        _require(dfn.server_mode in SERVER_MODES, f"defense.server_mode: must be one of {SERVER_MODES}")
        _require(dfn.valid_set_size >= 1, "defense.valid_set_size: must be >= 1")
        _require(
            dfn.clip_norm is None or dfn.clip_norm > 0,
            "defense.clip_norm: must be > 0 when set",
        )

    _require(cfg.trials >= 1, "trials: must be >= 1")
    _require(cfg.base_seed >= 0, "base_seed: must be >= 0")
