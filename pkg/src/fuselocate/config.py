"""Declarative experiment configuration.

One JSON document describes a whole experiment: the floor geometry, radio
and sensor models, fingerprint training, fusion tuning and the run matrix
(floors x directions x methods).  Loading is strict (unknown keys and type
mismatches are rejected with the offending field path), every field has a
default, and the fully resolved tree can be echoed back out and hashed so
artifacts are traceable to the exact configuration that produced them.

Dotted-path overrides (``sensors.lidar_beams=120``) patch the tree after
loading; values are parsed as JSON first, falling back to a bare string.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Optional

from .ekf import DEFAULT_P0_DIAG, FusionConfig
from .fingerprint import DEFAULT_HIDDEN, TrainConfig
from .sensors import ImuErrorModel, LidarConfig, RadioNoise
from .world import ApLayout, CorridorSpec, MotionProfile

DIRECTIONS = ("forward", "backward")
METHODS = ("WiFi", "LidarImu", "EKF")


class ConfigError(ValueError):
    """Invalid configuration content (bad key, type or value)."""


@dataclass(frozen=True)
class WorldSettings:
    """Floor geometry and the ground-truth motion profile."""

    outer_width_m: float = 12.4
    outer_height_m: float = 12.4
    corridor_width_m: float = 2.0
    wall_thickness_m: float = 0.2
    resolution_m: float = 0.05
    cruise_speed_mps: float = 0.5
    accel_mps2: float = 0.5
    turn_rate_radps: float = math.pi / 2
    sample_dt_s: float = 0.01

    def corridor_spec(self) -> CorridorSpec:
        return CorridorSpec(self.outer_width_m, self.outer_height_m,
                            self.corridor_width_m, self.wall_thickness_m)

    def motion_profile(self) -> MotionProfile:
        return MotionProfile(self.cruise_speed_mps, self.accel_mps2,
                             self.turn_rate_radps)


@dataclass(frozen=True)
class RadioSettings:
    """Access-point deployment and the RSSI channel."""

    ap_count: int = 24
    ap_layout: str = ApLayout.PERIMETER
    tx_power_dbm: float = -40.0
    path_loss_exponent: float = 2.5
    shadowing_sigma_db: float = 2.0
    wall_loss_db: float = 6.0
    dropout_prob: float = 0.02

    def radio_noise(self) -> RadioNoise:
        return RadioNoise(self.shadowing_sigma_db, self.wall_loss_db,
                          self.dropout_prob)


@dataclass(frozen=True)
class SensorSettings:
    """Sample rates and error models for the on-board sensors."""

    imu_rate_hz: float = 100.0
    accel_noise_std: float = 0.02
    gyro_noise_std: float = 0.002
    accel_bias_x: float = 0.006
    gyro_bias_z: float = 0.012
    lidar_rate_hz: float = 10.0
    lidar_beams: int = 90
    lidar_fov_deg: float = 360.0
    lidar_max_range_m: float = 4.0
    lidar_range_sigma_m: float = 0.02
    wifi_rate_hz: float = 1.0

    def imu_model(self) -> ImuErrorModel:
        return ImuErrorModel.planar(accel_bias_x=self.accel_bias_x,
                                    gyro_bias_z=self.gyro_bias_z,
                                    accel_noise_std=self.accel_noise_std,
                                    gyro_noise_std=self.gyro_noise_std)

    def lidar_config(self) -> LidarConfig:
        return LidarConfig(beams=self.lidar_beams,
                           fov_rad=math.radians(self.lidar_fov_deg),
                           max_range_m=self.lidar_max_range_m,
                           range_sigma_m=self.lidar_range_sigma_m)


@dataclass(frozen=True)
class FingerprintSettings:
    """Survey lattice and MLP training hyperparameters."""

    rp_spacing_m: float = 0.5
    samples_per_rp: int = 3
    epochs: int = 160
    batch_size: int = 64
    learning_rate: float = 2e-3
    dropout_rate: float = 0.2
    split_ratio: float = 0.8
    hidden: tuple = DEFAULT_HIDDEN
    knn_k: int = 3

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate,
                           dropout_rate=self.dropout_rate,
                           split_ratio=self.split_ratio,
                           hidden=tuple(self.hidden), seed=seed)


@dataclass(frozen=True)
class FusionSettings:
    """EKF tuning plus the position-fix noise assigned to Wi-Fi fixes."""

    q_diag: tuple = (1e-6, 1e-6, 1e-3, 1e-3, 1e-3)
    p0_diag: tuple = DEFAULT_P0_DIAG
    wifi_sigma_m: float = 0.8
    gate_md2: Optional[float] = None

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(q_diag=tuple(self.q_diag),
                            p0_diag=tuple(self.p0_diag),
                            gate_md2=self.gate_md2)


@dataclass(frozen=True)
class RunMatrix:
    """Which floors, travel directions and estimators to run."""

    floors: tuple = (6, 7, 8)
    directions: tuple = DIRECTIONS
    methods: tuple = METHODS


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    out_dir: str = "out"
    world: WorldSettings = field(default_factory=WorldSettings)
    radio: RadioSettings = field(default_factory=RadioSettings)
    sensors: SensorSettings = field(default_factory=SensorSettings)
    fingerprint: FingerprintSettings = field(default_factory=FingerprintSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    runs: RunMatrix = field(default_factory=RunMatrix)


# ---------------------------------------------------------------------------
# dict <-> dataclass with strict keys and default-driven coercion

_TUPLE_ELEM = {
    "hidden": int,
    "floors": int,
    "q_diag": float,
    "p0_diag": float,
    "directions": str,
    "methods": str,
}


def _coerce_scalar(value, want: type, path: str):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported value {value!r}")


def _coerce_field(cls, name: str, value, path: str):
    """Coerce a raw JSON value onto a dataclass field, keyed by its default."""
    default = getattr(_defaults(cls), name)
    if name == "gate_md2":
        if value is None:
            return None
        return _coerce_scalar(value, float, path)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        elem = _TUPLE_ELEM.get(name, float)
        return tuple(_coerce_scalar(v, elem, f"{path}[{i}]")
                     for i, v in enumerate(value))
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float):
        return _coerce_scalar(value, float, path)
    if isinstance(default, int):
        return _coerce_scalar(value, int, path)
    if isinstance(default, str):
        return _coerce_scalar(value, str, path)
    raise ConfigError(f"{path}: unsupported field")


_DEFAULT_CACHE = {}


def _defaults(cls):
    if cls not in _DEFAULT_CACHE:
        _DEFAULT_CACHE[cls] = cls()
    return _DEFAULT_CACHE[cls]


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {data!r}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        child = f"{path}.{key}" if path else key
        if key not in known:
            hint = ", ".join(sorted(known))
            raise ConfigError(f"unknown key '{child}' (known: {hint})")
        sub = getattr(_defaults(cls), key)
        if is_dataclass(sub):
            kwargs[key] = _build(type(sub), value, child)
        else:
            kwargs[key] = _coerce_field(cls, key, value, child)
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a plain dict, rejecting unknown keys."""
    cfg = _build(ExperimentConfig, data, "")
    validate_config(cfg)
    return cfg


def config_to_dict(config: ExperimentConfig) -> dict:
    """Fully resolved tree: every field present, defaults included."""

    def convert(obj):
        if is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    return convert(config)


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(data)


def apply_overrides(config: ExperimentConfig, assignments) -> ExperimentConfig:
    """Apply ``section.field=value`` strings on top of a config.

    Values are parsed as JSON when possible (numbers, lists, null) and kept
    as bare strings otherwise, so ``runs.directions=["forward"]`` and
    ``radio.ap_layout=Perimeter`` both work.
    """
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        config = _set_path(config, parts, value, key)
    validate_config(config)
    return config


def _set_path(node, parts, value, full_key):
    name = parts[0]
    known = {f.name for f in fields(node)}
    if name not in known:
        raise ConfigError(f"unknown key '{full_key}' (no field '{name}' "
                          f"in {type(node).__name__})")
    current = getattr(node, name)
    if len(parts) == 1:
        if is_dataclass(current):
            raise ConfigError(f"'{full_key}' is a section, not a value")
        new = _coerce_field(type(node), name, value, full_key)
        return replace(node, **{name: new})
    if not is_dataclass(current):
        raise ConfigError(f"'{full_key}': '{name}' has no sub-fields")
    return replace(node, **{name: _set_path(current, parts[1:], value, full_key)})


# ---------------------------------------------------------------------------
# validation

def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _check_multiple(length: float, resolution: float, path: str) -> None:
    n = length / resolution
    _require(n >= 1 - 1e-9 and abs(n - round(n)) <= 1e-6, path,
             f"{length} m is not a positive multiple of the grid "
             f"resolution ({resolution} m)")


def validate_config(config: ExperimentConfig) -> None:
    """Raise ConfigError (with a field path) on the first bad value."""
    _require(config.master_seed >= 0, "master_seed", "must be non-negative")

    w = config.world
    for name in ("outer_width_m", "outer_height_m", "corridor_width_m",
                 "wall_thickness_m", "resolution_m", "cruise_speed_mps",
                 "accel_mps2", "turn_rate_radps", "sample_dt_s"):
        _require(getattr(w, name) > 0, f"world.{name}", "must be positive")
    for name in ("outer_width_m", "outer_height_m", "corridor_width_m",
                 "wall_thickness_m"):
        _check_multiple(getattr(w, name), w.resolution_m, f"world.{name}")
    _require(2 * (w.wall_thickness_m + w.corridor_width_m)
             < min(w.outer_width_m, w.outer_height_m) + 1e-9,
             "world.corridor_width_m",
             "corridor ring does not fit inside the outer footprint")

    r = config.radio
    _require(r.ap_count >= 1, "radio.ap_count", "must be at least 1")
    _require(r.ap_layout in ApLayout.ALL, "radio.ap_layout",
             f"must be one of {ApLayout.ALL}")
    _require(1.5 <= r.path_loss_exponent <= 6.0, "radio.path_loss_exponent",
             "must lie in [1.5, 6.0]")
    _require(r.shadowing_sigma_db >= 0, "radio.shadowing_sigma_db",
             "must be non-negative")
    _require(r.wall_loss_db >= 0, "radio.wall_loss_db", "must be non-negative")
    _require(0.0 <= r.dropout_prob <= 1.0, "radio.dropout_prob",
             "must lie in [0, 1]")

    s = config.sensors
    for name in ("imu_rate_hz", "lidar_rate_hz", "wifi_rate_hz",
                 "lidar_max_range_m"):
        _require(getattr(s, name) > 0, f"sensors.{name}", "must be positive")
    for name in ("accel_noise_std", "gyro_noise_std",
                 "lidar_range_sigma_m"):
        _require(getattr(s, name) >= 0, f"sensors.{name}",
                 "must be non-negative")
    _require(s.lidar_beams >= 1, "sensors.lidar_beams", "must be at least 1")
    _require(0 < s.lidar_fov_deg <= 360.0, "sensors.lidar_fov_deg",
             "must lie in (0, 360]")

    fp = config.fingerprint
    _require(fp.rp_spacing_m > 0, "fingerprint.rp_spacing_m",
             "must be positive")
    _require(fp.samples_per_rp >= 1, "fingerprint.samples_per_rp",
             "must be at least 1")
    _require(fp.knn_k >= 1, "fingerprint.knn_k", "must be at least 1")
    _require(len(fp.hidden) >= 1, "fingerprint.hidden",
             "needs at least one layer")
    _require(all(n >= 1 for n in fp.hidden), "fingerprint.hidden",
             "layer widths must be at least 1")
    try:
        fp.train_config(seed=0)
    except ValueError as exc:
        raise ConfigError(f"fingerprint: {exc}") from exc

    fu = config.fusion
    for name in ("q_diag", "p0_diag"):
        diag = getattr(fu, name)
        _require(len(diag) == 5, f"fusion.{name}", "must have 5 entries")
        _require(all(v > 0 for v in diag), f"fusion.{name}",
                 "entries must be positive")
    _require(fu.wifi_sigma_m > 0, "fusion.wifi_sigma_m", "must be positive")
    if fu.gate_md2 is not None:
        _require(fu.gate_md2 > 0, "fusion.gate_md2",
                 "must be positive (or null to disable)")

    m = config.runs
    _require(len(m.floors) >= 1, "runs.floors", "must not be empty")
    _require(len(set(m.floors)) == len(m.floors), "runs.floors",
             "must not repeat")
    _require(len(m.directions) >= 1, "runs.directions", "must not be empty")
    _require(len(set(m.directions)) == len(m.directions), "runs.directions",
             "must not repeat")
    for d in m.directions:
        _require(d in DIRECTIONS, "runs.directions",
                 f"'{d}' is not one of {DIRECTIONS}")
    _require(len(m.methods) >= 1, "runs.methods", "must not be empty")
    _require(len(set(m.methods)) == len(m.methods), "runs.methods",
             "must not repeat")
    for meth in m.methods:
        _require(meth in METHODS, "runs.methods",
                 f"'{meth}' is not one of {METHODS}")


def config_hash(config: ExperimentConfig) -> str:
    """Stable content hash of the fully resolved configuration."""
    text = json.dumps(config_to_dict(config), sort_keys=True,
                      separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()
