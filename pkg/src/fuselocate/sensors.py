"""Sensor simulation on top of a world: IMU, LiDAR and Wi-Fi RSSI.

All simulators take an explicit generator and draw a fixed number of
variates per call regardless of parameter values (noise is drawn even at
sigma = 0), so configurations differing only in noise levels consume the
random stream identically.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .fileio import float_column, read_csv, write_csv
from .world import OccupancyGrid, Pose2D

RSSI_MISSING_DBM = -110.0
RSSI_DETECT_FLOOR_DBM = -105.0


@dataclass(frozen=True)
class RadioNoise:
    """Propagation nuisance parameters for the RSSI channel."""

    shadowing_sigma_db: float = 3.0
    wall_loss_db: float = 6.0
    dropout_prob: float = 0.02

    def __post_init__(self):
        if self.shadowing_sigma_db < 0 or self.wall_loss_db < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")


def simulate_rssi(aps, grid: OccupancyGrid, pose: Pose2D, noise: RadioNoise,
                  rng: np.random.Generator, d0: float = 1.0) -> np.ndarray:
    """One RSSI vector (dBm, one entry per AP) at the given pose.

    Log-distance path loss with per-AP exponent, a per-wall penetration
    penalty (counted per wall crossed, not per cell), lognormal shadowing,
    and random dropout.  Readings below the detection floor and dropped
    readings are reported as RSSI_MISSING_DBM.
    """
    if not grid.is_free(pose.x, pose.y):
        raise ValueError(
            f"pose ({pose.x:.3f}, {pose.y:.3f}) is not in free space"
        )
    m = len(aps)
    if m == 0:
        raise ValueError("need at least one access point")
    ax = np.array([ap.x for ap in aps])
    ay = np.array([ap.y for ap in aps])
    tx = np.array([ap.tx_power_dbm for ap in aps])
    exp = np.array([ap.path_loss_exponent for ap in aps])
    d = np.hypot(ax - pose.x, ay - pose.y)
    d = np.maximum(d, 1e-3)
    walls = kernels.count_wall_crossings(
        grid.wall_mask, grid.origin[0], grid.origin[1], grid.resolution,
        pose.x, pose.y, np.column_stack([ax, ay]),
    )
    shadow = rng.standard_normal(m) * noise.shadowing_sigma_db
    dropped = rng.random(m) < noise.dropout_prob
    rssi = tx - 10.0 * exp * np.log10(d / d0) - noise.wall_loss_db * walls + shadow
    rssi = np.minimum(rssi, 0.0)
    rssi[rssi < RSSI_DETECT_FLOOR_DBM] = RSSI_MISSING_DBM
    rssi[dropped] = RSSI_MISSING_DBM
    return rssi


def rssi_all_missing(rssi) -> bool:
    """True when no AP was heard (prediction from this vector is guesswork)."""
    return bool(np.all(np.asarray(rssi) == RSSI_MISSING_DBM))


# ---------------------------------------------------------------------------
# IMU


class ImuSample(NamedTuple):
    t: float
    accel: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class ImuErrorModel:
    """Constant biases plus white noise, applied per axis."""

    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_noise_std: float = 0.0
    gyro_noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "accel_bias",
                           np.asarray(self.accel_bias, np.float64).reshape(3))
        object.__setattr__(self, "gyro_bias",
                           np.asarray(self.gyro_bias, np.float64).reshape(3))
        if self.accel_noise_std < 0 or self.gyro_noise_std < 0:
            raise ValueError("noise magnitudes must be non-negative")

    @classmethod
    def ideal(cls) -> "ImuErrorModel":
        return cls()

    @classmethod
    def planar(cls, accel_bias_x=0.0, gyro_bias_z=0.0,
               accel_noise_std=0.0, gyro_noise_std=0.0) -> "ImuErrorModel":
        return cls(accel_bias=np.array([accel_bias_x, 0.0, 0.0]),
                   gyro_bias=np.array([0.0, 0.0, gyro_bias_z]),
                   accel_noise_std=accel_noise_std,
                   gyro_noise_std=gyro_noise_std)


@dataclass(eq=False)
class ImuStream:
    """Uniformly sampled accelerometer + gyroscope readings."""

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, np.float64)
        self.accel = np.asarray(self.accel, np.float64)
        self.gyro = np.asarray(self.gyro, np.float64)
        n = len(self.t)
        if self.accel.shape != (n, 3) or self.gyro.shape != (n, 3):
            raise ValueError("accel and gyro must have shape (n, 3)")
        if n == 0:
            raise ValueError("IMU stream must contain at least one sample")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("IMU timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.t[i]), self.accel[i].copy(), self.gyro[i].copy())


def simulate_imu(truth, model: ImuErrorModel, rate_hz: float,
                 rng: np.random.Generator) -> ImuStream:
    """Resample ground-truth kinematics onto the IMU clock and corrupt them.

    The body frame is planar: true specific force is [a, 0, 0] (tangential
    acceleration on x) and true angular rate is [0, 0, omega].  Sample count
    is ceil(duration * rate) + 1 with timestamps t0 + k / rate exactly.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    t0 = float(truth.t[0])
    duration = float(truth.t[-1] - truth.t[0])
    n = int(math.ceil(duration * rate_hz - 1e-9)) + 1
    t = t0 + np.arange(n) / rate_hz
    a_true = np.interp(t, truth.t, truth.a)
    w_true = np.interp(t, truth.t, truth.omega)
    accel = np.zeros((n, 3))
    gyro = np.zeros((n, 3))
    accel[:, 0] = a_true
    gyro[:, 2] = w_true
    accel += model.accel_bias[None, :]
    gyro += model.gyro_bias[None, :]
    accel += rng.standard_normal((n, 3)) * model.accel_noise_std
    gyro += rng.standard_normal((n, 3)) * model.gyro_noise_std
    return ImuStream(t=t, accel=accel, gyro=gyro)


# ---------------------------------------------------------------------------
# LiDAR


@dataclass(frozen=True)
class LidarConfig:
    beams: int = 180
    fov_rad: float = 2.0 * math.pi
    max_range_m: float = 12.0
    range_sigma_m: float = 0.02

    def __post_init__(self):
        if self.beams < 1:
            raise ValueError("beams must be at least 1")
        if not 0.0 < self.fov_rad <= 2.0 * math.pi + 1e-12:
            raise ValueError("fov_rad must lie in (0, 2*pi]")
        if self.max_range_m <= 0:
            raise ValueError("max_range_m must be positive")
        if self.range_sigma_m < 0:
            raise ValueError("range_sigma_m must be non-negative")

    def beam_angles(self) -> np.ndarray:
        """Sensor-frame beam angles, evenly spaced, half-open on the right."""
        step = self.fov_rad / self.beams
        return -0.5 * self.fov_rad + step * np.arange(self.beams)


@dataclass(eq=False)
class LidarScan:
    """One revolution of range returns; misses read exactly max_range."""

    t: float
    angles: np.ndarray
    ranges: np.ndarray
    max_range: float

    def __post_init__(self):
        self.angles = np.asarray(self.angles, np.float64)
        self.ranges = np.asarray(self.ranges, np.float64)
        if self.angles.shape != self.ranges.shape:
            raise ValueError("angles and ranges must have the same shape")
        if np.any(self.ranges <= 0) or np.any(self.ranges > self.max_range):
            raise ValueError("ranges must lie in (0, max_range]")

    @property
    def hits(self) -> np.ndarray:
        return self.ranges < self.max_range

    def __len__(self) -> int:
        return len(self.angles)


def simulate_lidar(grid: OccupancyGrid, pose: Pose2D, config: LidarConfig,
                   rng: np.random.Generator, t: float = 0.0) -> LidarScan:
    """Cast one scan from the pose; beams rotate with the heading."""
    if not grid.is_free(pose.x, pose.y):
        raise ValueError(
            f"pose ({pose.x:.3f}, {pose.y:.3f}) is not in free space"
        )
    sensor_angles = config.beam_angles()
    world_angles = pose.theta + sensor_angles
    ranges = kernels.cast_rays(
        grid.wall_mask, grid.origin[0], grid.origin[1], grid.resolution,
        pose.x, pose.y, world_angles, config.max_range_m,
    )
    noise = rng.standard_normal(config.beams) * config.range_sigma_m
    hit = ranges < config.max_range_m
    noisy = np.where(hit, ranges + noise, ranges)
    noisy = np.clip(noisy, 1e-6, config.max_range_m)
    return LidarScan(t=t, angles=sensor_angles, ranges=noisy,
                     max_range=config.max_range_m)


# ---------------------------------------------------------------------------
# stream I/O

_IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]


def write_imu_csv(stream: ImuStream, path) -> None:
    write_csv(path, _IMU_HEADER, [
        stream.t,
        stream.accel[:, 0], stream.accel[:, 1], stream.accel[:, 2],
        stream.gyro[:, 0], stream.gyro[:, 1], stream.gyro[:, 2],
    ])


def read_imu_csv(path) -> ImuStream:
    _, cols = read_csv(path, _IMU_HEADER)
    t = float_column(cols[0])
    accel = np.column_stack([float_column(c) for c in cols[1:4]])
    gyro = np.column_stack([float_column(c) for c in cols[4:7]])
    return ImuStream(t=t, accel=accel, gyro=gyro)


def write_rssi_csv(times, matrix, path) -> None:
    matrix = np.asarray(matrix, np.float64)
    header = ["t"] + [f"rssi_{i}" for i in range(matrix.shape[1])]
    write_csv(path, header, [np.asarray(times)] +
              [matrix[:, i] for i in range(matrix.shape[1])])


def read_rssi_csv(path):
    header, cols = read_csv(path)
    if not header or header[0] != "t" or any(
        h != f"rssi_{i}" for i, h in enumerate(header[1:])
    ):
        raise ValueError(f"{path}: unexpected RSSI csv header {header!r}")
    times = float_column(cols[0])
    matrix = (np.column_stack([float_column(c) for c in cols[1:]])
              if len(cols) > 1 else np.zeros((len(times), 0)))
    return times, matrix


_SCAN_HEADER = ["t", "beam", "angle", "range", "max_range"]


def write_scans_csv(scans, path) -> None:
    ts, beams, angles, ranges, maxr = [], [], [], [], []
    for scan in scans:
        for b in range(len(scan)):
            ts.append(scan.t)
            beams.append(b)
            angles.append(scan.angles[b])
            ranges.append(scan.ranges[b])
            maxr.append(scan.max_range)
    write_csv(path, _SCAN_HEADER, [ts, beams, angles, ranges, maxr])


def read_scans_csv(path) -> list:
    _, cols = read_csv(path, _SCAN_HEADER)
    t = float_column(cols[0])
    angle = float_column(cols[2])
    rng_col = float_column(cols[3])
    maxr = float_column(cols[4])
    scans = []
    if len(t) == 0:
        return scans
    start = 0
    for i in range(1, len(t) + 1):
        if i == len(t) or t[i] != t[start]:
            scans.append(LidarScan(t=float(t[start]),
                                   angles=angle[start:i],
                                   ranges=rng_col[start:i],
                                   max_range=float(maxr[start])))
            start = i
    return scans
