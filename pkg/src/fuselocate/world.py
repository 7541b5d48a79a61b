"""Synthetic corridor worlds: occupancy grids, robot paths and access points.

A floor is a rectangular outer wall enclosing a ring corridor around a solid
core, discretized on a regular grid.  Ground-truth motion follows waypoint
legs with a trapezoidal speed profile and rotate-in-place turns, which keeps
every sample kinematically consistent (the EKF and dead-reckoning tests rely
on that).
"""

import math
from dataclasses import dataclass

import numpy as np

from .fileio import fmt_float, float_column, read_csv, read_json, write_csv, write_json

FREE = np.uint8(0)
WALL = np.uint8(1)
UNKNOWN = np.uint8(2)

_PGM_VALUE = {int(FREE): 254, int(WALL): 0, int(UNKNOWN): 205}
_PGM_STATE = {v: k for k, v in _PGM_VALUE.items()}


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if t == -math.pi:
        t = math.pi
    return t


def wrap_angles(theta) -> np.ndarray:
    """Vectorized :func:`wrap_angle`."""
    t = np.asarray(theta, np.float64)
    out = (t + np.pi) % (2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; heading is normalized to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], np.float64)


@dataclass(eq=False)
class OccupancyGrid:
    """Regular grid of FREE / WALL / UNKNOWN cells.

    ``cells`` is indexed [iy, ix]; ``origin`` is the world position of the
    lower-left corner of cell (0, 0).
    """

    width: int
    height: int
    resolution: float
    origin: tuple
    cells: np.ndarray

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, np.uint8)
        if self.cells.shape != (self.height, self.width):
            raise ValueError(
                f"cells shape {self.cells.shape} does not match "
                f"(height, width)=({self.height}, {self.width})"
            )
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def width_m(self) -> float:
        return self.width * self.resolution

    @property
    def height_m(self) -> float:
        return self.height * self.resolution

    @property
    def wall_mask(self) -> np.ndarray:
        return (self.cells == WALL).astype(np.uint8)

    def world_to_cell(self, x: float, y: float):
        ix = int(math.floor((x - self.origin[0]) / self.resolution))
        iy = int(math.floor((y - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int):
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def contains(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_cell(x, y)
        return 0 <= ix < self.width and 0 <= iy < self.height

    def cell_at(self, x: float, y: float) -> int:
        if not self.contains(x, y):
            raise ValueError(f"point ({x:.3f}, {y:.3f}) lies outside the grid")
        ix, iy = self.world_to_cell(x, y)
        return int(self.cells[iy, ix])

    def is_free(self, x: float, y: float) -> bool:
        return self.cell_at(x, y) == FREE

    def free_cells(self) -> np.ndarray:
        """(n, 2) array of [ix, iy] for FREE cells, row-major order."""
        iy, ix = np.nonzero(self.cells == FREE)
        return np.column_stack([ix, iy])


@dataclass(frozen=True)
class CorridorSpec:
    """Ring-corridor floor: outer footprint, corridor width, wall thickness."""

    outer_width_m: float
    outer_height_m: float
    corridor_width_m: float
    wall_thickness_m: float


def _cells_along(length_m: float, resolution: float, what: str) -> int:
    n = length_m / resolution
    n_int = int(round(n))
    if n_int < 1 or abs(n - n_int) > 1e-6:
        raise ValueError(
            f"{what} ({length_m} m) is not a positive multiple of the "
            f"resolution ({resolution} m)"
        )
    return n_int


def build_floor(spec: CorridorSpec, resolution: float) -> OccupancyGrid:
    """Rasterize a ring-corridor floor into an occupancy grid."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    for name in ("outer_width_m", "outer_height_m", "corridor_width_m", "wall_thickness_m"):
        if getattr(spec, name) <= 0:
            raise ValueError(f"{name} must be positive")
    w = _cells_along(spec.outer_width_m, resolution, "outer width")
    h = _cells_along(spec.outer_height_m, resolution, "outer height")
    n_wall = _cells_along(spec.wall_thickness_m, resolution, "wall thickness")
    n_corr = _cells_along(spec.corridor_width_m, resolution, "corridor width")
    if 2 * (n_wall + n_corr) >= min(w, h):
        raise ValueError(
            "corridor does not fit: outer footprint too small for "
            f"wall {spec.wall_thickness_m} m + corridor {spec.corridor_width_m} m"
        )
    ix = np.arange(w)[None, :]
    iy = np.arange(h)[:, None]
    inset = np.minimum(np.minimum(ix, w - 1 - ix), np.minimum(iy, h - 1 - iy))
    cells = np.full((h, w), WALL, np.uint8)
    ring = (inset >= n_wall) & (inset < n_wall + n_corr)
    cells[ring] = FREE
    return OccupancyGrid(width=w, height=h, resolution=resolution,
                         origin=(0.0, 0.0), cells=cells)


def corridor_loop_waypoints(spec: CorridorSpec) -> list:
    """Counterclockwise rectangle along the corridor centerline.

    Starts at the lower-left centerline corner heading east and closes the
    loop back at the start.
    """
    d = spec.wall_thickness_m + 0.5 * spec.corridor_width_m
    x0, y0 = d, d
    x1, y1 = spec.outer_width_m - d, spec.outer_height_m - d
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]


# ---------------------------------------------------------------------------
# ground-truth motion


@dataclass(frozen=True)
class MotionProfile:
    """Speed limits for waypoint following."""

    cruise_speed_mps: float = 0.5
    accel_mps2: float = 0.5
    turn_rate_radps: float = math.pi / 2


@dataclass(eq=False)
class Trajectory:
    """Timestamped planar poses (structure-of-arrays)."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, np.float64)
        self.x = np.asarray(self.x, np.float64)
        self.y = np.asarray(self.y, np.float64)
        self.theta = np.asarray(self.theta, np.float64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.theta) == n):
            raise ValueError("trajectory arrays must have equal length")
        if n == 0:
            raise ValueError("trajectory must contain at least one sample")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i):
        return float(self.t[i]), Pose2D(self.x[i], self.y[i], self.theta[i])

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "x", "y", "theta"], [self.t, self.x, self.y, self.theta])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        _, cols = read_csv(path, ["t", "x", "y", "theta"])
        return cls(*(float_column(c) for c in cols))


@dataclass(eq=False)
class GroundTruthPath:
    """Trajectory plus the kinematic annotations used to drive sensors.

    ``v`` is forward speed, ``omega`` yaw rate and ``a`` tangential
    acceleration, all evaluated at the same timestamps as the poses.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        arrays = [self.t, self.x, self.y, self.theta, self.v, self.omega, self.a]
        n = len(arrays[0])
        if any(len(arr) != n for arr in arrays):
            raise ValueError("ground-truth arrays must have equal length")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i):
        return {
            "t": float(self.t[i]),
            "pose": Pose2D(self.x[i], self.y[i], self.theta[i]),
            "v": float(self.v[i]),
            "omega": float(self.omega[i]),
            "a": float(self.a[i]),
        }

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def trajectory(self) -> Trajectory:
        return Trajectory(self.t.copy(), self.x.copy(), self.y.copy(),
                          wrap_angles(self.theta))

    def index_at(self, time: float) -> int:
        """Index of the sample closest to ``time`` (timestamps are uniform)."""
        i = int(np.argmin(np.abs(self.t - time)))
        return i


class _Turn:
    __slots__ = ("t0", "dur", "x", "y", "theta0", "omega")

    def __init__(self, t0, dur, x, y, theta0, omega):
        self.t0, self.dur = t0, dur
        self.x, self.y = x, y
        self.theta0, self.omega = theta0, omega

    def eval(self, tau):
        return (self.x, self.y, self.theta0 + self.omega * tau, 0.0, self.omega, 0.0)


class _Leg:
    __slots__ = ("t0", "dur", "x0", "y0", "heading", "length",
                 "v_peak", "t_acc", "t_cruise", "accel")

    def __init__(self, t0, x0, y0, heading, length, profile: MotionProfile):
        a = profile.accel_mps2
        v_c = profile.cruise_speed_mps
        d_acc = v_c * v_c / (2.0 * a)
        if 2.0 * d_acc <= length:
            v_peak = v_c
            t_acc = v_c / a
            t_cruise = (length - 2.0 * d_acc) / v_c
        else:
            v_peak = math.sqrt(a * length)
            t_acc = v_peak / a
            t_cruise = 0.0
        self.t0 = t0
        self.dur = 2.0 * t_acc + t_cruise
        self.x0, self.y0 = x0, y0
        self.heading = heading
        self.length = length
        self.v_peak = v_peak
        self.t_acc = t_acc
        self.t_cruise = t_cruise
        self.accel = a

    def eval(self, tau):
        a = self.accel
        if tau <= self.t_acc:
            s = 0.5 * a * tau * tau
            v = a * tau
            acc = a
        elif tau <= self.t_acc + self.t_cruise:
            s = 0.5 * a * self.t_acc ** 2 + self.v_peak * (tau - self.t_acc)
            v = self.v_peak
            acc = 0.0
        else:
            td = tau - self.t_acc - self.t_cruise
            s = (0.5 * a * self.t_acc ** 2 + self.v_peak * self.t_cruise
                 + self.v_peak * td - 0.5 * a * td * td)
            v = self.v_peak - a * td
            acc = -a
        x = self.x0 + s * math.cos(self.heading)
        y = self.y0 + s * math.sin(self.heading)
        return (x, y, self.heading, v, 0.0, acc)


def _build_phases(waypoints, profile):
    phases = []
    t = 0.0
    heading = None
    for i in range(len(waypoints) - 1):
        x0, y0 = waypoints[i]
        x1, y1 = waypoints[i + 1]
        length = math.hypot(x1 - x0, y1 - y0)
        if length <= 1e-12:
            raise ValueError(f"segment {i} is degenerate (duplicate waypoint)")
        new_heading = math.atan2(y1 - y0, x1 - x0)
        if heading is not None:
            dtheta = wrap_angle(new_heading - heading)
            if abs(dtheta) > 1e-12:
                dur = abs(dtheta) / profile.turn_rate_radps
                omega = math.copysign(profile.turn_rate_radps, dtheta)
                phases.append(_Turn(t, dur, x0, y0, heading, omega))
                t += dur
        leg = _Leg(t, x0, y0, new_heading, length, profile)
        phases.append(leg)
        t += leg.dur
        heading = new_heading
    return phases, t, heading


def generate_path(grid: OccupancyGrid, waypoints, profile: MotionProfile,
                  sample_dt: float) -> GroundTruthPath:
    """Follow waypoints through free space; sample every ``sample_dt``.

    Straight legs use a trapezoidal speed profile (triangular when the leg
    is too short to reach cruise speed); corners rotate in place at the
    configured turn rate.  The last sample is at rest on the final waypoint.
    """
    if sample_dt <= 0:
        raise ValueError("sample_dt must be positive")
    if len(waypoints) < 2:
        raise ValueError("need at least two waypoints")
    if profile.cruise_speed_mps <= 0 or profile.accel_mps2 <= 0 \
            or profile.turn_rate_radps <= 0:
        raise ValueError("motion profile limits must be positive")
    for i, (x, y) in enumerate(waypoints):
        if not grid.contains(x, y) or not grid.is_free(x, y):
            raise ValueError(f"waypoint {i} at ({x:.3f}, {y:.3f}) is not in free space")
    step = grid.resolution / 2.0
    for i in range(len(waypoints) - 1):
        x0, y0 = waypoints[i]
        x1, y1 = waypoints[i + 1]
        length = math.hypot(x1 - x0, y1 - y0)
        n_checks = max(2, int(math.ceil(length / step)) + 1)
        for frac in np.linspace(0.0, 1.0, n_checks):
            px = x0 + frac * (x1 - x0)
            py = y0 + frac * (y1 - y0)
            if not grid.contains(px, py) or not grid.is_free(px, py):
                raise ValueError(
                    f"segment {i} from ({x0:.3f}, {y0:.3f}) to ({x1:.3f}, {y1:.3f}) "
                    f"crosses a wall near ({px:.3f}, {py:.3f})"
                )
    phases, total, final_heading = _build_phases(waypoints, profile)
    n_samples = int(math.ceil(total / sample_dt - 1e-9)) + 1
    t = np.arange(n_samples) * sample_dt
    starts = np.array([p.t0 for p in phases])
    x = np.empty(n_samples)
    y = np.empty(n_samples)
    theta = np.empty(n_samples)
    v = np.empty(n_samples)
    omega = np.empty(n_samples)
    a = np.empty(n_samples)
    fx, fy = waypoints[-1]
    for k in range(n_samples):
        tk = t[k]
        if tk >= total:
            x[k], y[k], theta[k] = fx, fy, final_heading
            v[k] = omega[k] = a[k] = 0.0
            continue
        idx = int(np.searchsorted(starts, tk, side="right")) - 1
        ph = phases[idx]
        tau = min(tk - ph.t0, ph.dur)
        x[k], y[k], theta[k], v[k], omega[k], a[k] = ph.eval(tau)
    return GroundTruthPath(t=t, x=x, y=y, theta=theta, v=v, omega=omega, a=a)


# ---------------------------------------------------------------------------
# access points


class ApLayout:
    PERIMETER = "Perimeter"
    UNIFORM_RANDOM = "UniformRandom"
    ALL = (PERIMETER, UNIFORM_RANDOM)


@dataclass(frozen=True)
class AccessPoint:
    ap_id: int
    x: float
    y: float
    tx_power_dbm: float
    path_loss_exponent: float


def _perimeter_point(w_m, h_m, d, s):
    """Point at arc length s along the inset rectangle, CCW from (d, d)."""
    lx = w_m - 2.0 * d
    ly = h_m - 2.0 * d
    s = s % (2.0 * (lx + ly))
    if s < lx:
        return (d + s, d)
    s -= lx
    if s < ly:
        return (w_m - d, d + s)
    s -= ly
    if s < lx:
        return (w_m - d - s, h_m - d)
    s -= lx
    return (d, h_m - d - s)


def place_aps(grid: OccupancyGrid, count: int, layout: str, seed: int,
              tx_power_dbm_range=(-40.0, -40.0),
              path_loss_exponent_range=(2.5, 2.5)) -> list:
    """Deterministic AP placement plus per-AP radio parameter draws."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if layout not in ApLayout.ALL:
        raise ValueError(f"unknown layout {layout!r}; expected one of {ApLayout.ALL}")
    lo_p, hi_p = tx_power_dbm_range
    lo_n, hi_n = path_loss_exponent_range
    if lo_p > hi_p or lo_n > hi_n:
        raise ValueError("parameter ranges must satisfy low <= high")
    if lo_n < 1.5 or hi_n > 6.0:
        raise ValueError("path-loss exponent range must lie within [1.5, 6.0]")
    rng = np.random.default_rng(seed)
    if layout == ApLayout.PERIMETER:
        free = grid.free_cells()
        if len(free) == 0:
            raise ValueError("grid has no free space to anchor the perimeter")
        ix = free[:, 0]
        iy = free[:, 1]
        inset = np.minimum(
            np.minimum(ix, grid.width - 1 - ix),
            np.minimum(iy, grid.height - 1 - iy),
        )
        n_wall = int(inset.min())
        d = 0.5 * n_wall * grid.resolution if n_wall > 0 else 0.5 * grid.resolution
        w_m, h_m = grid.width_m, grid.height_m
        perim = 2.0 * (w_m - 2.0 * d) + 2.0 * (h_m - 2.0 * d)
        positions = [
            _perimeter_point(w_m, h_m, d, i * perim / count) for i in range(count)
        ]
    else:
        free = grid.free_cells()
        if count > len(free):
            raise ValueError(
                f"cannot place {count} APs in {len(free)} free cells without overlap"
            )
        pick = rng.choice(len(free), size=count, replace=False)
        positions = [grid.cell_center(int(free[i, 0]), int(free[i, 1])) for i in pick]
    powers = rng.uniform(lo_p, hi_p, count)
    exponents = rng.uniform(lo_n, hi_n, count)
    return [
        AccessPoint(ap_id=i, x=positions[i][0], y=positions[i][1],
                    tx_power_dbm=float(powers[i]),
                    path_loss_exponent=float(exponents[i]))
        for i in range(count)
    ]


# ---------------------------------------------------------------------------
# grid I/O


def _sidecar_path(path) -> str:
    path = str(path)
    stem, _ = path.rsplit(".", 1) if "." in path.rsplit("/", 1)[-1] else (path, "")
    return stem + ".json"


def save_grid_pgm(grid: OccupancyGrid, path) -> None:
    """Binary PGM (P5) plus a JSON sidecar with resolution and origin.

    Rows are written top-first so image viewers show y-up worlds upright.
    """
    lut = np.zeros(256, np.uint8)
    for state, value in _PGM_VALUE.items():
        lut[state] = value
    img = lut[grid.cells[::-1, :]]
    header = f"P5\n{grid.width} {grid.height}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(img.tobytes())
    write_json(_sidecar_path(path), {
        "height": grid.height,
        "origin": [grid.origin[0], grid.origin[1]],
        "resolution": grid.resolution,
        "width": grid.width,
    })


def load_grid_pgm(path) -> OccupancyGrid:
    """Inverse of :func:`save_grid_pgm` (requires the sidecar)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    i += 1
    width, height, maxval = (int(tk) for tk in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    raw = np.frombuffer(data[i : i + width * height], np.uint8)
    if raw.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    img = raw.reshape(height, width)
    known = np.isin(img, list(_PGM_STATE))
    if not known.all():
        bad = sorted(set(img[~known].tolist()))
        raise ValueError(f"{path}: unexpected pixel values {bad}")
    lut = np.zeros(256, np.uint8)
    for value, state in _PGM_STATE.items():
        lut[value] = state
    cells = lut[img][::-1, :]
    meta = read_json(_sidecar_path(path))
    if int(meta["width"]) != width or int(meta["height"]) != height:
        raise ValueError(f"{path}: sidecar dimensions disagree with PGM header")
    return OccupancyGrid(
        width=width,
        height=height,
        resolution=float(meta["resolution"]),
        origin=(float(meta["origin"][0]), float(meta["origin"][1])),
        cells=cells,
    )


def save_aps_json(aps, path) -> None:
    write_json(path, [
        {
            "id": ap.ap_id,
            "path_loss_exponent": ap.path_loss_exponent,
            "tx_power_dbm": ap.tx_power_dbm,
            "x": ap.x,
            "y": ap.y,
        }
        for ap in aps
    ])


def load_aps_json(path) -> list:
    return [
        AccessPoint(ap_id=int(d["id"]), x=float(d["x"]), y=float(d["y"]),
                    tx_power_dbm=float(d["tx_power_dbm"]),
                    path_loss_exponent=float(d["path_loss_exponent"]))
        for d in read_json(path)
    ]
