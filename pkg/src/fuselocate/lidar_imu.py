"""LiDAR/IMU positioning: dead reckoning corrected by grid scan matching.

Dead reckoning integrates the planar IMU channels (x-axis specific force,
z-axis rate).  Scans are registered against an incrementally built log-odds
occupancy map with an exhaustive coarse-to-fine search, and the matched
pose replaces the integrated one whenever the match is confident.  With no
scans the pipeline degrades to pure dead reckoning, whose cross-track error
under a gyro bias b grows like (v * b / 2) * t^2.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .sensors import ImuStream, LidarScan
from .world import (FREE, UNKNOWN, WALL, OccupancyGrid, Pose2D, Trajectory,
                    wrap_angle, wrap_angles)


def dead_reckon(imu: ImuStream, initial: Pose2D, initial_v: float = 0.0) -> Trajectory:
    """Integrate the IMU alone.  Step k applies sample k over dt_k and the
    position step uses the already-updated heading and speed."""
    n = len(imu)
    dt = np.diff(imu.t)
    gyro = imu.gyro[1:, 2]
    accel = imu.accel[1:, 0]
    theta = np.empty(n)
    v = np.empty(n)
    theta[0] = initial.theta
    v[0] = initial_v
    theta[1:] = initial.theta + np.cumsum(gyro * dt)
    v[1:] = initial_v + np.cumsum(accel * dt)
    x = np.empty(n)
    y = np.empty(n)
    x[0] = initial.x
    y[0] = initial.y
    x[1:] = initial.x + np.cumsum(v[1:] * dt * np.cos(theta[1:]))
    y[1:] = initial.y + np.cumsum(v[1:] * dt * np.sin(theta[1:]))
    return Trajectory(t=imu.t.copy(), x=x, y=y, theta=wrap_angles(theta))


# ---------------------------------------------------------------------------
# log-odds occupancy map


@dataclass(eq=False)
class LogOddsMap:
    """Occupancy evidence grid; cell value is log-odds of being occupied."""

    resolution: float
    origin: tuple
    cells: np.ndarray
    l_occ: float = 0.85
    l_free: float = -0.4
    l_max: float = 10.0

    def __post_init__(self):
        self.cells = np.asarray(self.cells, np.float64)
        if self.cells.ndim != 2:
            raise ValueError("cells must be 2-dimensional")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @classmethod
    def blank(cls, width: int, height: int, resolution: float, origin=(0.0, 0.0),
              l_occ: float = 0.85, l_free: float = -0.4,
              l_max: float = 10.0) -> "LogOddsMap":
        return cls(resolution=resolution, origin=origin,
                   cells=np.zeros((height, width)), l_occ=l_occ,
                   l_free=l_free, l_max=l_max)

    @classmethod
    def like_grid(cls, grid: OccupancyGrid, l_occ: float = 0.85,
                  l_free: float = -0.4, l_max: float = 10.0) -> "LogOddsMap":
        return cls.blank(grid.width, grid.height, grid.resolution, grid.origin,
                         l_occ, l_free, l_max)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def probability(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.cells))

    def match_probability(self) -> np.ndarray:
        """Scoring surface for scan matching.

        Evidence is clamped to one observation's worth, so cells seen many
        times do not outscore cells seen once: that gradient would drag
        matches toward the older part of the map whenever the scan leaves
        the pose partly unconstrained.  Unknown cells keep their natural
        0.5, midway between matched wall and swept free; the motion prior
        in the matcher is what stops that mild frontier penalty from
        pinning the pose at the edge of explored space.
        """
        return 1.0 / (1.0 + np.exp(-np.clip(self.cells, -self.l_occ, self.l_occ)))

    def copy(self) -> "LogOddsMap":
        return LogOddsMap(resolution=self.resolution, origin=self.origin,
                          cells=self.cells.copy(), l_occ=self.l_occ,
                          l_free=self.l_free, l_max=self.l_max)

    def has_evidence(self) -> bool:
        return bool(np.any(self.cells != 0.0))

    def to_occupancy_grid(self, occ_threshold: float = 0.65,
                          free_threshold: float = 0.35) -> OccupancyGrid:
        p = self.probability()
        cells = np.full(self.cells.shape, UNKNOWN, np.uint8)
        cells[p >= occ_threshold] = WALL
        cells[p <= free_threshold] = FREE
        return OccupancyGrid(width=self.width, height=self.height,
                             resolution=self.resolution, origin=self.origin,
                             cells=cells)


def update_map(lmap: LogOddsMap, pose: Pose2D, scan: LidarScan,
               in_place: bool = False) -> LogOddsMap:
    """Fold one scan into the map.

    Per-beam increments are accumulated first and the clamp to +-l_max is
    applied once per call, so beam order within a scan does not matter.
    """
    target = lmap if in_place else lmap.copy()
    delta = np.zeros_like(target.cells)
    kernels.splat_scan(
        delta, target.origin[0], target.origin[1], target.resolution,
        pose.x, pose.y, pose.theta + scan.angles, scan.ranges,
        scan.hits, target.l_free, target.l_occ,
    )
    np.clip(target.cells + delta, -target.l_max, target.l_max, out=target.cells)
    return target


# ---------------------------------------------------------------------------
# scan matching


@dataclass(eq=False)
class ScanMatchResult:
    pose: Pose2D
    score: float
    converged: bool
    n_hit_beams: int


def scan_match(lmap: LogOddsMap, scan: LidarScan, guess: Pose2D,
               window_xy: float = 0.3, window_theta: float = math.radians(10.0),
               levels: int = 4, coarse_pts: int = 5, refine_pts: int = 3,
               converged_frac: float = 0.45,
               prior_weight: float = 0.0) -> ScanMatchResult:
    """Exhaustive coarse-to-fine search around the guess.

    Level 0 places ``coarse_pts`` lattice points per axis across the full
    window; each later level searches ``refine_pts`` points per axis at
    half the previous step around the running best, clamped to the window.
    Candidate score is the sum of map occupancy probabilities under the hit
    beam endpoints (evidence-clamped, see match_probability; a perfectly
    registered beam contributes sigmoid(l_occ)), minus a motion prior:
    ``prior_weight * sigmoid(l_occ) * n_hit`` times the absolute offset
    from the guess, each axis normalised by its window.  The prior makes
    the dead-reckoned guess the default along directions the scan does not
    constrain (a corridor axis with both end walls out of range); without
    it the matcher free-wheels there and can lock onto incidental patterns
    its own mispainted scans put in the map.  The penalty is linear rather
    than quadratic so that it bites hardest against exactly that failure
    (repeated sub-cell creep) while a genuine large correction, which moves
    many beams coherently, still pays proportionally and wins.  Offsets are
    enumerated center-out per axis so exact ties also resolve toward the
    guess.  The match converges when the best raw score seen anywhere in
    the search reaches converged_frac per hit beam, meaning the window
    contains a pose that explains the scan; the returned pose's own raw
    score is reported.  Testing convergence on the returned pose instead
    would reject matches exactly when the guess has drifted and correction
    matters most.  An empty map or a scan with no hits returns the guess
    unconverged.
    """
    if levels < 1 or coarse_pts < 2 or refine_pts < 2:
        raise ValueError("levels must be >= 1 and lattice sizes >= 2")
    if window_xy <= 0 or window_theta <= 0:
        raise ValueError("search windows must be positive")
    if prior_weight < 0:
        raise ValueError("prior_weight must be >= 0")
    hits = scan.hits
    n_hit = int(hits.sum())
    if n_hit == 0 or not lmap.has_evidence():
        return ScanMatchResult(pose=guess, score=0.0, converged=False,
                               n_hit_beams=n_hit)
    prob = lmap.match_probability()
    beam_ang = scan.angles[hits]
    beam_rng = scan.ranges[hits]
    per_beam_max = 1.0 / (1.0 + math.exp(-lmap.l_occ))
    prior_scale = prior_weight * per_beam_max * n_hit

    def search(center, off_t, off_y, off_x):
        cand = np.empty((len(off_t) * len(off_y) * len(off_x), 3))
        i = 0
        for dt_ in off_t:
            for dy in off_y:
                for dx in off_x:
                    cand[i, 0] = center[0] + dx
                    cand[i, 1] = center[1] + dy
                    cand[i, 2] = center[2] + dt_
                    i += 1
        scores = kernels.score_pose_candidates(
            prob, lmap.origin[0], lmap.origin[1], lmap.resolution,
            cand, beam_ang, beam_rng,
        )
        penalty = prior_scale * (
            np.abs(cand[:, 0] - guess.x) / window_xy
            + np.abs(cand[:, 1] - guess.y) / window_xy
            + np.abs(cand[:, 2] - guess.theta) / window_theta
        )
        adjusted = scores - penalty
        best = int(np.argmax(adjusted))
        return cand[best], float(scores[best]), float(scores.max())

    def center_out(offsets):
        return np.array(sorted(offsets, key=lambda d: (abs(d), d)))

    g = (guess.x, guess.y, guess.theta)
    span = center_out(np.linspace(-window_xy, window_xy, coarse_pts))
    span_t = center_out(np.linspace(-window_theta, window_theta, coarse_pts))
    center, best_score, peak = search(g, span_t, span, span)
    step_xy = 2.0 * window_xy / (coarse_pts - 1)
    step_t = 2.0 * window_theta / (coarse_pts - 1)
    half = refine_pts // 2
    for _ in range(1, levels):
        step_xy *= 0.5
        step_t *= 0.5
        off = center_out((np.arange(refine_pts) - half) * step_xy)
        off_t = center_out((np.arange(refine_pts) - half) * step_t)
        cx = np.clip(center[0] + off, g[0] - window_xy, g[0] + window_xy) - center[0]
        cy = np.clip(center[1] + off, g[1] - window_xy, g[1] + window_xy) - center[1]
        ct = np.clip(center[2] + off_t, g[2] - window_theta,
                     g[2] + window_theta) - center[2]
        center, best_score, level_peak = search(center, ct, cy, cx)
        peak = max(peak, level_peak)
    pose = Pose2D(center[0], center[1], center[2])
    return ScanMatchResult(pose=pose, score=best_score,
                           converged=peak >= converged_frac * n_hit,
                           n_hit_beams=n_hit)


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class SlamConfig:
    """Map extent plus matching knobs for :func:`slam_pipeline`."""

    map_width: int = 248
    map_height: int = 248
    map_resolution: float = 0.05
    map_origin: tuple = (0.0, 0.0)
    l_occ: float = 0.85
    l_free: float = -0.4
    l_max: float = 10.0
    window_xy: float = 0.3
    window_theta: float = math.radians(10.0)
    levels: int = 5
    coarse_pts: int = 5
    refine_pts: int = 3
    converged_frac: float = 0.45
    # pipeline matching regularises toward the dead-reckoned guess;
    # scan_match alone defaults to the pure map score
    prior_weight: float = 0.2
    divergence_patience: int = 5
    # slow trim of the integrated speed from the along-track part of
    # accepted corrections, to bleed off accumulated accelerometer-bias
    # error that the matcher cannot observe mid-corridor.  The deadband
    # skips innovations at the matcher's quantization scale so jitter is
    # never integrated, and the per-scan cap keeps the trim slow; without
    # both, corrections feed matcher noise straight into the speed state
    # and the pipeline destabilises.  0 disables.
    velocity_feedback: float = 0.3
    velocity_feedback_limit: float = 0.01
    velocity_feedback_deadband: float = 0.05


@dataclass(eq=False)
class SlamResult:
    trajectory: Trajectory
    lmap: LogOddsMap
    scores: np.ndarray
    converged: np.ndarray
    diverged: bool
    events: list = field(default_factory=list)


def slam_pipeline(imu: ImuStream, scans, initial: Pose2D,
                  config: SlamConfig = SlamConfig(),
                  initial_v: float = 0.0) -> SlamResult:
    """Dead reckoning between scans, scan matching against the growing map.

    The first scan seeds the map at the integrated pose.  Later scans are
    matched first; a confident match replaces the pose before the scan is
    mapped.  With no scans at all the result is pure dead reckoning at IMU
    rate over an empty map.  ``divergence_patience`` consecutive
    unconverged matches set the diverged flag (the run continues on dead
    reckoning).
    """
    lmap = LogOddsMap.blank(config.map_width, config.map_height,
                            config.map_resolution, config.map_origin,
                            config.l_occ, config.l_free, config.l_max)
    events = []
    if len(scans) == 0:
        traj = dead_reckon(imu, initial, initial_v)
        events.append({"t": float(imu.t[0]), "kind": "no_scans"})
        return SlamResult(trajectory=traj, lmap=lmap, scores=np.zeros(0),
                          converged=np.zeros(0, bool), diverged=False,
                          events=events)
    times = np.array([s.t for s in scans])
    if not np.all(np.diff(times) > 0):
        raise ValueError("scans must be sorted by strictly increasing time")
    if times[0] < imu.t[0] - 1e-9 or times[-1] > imu.t[-1] + 1e-9:
        raise ValueError("scan timestamps must lie within the IMU stream")

    x, y, theta, v = initial.x, initial.y, initial.theta, initial_v
    imu_i = 0
    t_prev_scan = None
    out_x = np.empty(len(scans))
    out_y = np.empty(len(scans))
    out_theta = np.empty(len(scans))
    scores = np.zeros(len(scans))
    conv = np.zeros(len(scans), bool)
    streak = 0
    diverged = False
    for si, scan in enumerate(scans):
        while imu_i + 1 < len(imu) and imu.t[imu_i + 1] <= scan.t + 1e-9:
            imu_i += 1
            dt = float(imu.t[imu_i] - imu.t[imu_i - 1])
            theta = theta + float(imu.gyro[imu_i, 2]) * dt
            v = v + float(imu.accel[imu_i, 0]) * dt
            x = x + v * dt * math.cos(theta)
            y = y + v * dt * math.sin(theta)
        if lmap.has_evidence() and scan.hits.any():
            result = scan_match(
                lmap, scan, Pose2D(x, y, theta),
                window_xy=config.window_xy, window_theta=config.window_theta,
                levels=config.levels, coarse_pts=config.coarse_pts,
                refine_pts=config.refine_pts,
                converged_frac=config.converged_frac,
                prior_weight=config.prior_weight,
            )
            scores[si] = result.score
            conv[si] = result.converged
            if result.converged:
                if (config.velocity_feedback > 0 and t_prev_scan is not None
                        and scan.t > t_prev_scan):
                    # the along-track part of the correction is a speed
                    # error integrated since the previous scan
                    along = ((result.pose.x - x) * math.cos(theta)
                             + (result.pose.y - y) * math.sin(theta))
                    if abs(along) >= config.velocity_feedback_deadband:
                        dv = (config.velocity_feedback * along
                              / (scan.t - t_prev_scan))
                        limit = config.velocity_feedback_limit
                        v += min(max(dv, -limit), limit)
                # adopt the matched pose; theta continues from the matched
                # heading on the integrator's branch (no wrapping jumps)
                x, y = result.pose.x, result.pose.y
                theta = theta + wrap_angle(result.pose.theta - theta)
                streak = 0
            else:
                streak += 1
                if streak == config.divergence_patience and not diverged:
                    diverged = True
                    events.append({"t": float(scan.t), "kind": "diverged",
                                   "consecutive_failures": streak})
        update_map(lmap, Pose2D(x, y, theta), scan, in_place=True)
        out_x[si], out_y[si], out_theta[si] = x, y, theta
        t_prev_scan = float(scan.t)
    traj = Trajectory(t=times, x=out_x, y=out_y, theta=wrap_angles(out_theta))
    return SlamResult(trajectory=traj, lmap=lmap, scores=scores,
                      converged=conv, diverged=diverged, events=events)
