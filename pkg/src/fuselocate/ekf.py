"""Extended Kalman filter over the planar state [x, y, theta, v, omega].

Motion model (dt between consecutive IMU samples):

    x     += v * dt * cos(theta)          (previous v and theta)
    y     += v * dt * sin(theta)
    theta += omega * dt                   (then normalized to (-pi, pi])
    v     += a_meas * dt
    omega  = gyro_meas                    (direct pass-through)

The yaw-rate row of the Jacobian is therefore zero; gyro uncertainty enters
through the process noise.  Position fixes (Wi-Fi or scan matching) update
the filter through H = [[1,0,0,0,0],[0,1,0,0,0]].
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sensors import ImuStream
from .world import Trajectory, wrap_angle

STATE_DIM = 5

H_POS = np.array([
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0],
])

# 99% chi-square quantile with 2 degrees of freedom, used by the optional
# innovation gate.
GATE_MD2_99 = 9.21


def predict_state(x: np.ndarray, accel: float, gyro: float, dt: float) -> np.ndarray:
    """Propagate the state mean one IMU step."""
    px, py, theta, v, _ = x
    return np.array([
        px + v * dt * math.cos(theta),
        py + v * dt * math.sin(theta),
        wrap_angle(theta + x[4] * dt),
        v + accel * dt,
        gyro,
    ])


def jacobian_f(x: np.ndarray, accel: float, gyro: float, dt: float) -> np.ndarray:
    """Jacobian of :func:`predict_state` w.r.t. the state."""
    theta = x[2]
    v = x[3]
    f = np.zeros((STATE_DIM, STATE_DIM))
    f[0, 0] = 1.0
    f[0, 2] = -v * dt * math.sin(theta)
    f[0, 3] = dt * math.cos(theta)
    f[1, 1] = 1.0
    f[1, 2] = v * dt * math.cos(theta)
    f[1, 3] = dt * math.sin(theta)
    f[2, 2] = 1.0
    f[2, 4] = dt
    f[3, 3] = 1.0
    return f


def predict(x: np.ndarray, p: np.ndarray, accel: float, gyro: float,
            dt: float, q_per_s: np.ndarray):
    """One EKF prediction; process noise is rated per second and scaled by dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = jacobian_f(x, accel, gyro, dt)
    x_new = predict_state(x, accel, gyro, dt)
    p_new = f @ p @ f.T + q_per_s * dt
    p_new = 0.5 * (p_new + p_new.T)
    return x_new, p_new


def update(x: np.ndarray, p: np.ndarray, z: np.ndarray, r: np.ndarray,
           gate_md2: Optional[float] = None):
    """Position update.  Returns (x, p, info).

    info carries the innovation, its squared Mahalanobis distance and
    whether the measurement was accepted (the gate, when enabled, rejects
    fixes with md2 above the threshold and leaves the state untouched).
    """
    z = np.asarray(z, np.float64).reshape(2)
    innov = z - H_POS @ x
    s = H_POS @ p @ H_POS.T + r
    sol = np.linalg.solve(s, innov)
    md2 = float(innov @ sol)
    info = {"innovation": innov, "md2": md2, "accepted": True}
    if gate_md2 is not None and md2 > gate_md2:
        info["accepted"] = False
        return x, p, info
    k = np.linalg.solve(s, H_POS @ p).T
    x_new = x + k @ innov
    x_new[2] = wrap_angle(x_new[2])
    p_new = (np.eye(STATE_DIM) - k @ H_POS) @ p
    p_new = 0.5 * (p_new + p_new.T)
    return x_new, p_new, info


@dataclass(frozen=True)
class PositionObservation:
    """A 2D position fix to be fused, with its per-axis standard deviation."""

    t: float
    x: float
    y: float
    sigma: float
    source: str = "WiFi"

    def z(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def r(self) -> np.ndarray:
        return np.eye(2) * self.sigma ** 2


DEFAULT_Q_DIAG = (1e-4, 1e-4, 1e-5, 1e-2, 1e-3)
DEFAULT_P0_DIAG = (1.0, 1.0, math.radians(10.0) ** 2, 0.25, 0.01)


@dataclass(frozen=True)
class FusionConfig:
    q_diag: tuple = DEFAULT_Q_DIAG
    p0_diag: tuple = DEFAULT_P0_DIAG
    gate_md2: Optional[float] = None
    max_gap_factor: float = 10.0

    def q_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.q_diag, np.float64))

    def p0_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.p0_diag, np.float64))


@dataclass(eq=False)
class FusionResult:
    trajectory: Trajectory
    v: np.ndarray
    omega: np.ndarray
    p_xx: np.ndarray
    p_yy: np.ndarray
    events: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        from .fileio import write_csv

        write_csv(path, ["t", "x", "y", "theta", "v", "omega", "p_xx", "p_yy"], [
            self.trajectory.t, self.trajectory.x, self.trajectory.y,
            self.trajectory.theta, self.v, self.omega, self.p_xx, self.p_yy,
        ])


def fuse_run(imu: ImuStream, observations, x0: np.ndarray,
             config: FusionConfig = FusionConfig()) -> FusionResult:
    """Run the filter across an IMU stream, folding in position fixes.

    Each observation is applied at its nearest IMU sample (after that
    sample's prediction).  Observations outside the stream and IMU gaps
    larger than max_gap_factor nominal periods are reported as events, not
    errors.
    """
    n = len(imu)
    x = np.asarray(x0, np.float64).copy()
    if x.shape != (STATE_DIM,):
        raise ValueError(f"x0 must have shape ({STATE_DIM},)")
    p = config.p0_matrix()
    q = config.q_matrix()
    obs = sorted(observations, key=lambda o: o.t)
    events = []
    out = np.empty((n, STATE_DIM))
    p_xx = np.empty(n)
    p_yy = np.empty(n)
    if n > 1:
        nominal_dt = float(np.median(np.diff(imu.t)))
    else:
        nominal_dt = 0.0
    half = 0.5 * nominal_dt
    obs_i = 0

    def apply_at(k, time):
        nonlocal x, p, obs_i
        while obs_i < len(obs) and obs[obs_i].t <= time + half:
            o = obs[obs_i]
            if o.t < time - half:
                events.append({"t": o.t, "kind": "obs_outside_stream",
                               "source": o.source})
            else:
                x, p, info = update(x, p, o.z(), o.r(), config.gate_md2)
                events.append({
                    "t": o.t,
                    "kind": "update" if info["accepted"] else "gate_reject",
                    "source": o.source,
                    "md2": info["md2"],
                    "innovation_norm": float(np.hypot(*info["innovation"])),
                })
            obs_i += 1

    apply_at(0, float(imu.t[0]))
    out[0] = x
    p_xx[0], p_yy[0] = p[0, 0], p[1, 1]
    for k in range(1, n):
        dt = float(imu.t[k] - imu.t[k - 1])
        if nominal_dt > 0 and dt > config.max_gap_factor * nominal_dt:
            events.append({"t": float(imu.t[k]), "kind": "imu_gap", "dt": dt})
        x, p = predict(x, p, float(imu.accel[k, 0]), float(imu.gyro[k, 2]), dt, q)
        apply_at(k, float(imu.t[k]))
        out[k] = x
        p_xx[k], p_yy[k] = p[0, 0], p[1, 1]
    while obs_i < len(obs):
        events.append({"t": obs[obs_i].t, "kind": "obs_outside_stream",
                       "source": obs[obs_i].source})
        obs_i += 1
    traj = Trajectory(t=imu.t.copy(), x=out[:, 0], y=out[:, 1],
                      theta=out[:, 2])
    return FusionResult(trajectory=traj, v=out[:, 3], omega=out[:, 4],
                        p_xx=p_xx, p_yy=p_yy, events=events)
