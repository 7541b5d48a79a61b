"""Sensor models: RSSI path loss, IMU corruption, LiDAR ray casting, CSV IO."""

import math

import numpy as np
import pytest

from fuselocate.sensors import (
    RSSI_DETECT_FLOOR_DBM,
    RSSI_MISSING_DBM,
    ImuErrorModel,
    ImuStream,
    LidarConfig,
    LidarScan,
    RadioNoise,
    read_imu_csv,
    read_rssi_csv,
    read_scans_csv,
    rssi_all_missing,
    simulate_imu,
    simulate_lidar,
    simulate_rssi,
    write_imu_csv,
    write_rssi_csv,
    write_scans_csv,
)
from fuselocate.world import FREE, WALL, AccessPoint, GroundTruthPath, \
    OccupancyGrid, Pose2D

QUIET = RadioNoise(shadowing_sigma_db=0.0, wall_loss_db=6.0, dropout_prob=0.0)


def _ap(x, y, tx=-40.0, n=2.5, ap_id=0):
    return AccessPoint(ap_id=ap_id, x=x, y=y, tx_power_dbm=tx,
                       path_loss_exponent=n)


def _stationary_truth(duration_s, rate_hz=100.0, x=1.0, y=1.0, theta=0.0):
    t = np.arange(int(duration_s * rate_hz) + 1) / rate_hz
    z = np.zeros_like(t)
    return GroundTruthPath(t=t, x=z + x, y=z + y, theta=z + theta,
                           v=z.copy(), omega=z.copy(), a=z.copy())


# ---------------------------------------------------------------------------
# RSSI


class TestRssi:
    def test_reference_distance_returns_tx_power(self, open_grid, rng):
        ap = _ap(2.0, 1.0, tx=-40.0)
        rssi = simulate_rssi([ap], open_grid, Pose2D(1.0, 1.0, 0.0),
                             QUIET, rng)
        assert rssi.shape == (1,)
        assert rssi[0] == pytest.approx(-40.0, abs=1e-9)

    def test_ten_meters_exponent_two(self, open_grid, rng):
        ap = _ap(1.0, 1.0, tx=-40.0, n=2.0)
        rssi = simulate_rssi([ap], open_grid, Pose2D(11.0, 1.0, 0.0),
                             QUIET, rng)
        assert rssi[0] == pytest.approx(-60.0, abs=1e-9)

    def test_noise_free_decreases_with_distance(self, open_grid, rng):
        ap = _ap(1.0, 6.0)
        values = []
        for x in np.linspace(2.0, 11.0, 16):
            r = simulate_rssi([ap], open_grid, Pose2D(x, 6.0, 0.0),
                              QUIET, rng)
            values.append(r[0])
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_wall_penalty_matches_dense_segment_oracle(self, ring_grid, rng):
        """Wall count along the AP-to-pose segment, recomputed by sampling."""
        noise = RadioNoise(shadowing_sigma_db=0.0, wall_loss_db=7.5,
                           dropout_prob=0.0)
        pose = Pose2D(1.2, 1.2, 0.0)
        wall = ring_grid.wall_mask
        picks = [(11.2, 6.2), (6.2, 11.2), (11.2, 11.2), (1.2, 6.2),
                 (6.2, 1.2), (10.9, 10.9)]
        for ax, ay in picks:
            assert ring_grid.is_free(ax, ay)
            ap = _ap(ax, ay, tx=-30.0, n=2.0)
            got = simulate_rssi([ap], ring_grid, pose, noise, rng)[0]
            # dense sampling: count free->wall transitions along the segment
            length = math.hypot(ax - pose.x, ay - pose.y)
            n = max(2, int(length / ring_grid.resolution) * 64)
            ts = np.linspace(0.0, 1.0, n)
            xs = pose.x + ts * (ax - pose.x)
            ys = pose.y + ts * (ay - pose.y)
            ix = np.floor((xs - ring_grid.origin[0]) /
                          ring_grid.resolution).astype(np.int64)
            iy = np.floor((ys - ring_grid.origin[1]) /
                          ring_grid.resolution).astype(np.int64)
            ix = np.clip(ix, 0, ring_grid.width - 1)
            iy = np.clip(iy, 0, ring_grid.height - 1)
            in_wall = wall[iy, ix].astype(bool)
            crossings = int(np.count_nonzero(in_wall[1:] & ~in_wall[:-1]))
            expect = -30.0 - 20.0 * math.log10(length) - 7.5 * crossings
            assert got == pytest.approx(expect, abs=1e-9), (ax, ay, crossings)

    def test_penalty_counts_walls_not_cells(self, ring_grid, rng):
        """The solid centre block is one contiguous obstruction.  A diagonal
        chord through it covers ~160 wall cells but costs a single wall-loss
        term, which is what separates crossing counting from cell counting."""
        noise = RadioNoise(0.0, 6.0, 0.0)
        pose = Pose2D(1.2, 1.2, 0.0)
        ap = _ap(11.2, 11.2, tx=-30.0, n=2.0)
        clear = simulate_rssi([ap], ring_grid, pose,
                              RadioNoise(0.0, 0.0, 0.0), rng)[0]
        walled = simulate_rssi([ap], ring_grid, pose, noise, rng)[0]
        assert walled == pytest.approx(clear - 6.0, abs=1e-9)

    def test_forced_dropout_blanks_everything(self, open_grid, rng):
        aps = [_ap(2.0 + i, 2.0, ap_id=i) for i in range(8)]
        noise = RadioNoise(shadowing_sigma_db=0.0, wall_loss_db=0.0,
                           dropout_prob=1.0)
        rssi = simulate_rssi(aps, open_grid, Pose2D(6.0, 6.0, 0.0),
                             noise, rng)
        assert np.all(rssi == RSSI_MISSING_DBM)
        assert rssi_all_missing(rssi)

    def test_below_detection_floor_reads_missing(self, open_grid, rng):
        ap = _ap(1.0, 1.0, tx=-90.0, n=2.5)
        # 10 m at exponent 2.5 puts the level at -115 dBm, under the floor
        rssi = simulate_rssi([ap], open_grid, Pose2D(11.0, 1.0, 0.0),
                             QUIET, rng)
        assert rssi[0] == RSSI_MISSING_DBM
        assert RSSI_MISSING_DBM < RSSI_DETECT_FLOOR_DBM

    def test_shadowing_statistics(self, open_grid):
        sigma = 2.0
        noise = RadioNoise(shadowing_sigma_db=sigma, wall_loss_db=0.0,
                           dropout_prob=0.0)
        ap = _ap(2.0, 6.0, tx=-40.0, n=2.0)
        pose = Pose2D(8.0, 6.0, 0.0)
        clean = simulate_rssi([ap], open_grid, pose, QUIET, rng=np.random.
                              default_rng(0))[0] + 0.0
        rng = np.random.default_rng(77)
        draws = np.array([
            simulate_rssi([ap], open_grid, pose, noise, rng)[0]
            for _ in range(4000)
        ])
        assert np.all(draws > RSSI_DETECT_FLOOR_DBM)
        assert abs(draws.mean() - clean) < 3.0 * sigma / math.sqrt(4000)
        assert abs(draws.std() - sigma) < 0.05 * sigma

    def test_never_positive_never_below_missing(self, open_grid):
        rng = np.random.default_rng(5)
        aps = [_ap(1.0 + i, 11.0, tx=-35.0, ap_id=i) for i in range(10)]
        noise = RadioNoise(shadowing_sigma_db=8.0, wall_loss_db=6.0,
                           dropout_prob=0.3)
        for _ in range(50):
            rssi = simulate_rssi(aps, open_grid, Pose2D(6.0, 2.0, 0.0),
                                 noise, rng)
            assert np.all(rssi <= 0.0)
            assert np.all(rssi >= RSSI_MISSING_DBM)

    def test_same_stream_same_vector(self, open_grid):
        aps = [_ap(2.0, 2.0), _ap(9.0, 9.0, ap_id=1)]
        noise = RadioNoise(2.0, 6.0, 0.1)
        pose = Pose2D(5.0, 5.0, 0.3)
        a = simulate_rssi(aps, open_grid, pose, noise,
                          np.random.default_rng(42))
        b = simulate_rssi(aps, open_grid, pose, noise,
                          np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_pose_inside_wall_rejected(self, ring_grid, rng):
        with pytest.raises(ValueError, match="free space"):
            simulate_rssi([_ap(1.2, 1.2)], ring_grid,
                          Pose2D(6.2, 6.2, 0.0), QUIET, rng)

    def test_no_aps_rejected(self, open_grid, rng):
        with pytest.raises(ValueError, match="at least one"):
            simulate_rssi([], open_grid, Pose2D(1.0, 1.0, 0.0), QUIET, rng)

    def test_dropout_prob_validation(self):
        RadioNoise(dropout_prob=0.0)
        RadioNoise(dropout_prob=1.0)
        with pytest.raises(ValueError):
            RadioNoise(dropout_prob=1.5)
        with pytest.raises(ValueError):
            RadioNoise(shadowing_sigma_db=-0.1)


# ---------------------------------------------------------------------------
# IMU


class TestImu:
    def test_ideal_imu_reproduces_truth_channels(self, rng):
        t = np.arange(201) / 100.0
        a = 0.5 * np.sin(t)
        omega = 0.2 * np.cos(t)
        z = np.zeros_like(t)
        truth = GroundTruthPath(t=t, x=z, y=z, theta=z, v=z,
                                omega=omega, a=a)
        stream = simulate_imu(truth, ImuErrorModel(), rate_hz=100.0, rng=rng)
        assert np.array_equal(stream.t, t)
        assert np.allclose(stream.accel[:, 0], a, atol=1e-12)
        assert np.allclose(stream.gyro[:, 2], omega, atol=1e-12)
        assert np.all(stream.accel[:, 1:] == 0.0)
        assert np.all(stream.gyro[:, :2] == 0.0)

    def test_bias_only_stationary(self, rng):
        truth = _stationary_truth(2.0)
        model = ImuErrorModel(accel_bias=[0.05, -0.01, 0.0],
                              gyro_bias=[0.0, 0.0, 0.012])
        stream = simulate_imu(truth, model, rate_hz=100.0, rng=rng)
        assert np.all(stream.accel == np.array([0.05, -0.01, 0.0]))
        assert np.all(stream.gyro == np.array([0.0, 0.0, 0.012]))

    def test_noise_statistics(self):
        truth = _stationary_truth(1000.0, rate_hz=100.0)
        model = ImuErrorModel(accel_bias=[0.05, 0.0, 0.0],
                              accel_noise_std=0.1, gyro_noise_std=0.02)
        stream = simulate_imu(truth, model, rate_hz=100.0,
                              rng=np.random.default_rng(123))
        n = len(stream.t)
        assert n == 100001
        ax = stream.accel[:, 0]
        gz = stream.gyro[:, 2]
        assert abs(ax.mean() - 0.05) < 3.0 * 0.1 / math.sqrt(n)
        assert abs(ax.std() - 0.1) < 0.05 * 0.1
        assert abs(gz.mean()) < 3.0 * 0.02 / math.sqrt(n)
        assert abs(gz.std() - 0.02) < 0.05 * 0.02

    def test_sample_count_and_clock(self, rng):
        truth = _stationary_truth(2.0, rate_hz=100.0)
        for rate in (10.0, 50.0, 100.0, 400.0):
            stream = simulate_imu(truth, ImuErrorModel(), rate, rng)
            n = int(math.ceil(2.0 * rate - 1e-9)) + 1
            assert len(stream.t) == n
            assert np.array_equal(stream.t, np.arange(n) / rate)

    def test_clock_honours_truth_start_time(self, rng):
        t = 5.0 + np.arange(101) / 100.0
        z = np.zeros_like(t)
        truth = GroundTruthPath(t=t, x=z, y=z, theta=z, v=z, omega=z, a=z)
        stream = simulate_imu(truth, ImuErrorModel(), 20.0, rng)
        assert stream.t[0] == 5.0
        assert np.array_equal(stream.t, 5.0 + np.arange(21) / 20.0)

    def test_bad_rate_rejected(self, rng):
        truth = _stationary_truth(1.0)
        with pytest.raises(ValueError, match="rate_hz"):
            simulate_imu(truth, ImuErrorModel(), 0.0, rng)

    def test_error_model_validation(self):
        with pytest.raises(ValueError):
            ImuErrorModel(accel_noise_std=-0.1)
        model = ImuErrorModel(accel_bias=[1.0, 2.0, 3.0])
        assert model.accel_bias.shape == (3,)


# ---------------------------------------------------------------------------
# LiDAR


def _slab_grid():
    """12 m x 12 m open floor with one wall slab in x >= 8."""
    cells = np.full((240, 240), FREE, np.uint8)
    cells[:, 160:] = WALL
    return OccupancyGrid(width=240, height=240, resolution=0.05,
                         origin=(0.0, 0.0), cells=cells)


class TestLidar:
    def test_open_floor_all_misses(self, open_grid, rng):
        config = LidarConfig(beams=32, max_range_m=4.0, range_sigma_m=0.0)
        scan = simulate_lidar(open_grid, Pose2D(6.0, 6.0, 0.0), config, rng)
        assert len(scan) == 32
        assert np.all(scan.ranges == 4.0)
        assert not scan.hits.any()

    def test_known_wall_distance(self, rng):
        grid = _slab_grid()
        config = LidarConfig(beams=4, max_range_m=6.0, range_sigma_m=0.0)
        scan = simulate_lidar(grid, Pose2D(4.0, 6.0, 0.0), config, rng)
        # beam angles are [-pi, -pi/2, 0, pi/2]; only the forward beam hits
        assert scan.ranges[2] == pytest.approx(4.0, abs=grid.resolution)
        assert scan.hits.tolist() == [False, False, True, False]

    def test_beams_rotate_with_heading(self, rng):
        grid = _slab_grid()
        config = LidarConfig(beams=4, max_range_m=6.0, range_sigma_m=0.0)
        scan = simulate_lidar(grid, Pose2D(4.0, 6.0, math.pi / 2.0),
                              config, rng)
        # heading +90 deg swings the hit onto the sensor-frame -90 beam
        assert scan.hits.tolist() == [False, True, False, False]
        assert scan.ranges[1] == pytest.approx(4.0, abs=grid.resolution)
        assert np.array_equal(scan.angles, config.beam_angles())

    def test_ray_cast_matches_dense_sampling(self, ring_grid):
        """March each ray in tiny steps and take the first wall sample."""
        config = LidarConfig(beams=16, max_range_m=4.0, range_sigma_m=0.0)
        wall = ring_grid.wall_mask
        step = ring_grid.resolution / 200.0
        ts = np.arange(step, config.max_range_m + step, step)
        rng = np.random.default_rng(9)
        poses = [(1.2, 1.2, 0.0), (11.2, 6.2, 1.0), (6.2, 11.3, -2.0),
                 (0.3, 0.3, 0.7), (2.1, 2.1, 2.5)]
        for px, py, theta in poses:
            scan = simulate_lidar(ring_grid, Pose2D(px, py, theta),
                                  config, rng)
            for angle, got in zip(theta + scan.angles, scan.ranges):
                xs = px + ts * math.cos(angle)
                ys = py + ts * math.sin(angle)
                ix = np.floor((xs - ring_grid.origin[0]) /
                              ring_grid.resolution).astype(np.int64)
                iy = np.floor((ys - ring_grid.origin[1]) /
                              ring_grid.resolution).astype(np.int64)
                inside = ((ix >= 0) & (ix < ring_grid.width) &
                          (iy >= 0) & (iy < ring_grid.height))
                hit = inside & (wall[np.clip(iy, 0, ring_grid.height - 1),
                                     np.clip(ix, 0, ring_grid.width - 1)]
                                .astype(bool))
                idx = np.argmax(hit)
                if hit[idx]:
                    dense = ts[idx]
                    assert got <= dense + 1e-9
                    assert dense - got <= step + 1e-9
                else:
                    assert got >= config.max_range_m - step

    def test_noise_respects_range_bounds(self, rng):
        grid = _slab_grid()
        config = LidarConfig(beams=90, max_range_m=6.0, range_sigma_m=5.0)
        for _ in range(20):
            scan = simulate_lidar(grid, Pose2D(4.0, 6.0, 0.0), config, rng)
            assert np.all(scan.ranges > 0.0)
            assert np.all(scan.ranges <= config.max_range_m)

    def test_misses_carry_no_noise(self, open_grid):
        config = LidarConfig(beams=8, max_range_m=3.0, range_sigma_m=0.5)
        scan = simulate_lidar(open_grid, Pose2D(6.0, 6.0, 0.0), config,
                              np.random.default_rng(3))
        assert np.all(scan.ranges == 3.0)

    def test_pose_inside_wall_rejected(self, ring_grid, rng):
        with pytest.raises(ValueError, match="free space"):
            simulate_lidar(ring_grid, Pose2D(6.2, 6.2, 0.0),
                           LidarConfig(), rng)

    def test_beam_angles_cover_fov_half_open(self):
        config = LidarConfig(beams=90, fov_rad=2.0 * math.pi)
        ang = config.beam_angles()
        assert len(ang) == 90
        assert ang[0] == pytest.approx(-math.pi)
        assert ang[-1] == pytest.approx(math.pi - 2.0 * math.pi / 90.0)
        assert np.allclose(np.diff(ang), 2.0 * math.pi / 90.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LidarConfig(beams=0)
        with pytest.raises(ValueError):
            LidarConfig(fov_rad=7.0)
        with pytest.raises(ValueError):
            LidarConfig(max_range_m=0.0)
        with pytest.raises(ValueError):
            LidarConfig(range_sigma_m=-1.0)

    def test_scan_validation(self):
        with pytest.raises(ValueError, match="same shape"):
            LidarScan(t=0.0, angles=np.zeros(3), ranges=np.ones(2),
                      max_range=4.0)
        with pytest.raises(ValueError, match="max_range"):
            LidarScan(t=0.0, angles=np.zeros(2), ranges=[1.0, 5.0],
                      max_range=4.0)


# ---------------------------------------------------------------------------
# CSV round trips


class TestStreamIo:
    def test_imu_round_trip(self, tmp_path, rng):
        truth = _stationary_truth(1.0)
        model = ImuErrorModel(accel_bias=[0.006, 0.0, 0.0],
                              gyro_bias=[0.0, 0.0, 0.012],
                              accel_noise_std=0.02, gyro_noise_std=0.002)
        stream = simulate_imu(truth, model, 100.0, rng)
        path = tmp_path / "imu.csv"
        write_imu_csv(stream, path)
        back = read_imu_csv(path)
        assert np.allclose(back.t, stream.t, rtol=1e-8, atol=1e-12)
        assert np.allclose(back.accel, stream.accel, rtol=1e-8, atol=1e-12)
        assert np.allclose(back.gyro, stream.gyro, rtol=1e-8, atol=1e-12)
        # a second write of the parsed stream is byte-identical
        path2 = tmp_path / "imu2.csv"
        write_imu_csv(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_rssi_round_trip(self, tmp_path):
        times = np.array([0.0, 1.0, 2.0])
        matrix = np.array([[-40.5, RSSI_MISSING_DBM],
                           [-60.123456789, -55.0],
                           [RSSI_MISSING_DBM, RSSI_MISSING_DBM]])
        path = tmp_path / "rssi.csv"
        write_rssi_csv(times, matrix, path)
        t_back, m_back = read_rssi_csv(path)
        assert np.array_equal(t_back, times)
        assert np.allclose(m_back, matrix, rtol=1e-8)
        # the missing marker survives exactly, not just approximately
        assert m_back[2, 0] == RSSI_MISSING_DBM
        assert path.read_text().splitlines()[0] == "t,rssi_0,rssi_1"

    def test_rssi_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,foo\n0,1\n")
        with pytest.raises(ValueError, match="header"):
            read_rssi_csv(path)

    def test_scans_round_trip_groups_by_time(self, tmp_path, rng):
        grid = _slab_grid()
        config = LidarConfig(beams=12, max_range_m=6.0, range_sigma_m=0.01)
        scans = [
            simulate_lidar(grid, Pose2D(4.0, 6.0, 0.1 * k), config, rng,
                           t=0.1 * k)
            for k in range(3)
        ]
        path = tmp_path / "scans.csv"
        write_scans_csv(scans, path)
        back = read_scans_csv(path)
        assert len(back) == 3
        for orig, parsed in zip(scans, back):
            assert parsed.t == pytest.approx(orig.t)
            assert np.allclose(parsed.angles, orig.angles, rtol=1e-8)
            assert np.allclose(parsed.ranges, orig.ranges, rtol=1e-8)
            assert parsed.max_range == orig.max_range

    def test_empty_scan_file(self, tmp_path):
        path = tmp_path / "scans.csv"
        write_scans_csv([], path)
        assert read_scans_csv(path) == []
