"""Fingerprint pipeline: survey, preprocessing, MLP training, kNN, storage."""

import math

import numpy as np
import pytest

from fuselocate.fingerprint import (
    DEFAULT_HIDDEN,
    FingerprintDatabase,
    MlpModel,
    Normalization,
    TrainConfig,
    TrainingDivergedError,
    collect_database,
    knn_predict,
    load_database_csv,
    load_model_json,
    predict,
    preprocess,
    save_database_csv,
    save_model_json,
    train_mlp,
)
from fuselocate.sensors import RSSI_MISSING_DBM, RadioNoise
from fuselocate.world import AccessPoint, Pose2D, place_aps
from fuselocate.sensors import simulate_rssi

QUIET = RadioNoise(shadowing_sigma_db=0.0, wall_loss_db=6.0, dropout_prob=0.0)


def _aps_on(grid, count=8, seed=11):
    return place_aps(grid, count, "Perimeter", seed)


def _toy_db(n_rp=12, samples=2, d=6, seed=5, sigma=0.0):
    """Synthetic database with a smooth position-to-RSSI map."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(1.0, 11.0, (n_rp, 2))
    anchors = rng.uniform(0.0, 12.0, (d, 2))
    rows, where = [], []
    for p in pos:
        dist = np.hypot(*(anchors - p).T)
        clean = -40.0 - 25.0 * np.log10(np.maximum(dist, 1e-3))
        for _ in range(samples):
            rows.append(clean + rng.standard_normal(d) * sigma)
            where.append(p)
    return FingerprintDatabase(positions=np.array(where), rssi=np.array(rows))


# ---------------------------------------------------------------------------
# survey collection


class TestCollect:
    def test_open_floor_lattice_count(self, open_grid, rng):
        aps = _aps_on(open_grid)
        db = collect_database(open_grid, aps, QUIET, rp_spacing=1.0,
                              samples_per_rp=3, rng=rng)
        # 12 lattice columns x 12 rows, all free, 3 captures each
        assert len(db) == 12 * 12 * 3
        assert db.ap_count == len(aps)
        assert db.normalization is None

    def test_ring_floor_skips_blocked_nodes(self, ring_grid, rng):
        aps = _aps_on(ring_grid)
        db = collect_database(ring_grid, aps, QUIET, rp_spacing=0.5,
                              samples_per_rp=1, rng=rng)
        expected = 0
        for y in np.arange(0.25, 12.4, 0.5):
            for x in np.arange(0.25, 12.4, 0.5):
                expected += ring_grid.is_free(x, y)
        assert len(db) == expected
        for x, y in db.positions:
            assert ring_grid.is_free(x, y)

    def test_sample_mean_approaches_clean_level(self, open_grid):
        ap = [AccessPoint(ap_id=0, x=2.0, y=6.0, tx_power_dbm=-40.0,
                          path_loss_exponent=2.0)]
        noise = RadioNoise(shadowing_sigma_db=2.0, wall_loss_db=0.0,
                           dropout_prob=0.0)
        db = collect_database(open_grid, ap, noise, rp_spacing=20.0,
                              samples_per_rp=100,
                              rng=np.random.default_rng(8))
        assert len(db) == 100  # single lattice node at (10, 10)
        clean = simulate_rssi(ap, open_grid, Pose2D(*db.positions[0], 0.0),
                              QUIET, np.random.default_rng(0))[0]
        assert abs(db.rssi[:, 0].mean() - clean) < 3.0 * 2.0 / math.sqrt(100)

    def test_collection_is_reproducible(self, ring_grid):
        aps = _aps_on(ring_grid)
        noise = RadioNoise(2.0, 6.0, 0.05)
        a = collect_database(ring_grid, aps, noise, 1.0, 2,
                             np.random.default_rng(3))
        b = collect_database(ring_grid, aps, noise, 1.0, 2,
                             np.random.default_rng(3))
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.rssi, b.rssi)

    def test_bad_arguments(self, open_grid, rng):
        aps = _aps_on(open_grid)
        with pytest.raises(ValueError, match="rp_spacing"):
            collect_database(open_grid, aps, QUIET, 0.0, 1, rng)
        with pytest.raises(ValueError, match="samples_per_rp"):
            collect_database(open_grid, aps, QUIET, 1.0, 0, rng)


# ---------------------------------------------------------------------------
# preprocessing


class TestPreprocess:
    def test_normalized_range_and_endpoints(self):
        db = preprocess(_toy_db(sigma=1.0))
        assert db.normalization is not None
        assert np.all(db.rssi >= 0.0) and np.all(db.rssi <= 1.0)
        assert np.allclose(db.rssi.min(axis=0), 0.0)
        assert np.allclose(db.rssi.max(axis=0), 1.0)
        assert not np.any(np.isnan(db.rssi))

    def test_gross_outlier_record_is_dropped(self):
        raw = _toy_db(n_rp=6, samples=5, sigma=0.0)
        bad = raw.rssi.copy()
        bad[7, 2] = -1000.0
        corrupted = FingerprintDatabase(positions=raw.positions, rssi=bad)
        kept = preprocess(corrupted)
        assert len(kept) == len(raw) - 1
        # the other four records at the same point survive
        p = raw.positions[7]
        same = np.all(kept.positions == p, axis=1)
        assert same.sum() == 4

    def test_idempotent(self):
        once = preprocess(_toy_db(sigma=1.5))
        twice = preprocess(once)
        assert twice is once

    def test_constant_feature_maps_to_zero(self):
        raw = _toy_db(n_rp=8, samples=2, sigma=0.5)
        rssi = raw.rssi.copy()
        rssi[:, 3] = RSSI_MISSING_DBM  # an AP nobody ever hears
        db = preprocess(FingerprintDatabase(positions=raw.positions,
                                            rssi=rssi))
        assert np.all(db.rssi[:, 3] == 0.0)
        assert db.normalization.scale[3] == 0.0

    def test_missing_marker_not_treated_as_sample(self):
        """A single non-missing reading per RP leaves nothing to filter on."""
        pos = np.repeat(np.array([[2.0, 2.0], [9.0, 9.0]]), 2, axis=0)
        rssi = np.full((4, 2), RSSI_MISSING_DBM)
        rssi[0, 0] = -50.0
        rssi[2, 0] = -70.0
        db = preprocess(FingerprintDatabase(positions=pos, rssi=rssi))
        assert len(db) == 4


# ---------------------------------------------------------------------------
# MLP mechanics


class TestMlp:
    def test_init_shapes_and_he_limits(self, rng):
        model = MlpModel.init(24, DEFAULT_HIDDEN, 0.2, rng)
        assert model.dims == [24, 109, 73, 54, 109, 109, 109, 2]
        for li, (w, b) in enumerate(zip(model.weights, model.biases)):
            fan_in, fan_out = model.dims[li], model.dims[li + 1]
            assert w.shape == (fan_in, fan_out)
            assert b.shape == (fan_out,)
            assert np.all(np.abs(w) <= math.sqrt(6.0 / fan_in))
            assert np.all(b == 0.0)

    def test_forward_output_shape(self, rng):
        model = MlpModel.init(6, (8, 8), 0.0, rng)
        out, cache = model.forward(np.zeros((5, 6)))
        assert out.shape == (5, 2)
        assert len(cache) == model.n_layers

    def test_forward_checks_input_width(self, rng):
        model = MlpModel.init(6, (8,), 0.0, rng)
        with pytest.raises(ValueError, match="shape"):
            model.forward(np.zeros((5, 7)))

    def test_training_dropout_needs_generator(self, rng):
        model = MlpModel.init(4, (8,), 0.5, rng)
        with pytest.raises(ValueError, match="generator"):
            model.forward(np.zeros((2, 4)), training=True)

    def test_backward_matches_finite_differences(self):
        """Central differences on the batch MSE, dropout disabled."""
        rng = np.random.default_rng(17)
        model = MlpModel.init(5, (8, 6), 0.0, rng)
        x = rng.standard_normal((10, 5))
        y = rng.standard_normal((10, 2))

        def loss():
            out, _ = model.forward(x)
            return float(np.mean((out - y) ** 2))

        out, cache = model.forward(x)
        err = out - y
        gw, gb = model.backward(cache, (2.0 / err.size) * err)
        eps = 1e-5
        checks = 0
        for li in range(model.n_layers):
            w = model.weights[li]
            flat = [(i, j) for i in range(w.shape[0]) for j in range(w.shape[1])]
            for i, j in [flat[k] for k in
                         rng.choice(len(flat), size=12, replace=False)]:
                keep = w[i, j]
                w[i, j] = keep + eps
                up = loss()
                w[i, j] = keep - eps
                dn = loss()
                w[i, j] = keep
                fd = (up - dn) / (2.0 * eps)
                assert gw[li][i, j] == pytest.approx(fd, rel=1e-4, abs=1e-8)
                checks += 1
            b = model.biases[li]
            for j in range(b.shape[0]):
                keep = b[j]
                b[j] = keep + eps
                up = loss()
                b[j] = keep - eps
                dn = loss()
                b[j] = keep
                fd = (up - dn) / (2.0 * eps)
                assert gb[li][j] == pytest.approx(fd, rel=1e-4, abs=1e-8)
                checks += 1
        assert checks >= 36


# ---------------------------------------------------------------------------
# training behaviour


def _small_config(**kw):
    base = dict(epochs=150, batch_size=8, learning_rate=3e-3,
                dropout_rate=0.0, seed=1, hidden=(24, 16))
    base.update(kw)
    return TrainConfig(**base)


class TestTraining:
    def test_loss_decreases_and_overfits_toy_data(self):
        db = preprocess(_toy_db(n_rp=16, samples=2, sigma=0.0))
        result = train_mlp(db, _small_config(epochs=400))
        assert result.train_mse[-1] < 0.1 * result.train_mse[0]
        assert result.n_train + result.n_test == len(db)
        # a training record should be recovered to sub-half-meter accuracy
        raw = _toy_db(n_rp=16, samples=2, sigma=0.0)
        pred = predict(result.model, raw.rssi[0])
        err = np.hypot(*(pred - raw.positions[0]))
        assert err < 0.5

    def test_training_is_deterministic(self):
        db = preprocess(_toy_db(sigma=0.5))
        r1 = train_mlp(db, _small_config(epochs=40))
        r2 = train_mlp(db, _small_config(epochs=40))
        assert np.array_equal(r1.train_mse, r2.train_mse)
        assert np.array_equal(r1.test_mse, r2.test_mse)
        for w1, w2 in zip(r1.model.weights, r2.model.weights):
            assert np.array_equal(w1, w2)

    def test_seed_changes_the_run(self):
        db = preprocess(_toy_db(sigma=0.5))
        r1 = train_mlp(db, _small_config(epochs=10, seed=1))
        r2 = train_mlp(db, _small_config(epochs=10, seed=2))
        assert not np.array_equal(r1.train_mse, r2.train_mse)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self):
        # Adam keeps step size ~learning_rate, so the rate has to be large
        # enough that the very first update overflows the forward pass
        db = preprocess(_toy_db(sigma=0.5))
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train_mlp(db, _small_config(epochs=50, learning_rate=1e200))

    def test_requires_preprocessed_database(self):
        with pytest.raises(ValueError, match="preprocessed"):
            train_mlp(_toy_db(), _small_config())

    def test_split_counts(self):
        db = preprocess(_toy_db(n_rp=10, samples=2, sigma=0.3))
        result = train_mlp(db, _small_config(epochs=2))
        assert result.n_train == round(0.8 * len(db))
        assert result.n_test == len(db) - result.n_train
        assert np.all(np.isfinite(result.test_mse))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(split_ratio=1.0)
        with pytest.raises(ValueError):
            TrainConfig(dropout_rate=1.0)


# ---------------------------------------------------------------------------
# prediction


class TestPredict:
    def test_batch_equals_singles(self):
        db = preprocess(_toy_db(sigma=0.5))
        model = train_mlp(db, _small_config(epochs=20)).model
        raw = _toy_db(sigma=0.5)
        batch = predict(model, raw.rssi[:6])
        assert batch.shape == (6, 2)
        for i in range(6):
            # BLAS may pick different kernels for (1, d) and (6, d) inputs,
            # so agreement is to rounding, not bit-for-bit
            single = predict(model, raw.rssi[i])
            assert np.allclose(single, batch[i], rtol=1e-10, atol=1e-12)

    def test_inference_is_deterministic_despite_dropout_config(self):
        db = preprocess(_toy_db(sigma=0.5))
        model = train_mlp(db, _small_config(epochs=20, dropout_rate=0.4)).model
        raw = _toy_db(sigma=0.5)
        a = predict(model, raw.rssi[3])
        b = predict(model, raw.rssi[3])
        assert np.array_equal(a, b)

    def test_all_missing_vector_is_finite(self):
        db = preprocess(_toy_db(sigma=0.5))
        model = train_mlp(db, _small_config(epochs=20)).model
        out = predict(model, np.full(db.ap_count, RSSI_MISSING_DBM))
        assert out.shape == (2,)
        assert np.all(np.isfinite(out))

    def test_wrong_width_rejected(self):
        db = preprocess(_toy_db(sigma=0.5))
        model = train_mlp(db, _small_config(epochs=2)).model
        with pytest.raises(ValueError, match="RSSI values"):
            predict(model, np.zeros(db.ap_count + 1))


# ---------------------------------------------------------------------------
# kNN


class TestKnn:
    def test_exact_vector_k1_returns_its_position(self):
        db = preprocess(_toy_db(n_rp=10, samples=1, sigma=0.0))
        raw = _toy_db(n_rp=10, samples=1, sigma=0.0)
        for i in (0, 4, 9):
            got = knn_predict(db, raw.rssi[i], k=1)
            assert np.allclose(got, raw.positions[i], atol=1e-12)

    def test_k_equals_n_returns_centroid(self):
        db = preprocess(_toy_db(n_rp=9, samples=1, sigma=0.2))
        raw = _toy_db(n_rp=9, samples=1, sigma=0.2)
        got = knn_predict(db, raw.rssi[0], k=len(db))
        assert np.allclose(got, db.positions.mean(axis=0), atol=1e-12)

    def test_matches_bruteforce_average(self):
        db = preprocess(_toy_db(n_rp=14, samples=2, sigma=0.8))
        rng = np.random.default_rng(33)
        for _ in range(20):
            q = rng.uniform(-80.0, -40.0, db.ap_count)
            qn = db.normalization.apply(q)
            d2 = np.sum((db.rssi - qn) ** 2, axis=1)
            order = np.argsort(d2, kind="stable")
            for k in (1, 3, 5):
                expect = db.positions[order[:k]].mean(axis=0)
                assert np.allclose(knn_predict(db, q, k), expect, atol=1e-12)

    def test_ties_resolve_to_lower_index(self):
        pos = np.array([[1.0, 1.0], [9.0, 9.0], [5.0, 5.0]])
        rssi = np.array([[-50.0, -60.0], [-50.0, -60.0], [-70.0, -40.0]])
        db = preprocess(FingerprintDatabase(positions=pos, rssi=rssi))
        got = knn_predict(db, np.array([-50.0, -60.0]), k=1)
        assert np.allclose(got, [1.0, 1.0])

    def test_k_bounds(self):
        db = preprocess(_toy_db(n_rp=5, samples=1))
        with pytest.raises(ValueError, match="k must"):
            knn_predict(db, np.zeros(db.ap_count), k=0)
        with pytest.raises(ValueError, match="k must"):
            knn_predict(db, np.zeros(db.ap_count), k=len(db) + 1)

    def test_requires_preprocessed_database(self):
        with pytest.raises(ValueError, match="preprocessed"):
            knn_predict(_toy_db(), np.zeros(6), k=1)


# ---------------------------------------------------------------------------
# persistence


class TestPersistence:
    def test_database_csv_round_trip(self, tmp_path):
        db = _toy_db(sigma=1.0)
        path = tmp_path / "db.csv"
        save_database_csv(db, path)
        back = load_database_csv(path)
        assert np.allclose(back.positions, db.positions, rtol=1e-8)
        assert np.allclose(back.rssi, db.rssi, rtol=1e-8)
        path2 = tmp_path / "db2.csv"
        save_database_csv(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_database_csv_refuses_preprocessed(self, tmp_path):
        db = preprocess(_toy_db())
        with pytest.raises(ValueError, match="raw"):
            save_database_csv(db, tmp_path / "db.csv")

    def test_database_csv_header_check(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y,foo\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            load_database_csv(path)

    def test_model_json_round_trip_bit_exact(self, tmp_path):
        db = preprocess(_toy_db(sigma=0.5))
        model = train_mlp(db, _small_config(epochs=5)).model
        path = tmp_path / "model.json"
        save_model_json(model, path)
        back = load_model_json(path)
        assert back.dims == model.dims
        assert back.dropout_rate == model.dropout_rate
        for w1, w2 in zip(back.weights, model.weights):
            assert np.array_equal(w1, w2)
        for b1, b2 in zip(back.biases, model.biases):
            assert np.array_equal(b1, b2)
        assert np.array_equal(back.normalization.offset,
                              model.normalization.offset)
        assert np.array_equal(back.normalization.scale,
                              model.normalization.scale)
        # loaded model predicts bit-identically
        raw = _toy_db(sigma=0.5)
        assert np.array_equal(predict(back, raw.rssi[0]),
                              predict(model, raw.rssi[0]))
        path2 = tmp_path / "model2.json"
        save_model_json(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_model_json_version_and_shape_checks(self, tmp_path):
        db = preprocess(_toy_db(sigma=0.5))
        model = train_mlp(db, _small_config(epochs=2)).model
        path = tmp_path / "model.json"
        save_model_json(model, path)
        import json
        data = json.loads(path.read_text())
        data["format_version"] = "nope"
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(data))
        with pytest.raises(ValueError, match="format_version"):
            load_model_json(bad)
        data = json.loads(path.read_text())
        data["dims"][1] += 1
        bad.write_text(json.dumps(data))
        with pytest.raises(ValueError, match="shapes"):
            load_model_json(bad)

    def test_unnormalized_model_refused(self, rng):
        model = MlpModel.init(4, (8,), 0.0, rng)
        with pytest.raises(ValueError, match="normalization"):
            save_model_json(model, "/tmp/never-written.json")


# ---------------------------------------------------------------------------
# end-to-end quality against the lattice baseline


def test_mlp_competitive_with_knn_on_survey(ring_grid):
    """Held-out localization: the network should land within a factor of two
    of the k=3 nearest-neighbour baseline on the same survey."""
    aps = place_aps(ring_grid, 16, "Perimeter", seed=21)
    noise = RadioNoise(shadowing_sigma_db=2.0, wall_loss_db=6.0,
                       dropout_prob=0.02)
    db_raw = collect_database(ring_grid, aps, noise, rp_spacing=0.75,
                              samples_per_rp=2,
                              rng=np.random.default_rng(99))
    db = preprocess(db_raw)
    config = TrainConfig(epochs=120, batch_size=32, learning_rate=2e-3,
                         dropout_rate=0.1, seed=4, hidden=(64, 48, 32))
    model = train_mlp(db, config).model

    eval_rng = np.random.default_rng(500)
    free = ring_grid.free_cells()
    picks = free[eval_rng.integers(0, len(free), 60)]
    pts = (picks + eval_rng.uniform(0.2, 0.8, (60, 2))) * ring_grid.resolution
    errs_mlp, errs_knn = [], []
    for x, y in pts:
        if not ring_grid.is_free(x, y):
            continue
        vec = simulate_rssi(aps, ring_grid, Pose2D(x, y, 0.0), noise,
                            eval_rng)
        errs_mlp.append(np.hypot(*(predict(model, vec) - (x, y))))
        errs_knn.append(np.hypot(*(knn_predict(db, vec, k=3) - (x, y))))
    assert len(errs_mlp) >= 40
    mean_mlp = float(np.mean(errs_mlp))
    mean_knn = float(np.mean(errs_knn))
    assert mean_knn < 2.0  # baseline sanity on this survey density
    assert mean_mlp < 2.0 * mean_knn
