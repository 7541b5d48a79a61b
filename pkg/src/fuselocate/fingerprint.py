"""Wi-Fi RSSI fingerprinting: database collection, preprocessing, and the
MLP / kNN position regressors.

The MLP is a plain float64 numpy implementation (He-uniform init, ReLU,
inverted dropout, Adam, MSE) so that training is exactly reproducible from
a seed and gradients can be checked against finite differences.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fileio import float_column, read_csv, read_json, write_csv, write_json
from .sensors import RSSI_MISSING_DBM, RadioNoise, simulate_rssi
from .world import OccupancyGrid, Pose2D

MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


@dataclass(frozen=True)
class Normalization:
    """Per-feature min-max mapping onto [0, 1].

    Features that were constant in the training data get scale 0 and map
    to 0 everywhere, which keeps them from influencing distances or the
    network while remaining invertible in shape.
    """

    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, np.float64))
        if self.offset.shape != self.scale.shape:
            raise ValueError("offset and scale must have the same shape")

    def apply(self, values) -> np.ndarray:
        return (np.asarray(values, np.float64) - self.offset) * self.scale


@dataclass(eq=False)
class FingerprintDatabase:
    """Survey records: one row per RSSI capture at a known position."""

    positions: np.ndarray
    rssi: np.ndarray
    normalization: Optional[Normalization] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, np.float64)
        self.rssi = np.asarray(self.rssi, np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (n, 2)")
        if self.rssi.ndim != 2 or self.rssi.shape[0] != self.positions.shape[0]:
            raise ValueError("rssi must have shape (n, ap_count)")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def ap_count(self) -> int:
        return self.rssi.shape[1]


def collect_database(grid: OccupancyGrid, aps, noise: RadioNoise,
                     rp_spacing: float, samples_per_rp: int,
                     rng: np.random.Generator) -> FingerprintDatabase:
    """Survey free space on a lattice of reference points.

    Lattice nodes start half a spacing in from the origin; nodes that fall
    on non-free cells are skipped.  Records are ordered row-major by RP and
    then by sample index, so collection is reproducible from the generator.
    """
    if rp_spacing <= 0:
        raise ValueError("rp_spacing must be positive")
    if samples_per_rp < 1:
        raise ValueError("samples_per_rp must be at least 1")
    xs = np.arange(grid.origin[0] + 0.5 * rp_spacing,
                   grid.origin[0] + grid.width_m, rp_spacing)
    ys = np.arange(grid.origin[1] + 0.5 * rp_spacing,
                   grid.origin[1] + grid.height_m, rp_spacing)
    positions = []
    rows = []
    for y in ys:
        for x in xs:
            if not grid.contains(x, y) or not grid.is_free(x, y):
                continue
            pose = Pose2D(x, y, 0.0)
            for _ in range(samples_per_rp):
                rows.append(simulate_rssi(aps, grid, pose, noise, rng))
                positions.append((x, y))
    if not rows:
        raise ValueError("no reference points landed in free space")
    return FingerprintDatabase(positions=np.array(positions),
                               rssi=np.array(rows))


def preprocess(db: FingerprintDatabase) -> FingerprintDatabase:
    """Outlier removal plus min-max normalization.  Idempotent.

    A record is dropped when any of its non-missing readings deviates from
    its reference point's per-feature median by more than 3x the
    interquartile range (computed over the RP's non-missing readings).
    Statistics for normalization are taken over the surviving records.
    """
    if db.normalization is not None:
        return db
    n = len(db)
    keep = np.ones(n, bool)
    groups = {}
    for i in range(n):
        groups.setdefault((db.positions[i, 0], db.positions[i, 1]), []).append(i)
    for idx in groups.values():
        block = db.rssi[idx, :]
        present = block != RSSI_MISSING_DBM
        for f in range(db.ap_count):
            vals = block[present[:, f], f]
            if len(vals) < 2:
                continue
            med = np.median(vals)
            q1, q3 = np.percentile(vals, [25.0, 75.0])
            limit = 3.0 * (q3 - q1)
            bad = present[:, f] & (np.abs(block[:, f] - med) > limit)
            for k in np.nonzero(bad)[0]:
                keep[idx[k]] = False
    positions = db.positions[keep]
    rssi = db.rssi[keep]
    if len(positions) == 0:
        raise ValueError("outlier filtering removed every record")
    lo = rssi.min(axis=0)
    hi = rssi.max(axis=0)
    span = hi - lo
    scale = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 0.0)
    norm = Normalization(offset=lo, scale=scale)
    return FingerprintDatabase(positions=positions, rssi=norm.apply(rssi),
                               normalization=norm)


# ---------------------------------------------------------------------------
# MLP


DEFAULT_HIDDEN = (109, 73, 54, 109, 109, 109)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    split_ratio: float = 0.8
    dropout_rate: float = 0.2
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass(eq=False)
class MlpModel:
    """Fully connected ReLU regressor mapping an RSSI vector to (x, y)."""

    dims: list
    weights: list
    biases: list
    dropout_rate: float = 0.2
    normalization: Optional[Normalization] = None

    @classmethod
    def init(cls, input_dim: int, hidden, dropout_rate: float,
             rng: np.random.Generator) -> "MlpModel":
        """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
        dims = [int(input_dim)] + [int(h) for h in hidden] + [2]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(dims=dims, weights=weights, biases=biases,
                   dropout_rate=dropout_rate)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray, training: bool = False,
                rng: Optional[np.random.Generator] = None):
        """Returns (output, cache).  Dropout (inverted) only when training."""
        x = np.asarray(x, np.float64)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ValueError(f"input must have shape (batch, {self.dims[0]})")
        if training and self.dropout_rate > 0 and rng is None:
            raise ValueError("training-mode forward with dropout needs a generator")
        h = x
        cache = []
        for li in range(self.n_layers):
            z = h @ self.weights[li] + self.biases[li]
            mask = None
            if li < self.n_layers - 1:
                out = np.maximum(z, 0.0)
                if training and self.dropout_rate > 0:
                    mask = (rng.random(out.shape) >= self.dropout_rate) / (
                        1.0 - self.dropout_rate
                    )
                    out = out * mask
            else:
                out = z
            cache.append((h, z, mask))
            h = out
        return h, cache

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of the scalar loss w.r.t. weights and biases."""
        gw = [None] * self.n_layers
        gb = [None] * self.n_layers
        g = np.asarray(grad_out, np.float64)
        for li in range(self.n_layers - 1, -1, -1):
            h_in, z, mask = cache[li]
            if li < self.n_layers - 1:
                if mask is not None:
                    g = g * mask
                g = g * (z > 0.0)
            gw[li] = h_in.T @ g
            gb[li] = g.sum(axis=0)
            if li > 0:
                g = g @ self.weights[li].T
        return gw, gb


@dataclass(eq=False)
class TrainResult:
    model: MlpModel
    train_mse: np.ndarray
    test_mse: np.ndarray
    n_train: int
    n_test: int


def train_mlp(db: FingerprintDatabase, config: TrainConfig) -> TrainResult:
    """Adam/MSE training on a preprocessed database.

    All stochastic pieces (init, split, shuffles, dropout masks) come from
    one generator seeded by config.seed, so results are reproducible.
    """
    if db.normalization is None:
        raise ValueError("train_mlp needs a preprocessed database")
    n = len(db)
    if n < 2:
        raise ValueError("need at least two records to split")
    rng = np.random.default_rng(config.seed)
    model = MlpModel.init(db.ap_count, config.hidden, config.dropout_rate, rng)
    model.normalization = db.normalization
    perm = rng.permutation(n)
    n_train = int(round(config.split_ratio * n))
    n_train = min(max(n_train, 1), n - 1)
    train_idx = perm[:n_train]
    test_idx = perm[n_train:]
    x = db.rssi
    y = db.positions
    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0
    train_curve = np.empty(config.epochs)
    test_curve = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        sse = 0.0
        count = 0
        for start in range(0, n_train, config.batch_size):
            idx = train_idx[order[start : start + config.batch_size]]
            out, cache = model.forward(x[idx], training=True, rng=rng)
            err = out - y[idx]
            batch_sse = float(np.sum(err * err))
            if not np.isfinite(batch_sse):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}"
                )
            sse += batch_sse
            count += err.size
            grad = (2.0 / err.size) * err
            gw, gb = model.backward(cache, grad)
            step += 1
            bc1 = 1.0 - config.beta1 ** step
            bc2 = 1.0 - config.beta2 ** step
            for li in range(model.n_layers):
                m_w[li] = config.beta1 * m_w[li] + (1 - config.beta1) * gw[li]
                v_w[li] = config.beta2 * v_w[li] + (1 - config.beta2) * gw[li] ** 2
                model.weights[li] -= config.learning_rate * (
                    (m_w[li] / bc1) / (np.sqrt(v_w[li] / bc2) + config.epsilon)
                )
                m_b[li] = config.beta1 * m_b[li] + (1 - config.beta1) * gb[li]
                v_b[li] = config.beta2 * v_b[li] + (1 - config.beta2) * gb[li] ** 2
                model.biases[li] -= config.learning_rate * (
                    (m_b[li] / bc1) / (np.sqrt(v_b[li] / bc2) + config.epsilon)
                )
        train_curve[epoch] = sse / count
        if len(test_idx):
            pred, _ = model.forward(x[test_idx], training=False)
            test_curve[epoch] = float(np.mean((pred - y[test_idx]) ** 2))
        else:
            test_curve[epoch] = np.nan
    return TrainResult(model=model, train_mse=train_curve, test_mse=test_curve,
                       n_train=n_train, n_test=len(test_idx))


def predict(model: MlpModel, rssi) -> np.ndarray:
    """Position estimates for raw RSSI: (d,) -> (2,) and (n, d) -> (n, 2)."""
    rssi = np.asarray(rssi, np.float64)
    single = rssi.ndim == 1
    batch = rssi[None, :] if single else rssi
    if batch.ndim != 2 or batch.shape[-1] != model.dims[0]:
        raise ValueError(f"expected {model.dims[0]} RSSI values per row, "
                         f"got shape {rssi.shape}")
    if model.normalization is None:
        raise ValueError("model carries no normalization; train or load one first")
    out, _ = model.forward(model.normalization.apply(batch), training=False)
    return out[0] if single else out


def knn_predict(db: FingerprintDatabase, rssi, k: int) -> np.ndarray:
    """Mean position of the k nearest records in normalized RSSI space.

    Ties in distance break toward the lower record index (stable sort).
    """
    if db.normalization is None:
        raise ValueError("knn_predict needs a preprocessed database")
    if not 1 <= k <= len(db):
        raise ValueError(f"k must lie in [1, {len(db)}]")
    q = db.normalization.apply(np.asarray(rssi, np.float64))
    d2 = np.sum((db.rssi - q[None, :]) ** 2, axis=1)
    nearest = np.argsort(d2, kind="stable")[:k]
    return db.positions[nearest].mean(axis=0)


# ---------------------------------------------------------------------------
# persistence


def save_database_csv(db: FingerprintDatabase, path) -> None:
    """Raw survey records only; refuse to save a preprocessed database."""
    if db.normalization is not None:
        raise ValueError("save_database_csv expects a raw (unpreprocessed) database")
    header = ["x", "y"] + [f"rssi_{i}" for i in range(db.ap_count)]
    cols = [db.positions[:, 0], db.positions[:, 1]]
    cols += [db.rssi[:, i] for i in range(db.ap_count)]
    write_csv(path, header, cols)


def load_database_csv(path) -> FingerprintDatabase:
    header, cols = read_csv(path)
    if header[:2] != ["x", "y"] or any(
        h != f"rssi_{i}" for i, h in enumerate(header[2:])
    ):
        raise ValueError(f"{path}: unexpected database header {header!r}")
    positions = np.column_stack([float_column(cols[0]), float_column(cols[1])])
    rssi = (np.column_stack([float_column(c) for c in cols[2:]])
            if len(cols) > 2 else np.zeros((len(positions), 0)))
    return FingerprintDatabase(positions=positions, rssi=rssi)


def save_model_json(model: MlpModel, path) -> None:
    if model.normalization is None:
        raise ValueError("refusing to save a model without normalization")
    write_json(path, {
        "biases": [b.tolist() for b in model.biases],
        "dims": list(model.dims),
        "dropout_rate": model.dropout_rate,
        "format_version": MODEL_FORMAT_VERSION,
        "normalization": {
            "offset": model.normalization.offset.tolist(),
            "scale": model.normalization.scale.tolist(),
        },
        "weights": [w.tolist() for w in model.weights],
    })


def load_model_json(path) -> MlpModel:
    data = read_json(path)
    version = data.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported model format_version {version!r} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    dims = [int(d) for d in data["dims"]]
    weights = [np.array(w, np.float64) for w in data["weights"]]
    biases = [np.array(b, np.float64) for b in data["biases"]]
    for li, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if weights[li].shape != (fan_in, fan_out) or biases[li].shape != (fan_out,):
            raise ValueError(f"{path}: layer {li} shapes disagree with dims")
    norm = Normalization(offset=np.array(data["normalization"]["offset"]),
                         scale=np.array(data["normalization"]["scale"]))
    return MlpModel(dims=dims, weights=weights, biases=biases,
                    dropout_rate=float(data["dropout_rate"]),
                    normalization=norm)
