"""
Feedforward network that maps a normalized 157-point BGS to a normalized BFS.

Hidden layers use the sigmoid, the output layer is a plain weighted sum.
The cost of one sample is (1/2J) sum_j (h_j - y_j)^2 and batch costs are
sums over samples; ``batch_mse`` reports their mean.
"""
import dataclasses
import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, solve
from scipy.special import expit

from . import config
from .containers import ContainerReader, pack_floats
from .dataset import Dataset, dataset_hash
from .errors import (
    DataError,
    DimensionMismatchError,
    DomainError,
    GridContractError,
    ShapeError,
    TrainingDivergedError,
)
from .spectra import normalize_columns, normalize_spectrum

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"BFSFNN01"
MODEL_FAMILY = b"BFSFNN"

ACTIVATION_IDS = {"linear": 0, "sigmoid": 1}
ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_IDS.items()}

STEEPEST_DESCENT = "steepest_descent"
LEVENBERG_MARQUARDT = "levenberg_marquardt"


def _activate(name, z):
    if name == "sigmoid":
        return expit(z)
    return z


def _slope(name, a):
    """Derivative of the activation, expressed through its output."""
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


@dataclass(frozen=True)
class NetworkLayout:
    """Layer widths [M, I1, I2, ..., J] and activation choice."""

    sizes: tuple
    hidden_activation: str = "sigmoid"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2:
            raise DomainError("a layout needs at least an input and an output layer")
        if any(s < 1 for s in self.sizes):
            raise DomainError("layer widths must be >= 1")
        for name in (self.hidden_activation, self.output_activation):
            if name not in ACTIVATION_IDS:
                raise DomainError(f"unknown activation {name!r}")

    @classmethod
    def full(cls):
        return cls((157, 40, 15, 1))

    @classmethod
    def desk(cls):
        return cls((157, 20, 8, 1))

    @property
    def input_size(self):
        return self.sizes[0]

    @property
    def output_size(self):
        return self.sizes[-1]


@dataclass(frozen=True, eq=False)
class Network:
    """Trained artifact: weights, optional biases and normalization constants."""

    layout: NetworkLayout
    weights: tuple
    biases: tuple | None = None
    scan_range_mhz: float = 156.0
    step_mhz: float = 1.0
    provenance: str = ""

    def __post_init__(self):
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        sizes = self.layout.sizes
        if len(weights) != len(sizes) - 1:
            raise ShapeError(f"{len(weights)} weight matrices for layout {sizes}")
        for l, w in enumerate(weights):
            if w.shape != (sizes[l + 1], sizes[l]):
                raise ShapeError(
                    f"layer {l} weights have shape {w.shape}, expected {(sizes[l + 1], sizes[l])}"
                )
            if not np.all(np.isfinite(w)):
                raise DataError(f"layer {l} weights are not finite")
        object.__setattr__(self, "weights", weights)
        if self.biases is not None:
            biases = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
            if len(biases) != len(weights) or any(
                b.shape[0] != sizes[l + 1] for l, b in enumerate(biases)
            ):
                raise ShapeError("bias vectors do not match the layout")
            object.__setattr__(self, "biases", biases)

    @property
    def use_bias(self):
        return self.biases is not None

    @property
    def parameter_count(self):
        return sum(
            w.size + (self.biases[l].size if self.use_bias else 0)
            for l, w in enumerate(self.weights)
        )

    def parameter_vector(self):
        """All parameters, layer by layer: weights row-major then biases."""
        parts = []
        for l, w in enumerate(self.weights):
            parts.append(w.ravel())
            if self.use_bias:
                parts.append(self.biases[l])
        return np.concatenate(parts)

    def with_parameters(self, vector):
        """Copy of this network holding the parameters of ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.parameter_count:
            raise ShapeError(f"expected {self.parameter_count} parameters, got {vector.size}")
        weights, biases, offset = [], [], 0
        for w in self.weights:
            weights.append(vector[offset:offset + w.size].reshape(w.shape))
            offset += w.size
            if self.use_bias:
                biases.append(vector[offset:offset + w.shape[0]])
                offset += w.shape[0]
        return dataclasses.replace(
            self, weights=tuple(weights), biases=tuple(biases) if self.use_bias else None
        )


@dataclass(frozen=True)
class TrainConfig:
    """Trainer selection and controls."""

    algorithm: str = LEVENBERG_MARQUARDT
    eta: float = 0.01
    max_iterations: int = 30
    lm_lambda0: float = 1e-3
    lm_lambda_up: float = 10.0
    lm_lambda_down: float = 10.0
    lm_lambda_max: float = 1e10
    seed: int = 0
    early_stop_patience: int | None = 5
    restore_best: bool = True
    block_size: int = config.LM_BLOCK_SIZE

    def __post_init__(self):
        if self.algorithm not in (STEEPEST_DESCENT, LEVENBERG_MARQUARDT):
            raise DomainError(f"unknown training algorithm {self.algorithm!r}")
        if self.eta < 0:
            raise DomainError("eta must be >= 0")
        if min(self.lm_lambda0, self.lm_lambda_up, self.lm_lambda_down, self.lm_lambda_max) <= 0:
            raise DomainError("LM damping controls must be > 0")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.block_size < 1:
            raise DomainError("block_size must be >= 1")


@dataclass
class TrainRecord:
    iteration: int
    train_mse: float
    test_mse: float
    lam: float
    wall_seconds: float


@dataclass
class TrainLog:
    """Per-iteration MSE history."""

    records: list = field(default_factory=list)
    selected_iteration: int | None = None

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise DomainError("iteration indices must be strictly increasing")
        self.records.append(record)

    def final(self):
        return self.records[-1]

    def selected(self):
        """Record of the iteration whose weights the trainer returned."""
        if self.selected_iteration is None:
            return self.final()
        return next(r for r in self.records if r.iteration == self.selected_iteration)

    def to_frame(self):
        return pd.DataFrame(
            [dataclasses.asdict(r) for r in self.records],
            columns=["iteration", "train_mse", "test_mse", "lam", "wall_seconds"],
        )

    def write_csv(self, path, timings=True):
        """Write the log; ``timings=False`` drops the wall-clock column."""
        frame = self.to_frame()
        if not timings:
            frame = frame.drop(columns="wall_seconds")
        frame.to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class Gradient:
    """Gradient of the batch cost, laid out like the network parameters."""

    weights: tuple
    biases: tuple | None

    def vector(self):
        parts = []
        for l, w in enumerate(self.weights):
            parts.append(w.ravel())
            if self.biases is not None:
                parts.append(self.biases[l])
        return np.concatenate(parts)


def init_network(layout, seed, use_bias=True, scan_range_mhz=156.0, step_mhz=1.0):
    """
    Draw weights uniformly from +/- sqrt(6 / (fan_in + fan_out)); biases start at zero.

    Args:
        layout: NetworkLayout
        seed: Initialization seed
        use_bias: Include bias vectors (False reproduces the bias-free equations)
        scan_range_mhz: Scan range used to normalize targets
        step_mhz: Frequency step of the training spectra

    Returns:
        Network
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layout.sizes[:-1], layout.sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(
        layout,
        tuple(weights),
        tuple(biases) if use_bias else None,
        scan_range_mhz=scan_range_mhz,
        step_mhz=step_mhz,
    )


def _as_batch(net, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != net.layout.input_size:
        raise ShapeError(f"input length {x.shape[0]}, network expects {net.layout.input_size}")
    return x


def _propagate(net, x):
    """Layer outputs for a batch; element 0 is the input itself."""
    outputs = [x]
    a = x
    last = len(net.weights) - 1
    for l, w in enumerate(net.weights):
        z = w @ a
        if net.use_bias:
            z = z + net.biases[l][:, None]
        name = net.layout.output_activation if l == last else net.layout.hidden_activation
        a = _activate(name, z)
        outputs.append(a)
    return outputs


def forward_batch(net, inputs):
    """Outputs (J x N) for a matrix of input columns (M x N)."""
    return _propagate(net, _as_batch(net, inputs))[-1]


def forward(net, x):
    """
    Network output for one normalized spectrum.

    Returns:
        Scalar for single-output networks, otherwise a vector of length J
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("forward expects a single input vector")
    if not np.all(np.isfinite(x)):
        raise DataError("input contains non-finite values")
    y = forward_batch(net, x)[:, 0]
    return float(y[0]) if y.size == 1 else y


def _targets_matrix(net, targets, count):
    h = np.asarray(targets, dtype=np.float64)
    h = h.reshape(1, -1) if h.ndim == 1 else h
    if h.shape != (net.layout.output_size, count):
        raise ShapeError(f"targets shape {h.shape} does not match outputs {(net.layout.output_size, count)}")
    return h


def _unpack_batch(batch, targets):
    if isinstance(batch, Dataset):
        return batch.inputs, batch.targets
    return batch, targets


def batch_mse(net, d, targets=None):
    """
    Mean over samples of (1/2J) sum_j e_j^2.

    Args:
        net: Network
        d: Dataset, or an input matrix together with ``targets``
        targets: Targets when ``d`` is a matrix

    Returns:
        Scalar MSE
    """
    inputs, targets = _unpack_batch(d, targets)
    x = _as_batch(net, inputs)
    if x.shape[1] == 0:
        raise DomainError("MSE of an empty dataset is undefined")
    h = _targets_matrix(net, targets, x.shape[1])
    e = h - _propagate(net, x)[-1]
    return float(np.sum(e * e) / (2.0 * h.shape[0] * h.shape[1]))


def backprop_gradient(net, inputs, targets=None):
    """
    Analytic gradient of the summed batch cost with respect to all weights and biases.

    Args:
        net: Network
        inputs: Input matrix (M x N) or a Dataset
        targets: Targets (N,) or (J x N)

    Returns:
        Gradient
    """
    inputs, targets = _unpack_batch(inputs, targets)
    x = _as_batch(net, inputs)
    if x.shape[1] == 0:
        raise DomainError("gradient of an empty batch is undefined")
    h = _targets_matrix(net, targets, x.shape[1])
    outputs = _propagate(net, x)
    y = outputs[-1]
    delta = -(h - y) / h.shape[0] * _slope(net.layout.output_activation, y)

    n_layers = len(net.weights)
    grad_w, grad_b = [None] * n_layers, [None] * n_layers
    for l in reversed(range(n_layers)):
        grad_w[l] = delta @ outputs[l].T
        grad_b[l] = delta.sum(axis=1)
        if l > 0:
            delta = (net.weights[l].T @ delta) * _slope(net.layout.hidden_activation, outputs[l])
    return Gradient(tuple(grad_w), tuple(grad_b) if net.use_bias else None)


def output_jacobian(net, inputs):
    """
    Jacobian of every output with respect to every parameter.

    Returns:
        (jacobian, outputs): jacobian has one row per (output, sample) pair,
        output-major, matching ``outputs.reshape(-1)``
    """
    x = _as_batch(net, inputs)
    outputs = _propagate(net, x)
    y = outputs[-1]
    n_samples = x.shape[1]
    rows = []
    for j in range(y.shape[0]):
        delta = np.zeros_like(y)
        delta[j] = _slope(net.layout.output_activation, y[j])
        parts = []
        for l in reversed(range(len(net.weights))):
            layer = [np.einsum("ob,ib->boi", delta, outputs[l]).reshape(n_samples, -1)]
            if net.use_bias:
                layer.append(delta.T)
            parts.append(np.hstack(layer))
            if l > 0:
                delta = (net.weights[l].T @ delta) * _slope(net.layout.hidden_activation, outputs[l])
        rows.append(np.hstack(parts[::-1]))
    return np.vstack(rows), y


def _normal_equations(net, train, block_size):
    """Accumulate J^T J and J^T e over sample blocks."""
    n_params = net.parameter_count
    jtj = np.zeros((n_params, n_params))
    jte = np.zeros(n_params)
    targets = _targets_matrix(net, train.targets, train.count)
    for start in range(0, train.count, block_size):
        stop = min(start + block_size, train.count)
        jac, y = output_jacobian(net, train.inputs[:, start:stop])
        e = (targets[:, start:stop] - y).reshape(-1)
        jtj += jac.T @ jac
        jte += jac.T @ e
    return jtj, jte


class _EarlyStop:
    def __init__(self, patience):
        self.patience = patience
        self.best = math.inf
        self.best_iteration = 0
        self.best_net = None
        self.stale = 0

    def update(self, value, iteration=0, net=None):
        """Returns True when training should stop."""
        if value < self.best:
            self.best = value
            self.best_iteration = iteration
            self.best_net = net
            self.stale = 0
            return False
        self.stale += 1
        return self.patience is not None and self.stale >= self.patience


def _finish_training(current, train, cfg, stopper, monitor_test, log, tag):
    """Pick the returned weights: the lowest test MSE when early stopping watches a test set."""
    chosen, iteration = current, log.final().iteration
    if cfg.restore_best and cfg.early_stop_patience is not None and monitor_test and stopper.best_net is not None:
        chosen, iteration = stopper.best_net, stopper.best_iteration
        if iteration != log.final().iteration:
            logger.info("[%s] keeping the weights of iteration %d (lowest test MSE)", tag, iteration)
    log.selected_iteration = iteration
    return dataclasses.replace(chosen, provenance=dataset_hash(train)), log


def _evaluate(net, train, test):
    train_mse = batch_mse(net, train)
    test_mse = batch_mse(net, test) if test is not None and test.count else math.nan
    return train_mse, test_mse


def _check_training_args(net, train, cfg, algorithm):
    if cfg.algorithm != algorithm:
        raise DomainError(f"config selects {cfg.algorithm}, trainer is {algorithm}")
    if train.rows != net.layout.input_size:
        raise ShapeError(f"dataset rows {train.rows} != network inputs {net.layout.input_size}")
    if train.count == 0:
        raise DomainError("training set is empty")


def train_steepest_descent(net, train, test, cfg):
    """
    Full-batch steepest descent: w(n+1) = w(n) - eta * dE/dw.

    Args:
        net: Starting Network
        train: Training Dataset
        test: Test Dataset (monitored for early stopping), may be None
        cfg: TrainConfig with algorithm steepest_descent

    Returns:
        (Network, TrainLog)
    """
    _check_training_args(net, train, cfg, STEEPEST_DESCENT)
    log = TrainLog()
    started = time.perf_counter()
    params = net.parameter_vector()
    current = net
    train_mse, test_mse = _evaluate(current, train, test)
    log.append(TrainRecord(0, train_mse, test_mse, math.nan, 0.0))
    monitor_test = test is not None and test.count > 0
    stopper = _EarlyStop(cfg.early_stop_patience)
    stopper.update(test_mse if monitor_test else train_mse, 0, current)

    for n in range(1, cfg.max_iterations + 1):
        gradient = backprop_gradient(current, train.inputs, train.targets).vector()
        params = params - cfg.eta * gradient
        if not np.all(np.isfinite(params)):
            raise TrainingDivergedError(f"non-finite weights at iteration {n}", log)
        current = net.with_parameters(params)
        train_mse, test_mse = _evaluate(current, train, test)
        if not math.isfinite(train_mse):
            raise TrainingDivergedError(f"training MSE diverged at iteration {n}", log)
        log.append(TrainRecord(n, train_mse, test_mse, math.nan, time.perf_counter() - started))
        logger.debug("[SD] iteration %d train_mse=%.6e test_mse=%.6e", n, train_mse, test_mse)
        if stopper.update(test_mse if monitor_test else train_mse, n, current):
            logger.info("[SD] stopping at iteration %d, no improvement for %d iterations", n, stopper.stale)
            break
    return _finish_training(current, train, cfg, stopper, monitor_test, log, "SD")


def train_lm(net, train, test, cfg):
    """
    Levenberg-Marquardt training with Marquardt (diagonal) damping.

    Each iteration solves (J^T J + lambda diag(J^T J)) delta = J^T e. A step
    is kept only if the training MSE decreases; then lambda is divided by
    ``lm_lambda_down``, otherwise multiplied by ``lm_lambda_up`` and retried.
    When early stopping watches a test set, the weights with the lowest
    test MSE are returned and ``log.selected_iteration`` names them.

    Args:
        net: Starting Network
        train: Training Dataset
        test: Test Dataset (monitored for early stopping), may be None
        cfg: TrainConfig with algorithm levenberg_marquardt

    Returns:
        (Network, TrainLog)
    """
    _check_training_args(net, train, cfg, LEVENBERG_MARQUARDT)
    log = TrainLog()
    started = time.perf_counter()
    params = net.parameter_vector()
    current = net
    lam = cfg.lm_lambda0
    train_mse, test_mse = _evaluate(current, train, test)
    if not math.isfinite(train_mse):
        raise TrainingDivergedError("initial training MSE is not finite", log)
    log.append(TrainRecord(0, train_mse, test_mse, lam, 0.0))
    monitor_test = test is not None and test.count > 0
    stopper = _EarlyStop(cfg.early_stop_patience)
    stopper.update(test_mse if monitor_test else train_mse, 0, current)

    for n in range(1, cfg.max_iterations + 1):
        if train_mse == 0.0:
            logger.info("[LM] residuals are zero, nothing to fit")
            break
        jtj, jte = _normal_equations(current, train, cfg.block_size)
        if not np.any(jte):
            logger.info("[LM] gradient vanished at iteration %d", n)
            break
        damping = np.diag(jtj).copy()
        # zero diagonal entries (dead units) would make the system singular
        damping = np.maximum(damping, np.finfo(float).eps * max(float(damping.max()), 1.0))
        diag_index = np.diag_indices_from(jtj)

        accepted = solved = False
        while lam <= cfg.lm_lambda_max:
            system = jtj.copy()
            system[diag_index] += lam * damping
            try:
                step = solve(system, jte, assume_a="pos", check_finite=False)
            except (LinAlgError, ValueError):
                lam *= cfg.lm_lambda_up
                continue
            solved = True
            candidate = current.with_parameters(params + step) if np.all(np.isfinite(step)) else None
            candidate_mse = batch_mse(candidate, train) if candidate is not None else math.inf
            if math.isfinite(candidate_mse) and candidate_mse < train_mse:
                params = params + step
                current = candidate
                train_mse = candidate_mse
                lam /= cfg.lm_lambda_down
                accepted = True
                break
            lam *= cfg.lm_lambda_up

        if not accepted:
            if not solved:
                raise TrainingDivergedError(
                    f"normal equations unsolvable up to lambda={cfg.lm_lambda_max:g}", log
                )
            logger.info("[LM] no decreasing step left at iteration %d, stopping", n)
            break

        test_mse = batch_mse(current, test) if monitor_test else math.nan
        log.append(TrainRecord(n, train_mse, test_mse, lam, time.perf_counter() - started))
        logger.info("[LM] iteration %d train_mse=%.6e test_mse=%.6e lambda=%.1e", n, train_mse, test_mse, lam)
        if stopper.update(test_mse if monitor_test else train_mse, n, current):
            logger.info("[LM] stopping at iteration %d, no improvement for %d iterations", n, stopper.stale)
            break
    return _finish_training(current, train, cfg, stopper, monitor_test, log, "LM")


def train(net, train_set, test_set, cfg):
    """Dispatch to the trainer selected by ``cfg.algorithm``."""
    if cfg.algorithm == STEEPEST_DESCENT:
        return train_steepest_descent(net, train_set, test_set, cfg)
    return train_lm(net, train_set, test_set, cfg)


def _check_grid(net, grid):
    if grid.count != net.layout.input_size or not math.isclose(grid.step_mhz, net.step_mhz):
        raise GridContractError(
            f"network expects {net.layout.input_size} points at {net.step_mhz:g} MHz, "
            f"got {grid.count} points at {grid.step_mhz:g} MHz; resample the spectrum first"
        )


def predict_bfs(net, s):
    """
    BFS of one spectrum, as an offset (MHz) from the start of its window.

    Args:
        net: Network
        s: Spectrum on the network's grid (count and step)

    Returns:
        BFS offset in MHz
    """
    _check_grid(net, s.grid)
    y = forward(net, normalize_spectrum(s).gains)
    return y * net.scan_range_mhz


def predict_bfs_batch(net, gains):
    """In-window BFS offsets (MHz) for a matrix of raw spectra (points x spectra)."""
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape[0] != net.layout.input_size:
        raise GridContractError(
            f"network expects {net.layout.input_size} points, got {gains.shape[0]}"
        )
    return forward_batch(net, normalize_columns(gains))[0] * net.scan_range_mhz


def save_model(net, path):
    """Write a network to the BFSFNN01 container."""
    sizes = net.layout.sizes
    provenance = bytes.fromhex(net.provenance) if net.provenance else b""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(sizes)))
        f.write(struct.pack(f"<{len(sizes)}I", *sizes))
        f.write(struct.pack(
            "<BBB",
            ACTIVATION_IDS[net.layout.hidden_activation],
            ACTIVATION_IDS[net.layout.output_activation],
            1 if net.use_bias else 0,
        ))
        f.write(struct.pack("<dd", net.scan_range_mhz, net.step_mhz))
        f.write(struct.pack("<I", len(provenance)) + provenance)
        for w in net.weights:
            f.write(pack_floats(w.ravel(order="C")))
        if net.use_bias:
            for b in net.biases:
                f.write(pack_floats(b))


def load_model(path):
    """
    Read a network written by ``save_model``.

    Raises:
        BadMagicError, VersionMismatchError, TruncatedFileError,
        DimensionMismatchError
    """
    reader = ContainerReader.open(path, MODEL_MAGIC, MODEL_FAMILY)
    (n_sizes,) = reader.unpack("<I")
    if n_sizes < 2 or n_sizes > 64:
        raise DimensionMismatchError(f"{path}: implausible layer count {n_sizes}")
    sizes = reader.unpack(f"<{n_sizes}I")
    hidden_id, output_id, bias_flag = reader.unpack("<BBB")
    if hidden_id not in ACTIVATION_NAMES or output_id not in ACTIVATION_NAMES:
        raise DataError(f"{path}: unknown activation identifier")
    scan_range, step = reader.unpack("<dd")
    (n_provenance,) = reader.unpack("<I")
    provenance = reader.take(n_provenance).hex()
    layout = NetworkLayout(sizes, ACTIVATION_NAMES[hidden_id], ACTIVATION_NAMES[output_id])
    weights = [
        reader.floats(fan_out * fan_in).reshape(fan_out, fan_in)
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    ]
    biases = [reader.floats(fan_out) for fan_out in sizes[1:]] if bias_flag else None
    reader.finish()
    return Network(
        layout,
        tuple(weights),
        tuple(biases) if biases is not None else None,
        scan_range_mhz=scan_range,
        step_mhz=step,
        provenance=provenance,
    )
