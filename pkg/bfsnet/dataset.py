"""
Training and test corpora of normalized Brillouin gain spectra.

A corpus enumerates (linewidth, BFS offset, SNR, realization) tuples in
lexicographic order. Each column's noise seed depends only on the base seed,
the corpus stream and the column's grid indices, so any column can be
regenerated on its own.
"""
import logging
import math
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .containers import ContainerReader, pack_float_list, pack_floats, sha256_arrays
from .errors import (
    DimensionMismatchError,
    DomainError,
    SeedCollisionError,
    ShapeError,
    TargetRangeWarning,
)
from .spectra import FrequencyGrid, LorentzianParams, NoiseSpec, add_noise, normalize_spectrum, synth_spectrum

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"BGSDSET1"
DATASET_FAMILY = b"BGSDSET"

TRAIN_STREAM = 0
TEST_STREAM = 1

GRID_SCAN_RANGE_MHZ = 156.0
GRID_LINEWIDTHS_MHZ = tuple(float(w) for w in range(10, 61))
# 126 evenly spaced offsets (about 1 MHz apart) covering 10% to 90% of the window
GRID_BFS_OFFSETS_MHZ = tuple(float(v) for v in np.linspace(15.6, 140.4, 126))
GRID_SNRS_DB = (16.0, 26.0, 36.0)
GRID_REALIZATIONS = 20


def _fractions(offsets_mhz, scan_range_mhz):
    return tuple(offset / scan_range_mhz for offset in offsets_mhz)


@dataclass(frozen=True)
class GridSpec:
    """Enumeration grid of a synthetic corpus."""

    scan_range_mhz: float = GRID_SCAN_RANGE_MHZ
    step_mhz: float = 1.0
    linewidths_mhz: tuple = GRID_LINEWIDTHS_MHZ
    bfs_fractions: tuple = field(
        default_factory=lambda: _fractions(GRID_BFS_OFFSETS_MHZ, GRID_SCAN_RANGE_MHZ)
    )
    snrs_db: tuple = GRID_SNRS_DB
    realizations_per_snr: int = GRID_REALIZATIONS
    base_seed: int = 0

    def __post_init__(self):
        for name in ("linewidths_mhz", "bfs_fractions", "snrs_db"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not (self.scan_range_mhz > 0 and self.step_mhz > 0):
            raise DomainError("scan range and step must be positive")
        if not self.linewidths_mhz:
            raise DomainError("linewidth list is empty")
        if not self.bfs_fractions:
            raise DomainError("BFS fraction list is empty")
        if not self.snrs_db:
            raise DomainError("SNR list is empty")
        if any(w <= 0 for w in self.linewidths_mhz):
            raise DomainError("linewidths must be positive")
        if any(not 0.0 < f < 1.0 for f in self.bfs_fractions):
            raise DomainError("BFS fractions must lie in (0, 1)")
        if any(not math.isfinite(s) for s in self.snrs_db):
            raise DomainError("SNRs must be finite")
        if self.realizations_per_snr < 1:
            raise DomainError("realizations_per_snr must be >= 1")
        if self.base_seed < 0:
            raise DomainError("base_seed must be a non-negative integer")

    @classmethod
    def full(cls, base_seed=0):
        """Full training grid: 51 x 126 x 3 x 20 = 385,560 columns."""
        return cls(base_seed=base_seed)

    @classmethod
    def full_test(cls, base_seed=1):
        """16 dB test grid over all linewidths and offsets."""
        return cls(snrs_db=(16.0,), base_seed=base_seed)

    @classmethod
    def desk(cls, base_seed=0, snrs_db=GRID_SNRS_DB):
        """Reduced grid: 17 linewidths x 42 offsets x SNRs x 2 realizations."""
        linewidths = tuple(float(w) for w in range(10, 59, 3))
        offsets = tuple(15.6 + 3 * k for k in range(42))
        return cls(
            linewidths_mhz=linewidths,
            bfs_fractions=_fractions(offsets, GRID_SCAN_RANGE_MHZ),
            snrs_db=snrs_db,
            realizations_per_snr=2,
            base_seed=base_seed,
        )

    @classmethod
    def for_scan(cls, scan_range_mhz, step_mhz=1.0, snrs_db=GRID_SNRS_DB,
                 realizations_per_snr=GRID_REALIZATIONS, base_seed=0, linewidths_mhz=GRID_LINEWIDTHS_MHZ):
        """
        Grid for any scan range: BFS offsets from 10% to 90% of the range, about 1 MHz apart.

        ``for_scan(156)`` equals ``full()``.
        """
        if not scan_range_mhz > 0:
            raise DomainError("scan range must be positive")
        count = int(round(scan_range_mhz * 8 / 10)) + 1
        offsets = np.linspace(scan_range_mhz / 10, scan_range_mhz * 9 / 10, count)
        return cls(
            scan_range_mhz=float(scan_range_mhz),
            step_mhz=float(step_mhz),
            linewidths_mhz=linewidths_mhz,
            bfs_fractions=_fractions(offsets, scan_range_mhz),
            snrs_db=snrs_db,
            realizations_per_snr=realizations_per_snr,
            base_seed=base_seed,
        )

    @classmethod
    def dense(cls, base_seed=0, snrs_db=GRID_SNRS_DB, realizations_per_snr=4):
        """Every linewidth and offset of the full grid with fewer noise realizations."""
        return cls(snrs_db=snrs_db, realizations_per_snr=realizations_per_snr, base_seed=base_seed)

    def grid(self):
        return FrequencyGrid.from_range(self.scan_range_mhz, self.step_mhz)

    def column_count(self):
        return (
            len(self.linewidths_mhz)
            * len(self.bfs_fractions)
            * len(self.snrs_db)
            * self.realizations_per_snr
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Normalized spectra (one per column) with normalized BFS targets."""

    inputs: np.ndarray
    targets: np.ndarray
    meta: GridSpec

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if inputs.ndim != 2:
            raise ShapeError(f"inputs must be a matrix, got shape {inputs.shape}")
        if inputs.shape[1] != targets.shape[0]:
            raise ShapeError(
                f"{inputs.shape[1]} input columns but {targets.shape[0]} targets"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def rows(self):
        return self.inputs.shape[0]

    @property
    def count(self):
        return self.inputs.shape[1]

    def validate(self):
        """Check the normalization invariants of every column and target."""
        if self.count == 0:
            return
        if not (np.all(self.inputs.min(axis=0) == 0.0) and np.all(self.inputs.max(axis=0) == 1.0)):
            raise DomainError("input columns are not min-max normalized")
        if np.any((self.targets < 0.0) | (self.targets > 1.0)):
            raise DomainError("targets outside [0, 1]")


def column_seed(base_seed, stream, indices):
    """Noise seed of one column, independent of generation order."""
    sequence = np.random.SeedSequence(entropy=base_seed, spawn_key=(stream, *indices))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _generate(spec, stream, noisy, workers):
    grid = spec.grid()
    snrs = spec.snrs_db if noisy else (None,)
    realizations = spec.realizations_per_snr if noisy else 1
    per_linewidth = len(spec.bfs_fractions) * len(snrs) * realizations
    total = len(spec.linewidths_mhz) * per_linewidth
    inputs = np.empty((grid.count, total), dtype=np.float64)
    targets = np.empty(total, dtype=np.float64)

    def fill(i):
        linewidth = spec.linewidths_mhz[i]
        col = i * per_linewidth
        for j, fraction in enumerate(spec.bfs_fractions):
            bfs = fraction * spec.scan_range_mhz
            ideal = synth_spectrum(LorentzianParams(1.0, bfs, linewidth), grid)
            for k, snr in enumerate(snrs):
                for r in range(realizations):
                    if noisy:
                        seed = column_seed(spec.base_seed, stream, (i, j, k, r))
                        spectrum = add_noise(ideal, NoiseSpec(snr, seed))
                    else:
                        spectrum = ideal
                    inputs[:, col] = normalize_spectrum(spectrum).gains
                    targets[col] = bfs / spec.scan_range_mhz
                    col += 1
        logger.debug("linewidth %.1f MHz done (%d columns)", linewidth, per_linewidth)

    indices = range(len(spec.linewidths_mhz))
    if workers > 1:
        # each linewidth owns a disjoint block of columns
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, indices))
    else:
        for i in indices:
            fill(i)
    logger.info("generated %d columns of length %d", total, grid.count)
    return Dataset(inputs, targets, spec)


def generate_training_set(spec, workers=1):
    """
    Build the noise-augmented training corpus.

    Args:
        spec: GridSpec
        workers: Threads used for generation (output is identical for any count)

    Returns:
        Dataset with one column per (linewidth, fraction, snr, realization)
    """
    return _generate(spec, TRAIN_STREAM, noisy=True, workers=workers)


def generate_test_set(spec=None, training_seed=None, workers=1):
    """
    Build a test corpus whose noise comes from a stream disjoint from training.

    Args:
        spec: GridSpec (default: 16 dB over the full grid)
        training_seed: base_seed of the training corpus it is paired with
        workers: Generation threads

    Returns:
        Dataset
    """
    spec = spec or GridSpec.full_test()
    if training_seed is not None and training_seed == spec.base_seed:
        raise SeedCollisionError(
            f"test base_seed {spec.base_seed} equals the training base_seed"
        )
    return _generate(spec, TEST_STREAM, noisy=True, workers=workers)


def generate_ideal_set(spec, workers=1):
    """Noise-free corpus: one column per (linewidth, fraction)."""
    return _generate(spec, TRAIN_STREAM, noisy=False, workers=workers)


def denormalize_target(h, scan_range_mhz, strict=False):
    """
    Convert a normalized BFS back to MHz inside the scan window.

    Args:
        h: Normalized BFS (fraction of the scan range)
        scan_range_mhz: Scan range the network was trained on
        strict: Raise instead of warning when ``h`` is outside [0, 1]

    Returns:
        BFS offset in MHz
    """
    if not 0.0 <= h <= 1.0:
        if strict:
            raise DomainError(f"normalized BFS {h} outside [0, 1]")
        warnings.warn(f"normalized BFS {h} outside [0, 1]", TargetRangeWarning, stacklevel=2)
    return h * scan_range_mhz


def dataset_hash(d):
    """Content hash of inputs and targets."""
    return sha256_arrays(d.inputs, d.targets)


def save_dataset(d, path):
    """Write a dataset to the BGSDSET1 binary container."""
    meta = d.meta
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<IIQ", d.rows, d.count, meta.base_seed))
        f.write(struct.pack("<ddI", meta.scan_range_mhz, meta.step_mhz, meta.realizations_per_snr))
        f.write(pack_float_list(meta.linewidths_mhz))
        f.write(pack_float_list(meta.bfs_fractions))
        f.write(pack_float_list(meta.snrs_db))
        # column-major: each spectrum is contiguous
        f.write(np.asarray(d.inputs, dtype="<f8").tobytes(order="F"))
        f.write(pack_floats(d.targets))
    logger.info("saved %d x %d dataset to %s", d.rows, d.count, path)


def load_dataset(path):
    """
    Read a dataset written by ``save_dataset``.

    Raises:
        BadMagicError, VersionMismatchError, TruncatedFileError,
        DimensionMismatchError
    """
    reader = ContainerReader.open(path, DATASET_MAGIC, DATASET_FAMILY)
    rows, cols, base_seed = reader.unpack("<IIQ")
    scan_range, step, realizations = reader.unpack("<ddI")
    linewidths = reader.float_list()
    fractions = reader.float_list()
    snrs = reader.float_list()
    meta = GridSpec(
        scan_range_mhz=scan_range,
        step_mhz=step,
        linewidths_mhz=tuple(linewidths),
        bfs_fractions=tuple(fractions),
        snrs_db=tuple(snrs),
        realizations_per_snr=realizations,
        base_seed=base_seed,
    )
    if rows != meta.grid().count:
        raise DimensionMismatchError(
            f"{path}: {rows} rows but the grid metadata implies {meta.grid().count}"
        )
    inputs = reader.floats(rows * cols).reshape((rows, cols), order="F")
    targets = reader.floats(cols)
    reader.finish()
    return Dataset(np.ascontiguousarray(inputs), targets, meta)


def shuffle_split(d, validation_fraction, seed):
    """
    Deterministically permute columns and split them in two.

    Args:
        d: Dataset
        validation_fraction: Share of columns in the second part, 0 <= f < 1
        seed: Permutation seed

    Returns:
        (first, second) with ceil(N (1 - f)) and the remaining columns
    """
    if not 0.0 <= validation_fraction < 1.0:
        raise DomainError("validation_fraction must be in [0, 1)")
    order = np.random.default_rng(seed).permutation(d.count)
    n_first = math.ceil(d.count * (1.0 - validation_fraction))
    first, second = order[:n_first], order[n_first:]
    return (
        Dataset(d.inputs[:, first], d.targets[first], d.meta),
        Dataset(d.inputs[:, second], d.targets[second], d.meta),
    )


def export_csv(d, path, columns=None, max_columns=1000):
    """
    Export a slice of a dataset in long format.

    Rows are (sample, target, frequency_mhz, gain).
    """
    columns = list(range(min(d.count, max_columns))) if columns is None else list(columns)
    if len(columns) > max_columns:
        raise DomainError(f"CSV export is limited to {max_columns} columns")
    freqs = d.meta.grid().frequencies()
    frames = [
        pd.DataFrame({
            "sample": c,
            "target": d.targets[c],
            "frequency_mhz": freqs,
            "gain": d.inputs[:, c],
        })
        for c in columns
    ]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["sample", "target", "frequency_mhz", "gain"]
    )
    frame.to_csv(path, index=False, float_format="%.17g")
