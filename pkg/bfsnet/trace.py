"""
Simulated BOTDA traces and the temperature analysis run on them.

A trace is a (positions x frequencies) gain matrix. BFS profiles are
retrieved per position by the network or by Lorentzian fitting, then
compared before and after heating.
"""
import logging
import math
import struct
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .containers import ContainerReader, pack_floats
from .errors import DataError, DegenerateInputError, DomainError, ShapeError, UsageError
from .fnn import predict_bfs_batch
from .lcf import FitConfig, fit_bfs
from .resample import ScanConfig, prepare_input
from .spectra import LorentzianParams, NoiseSpec, Spectrum, add_noise, synth_spectrum

logger = logging.getLogger(__name__)

TRACE_MAGIC = b"BGSTRACE"


@dataclass(frozen=True)
class HeatedSegment:
    """Fiber section held at ``delta_temp_c`` above its reference temperature."""

    start_km: float
    end_km: float
    delta_temp_c: float
    c_t_mhz_per_c: float

    @property
    def delta_bfs_mhz(self):
        return self.c_t_mhz_per_c * self.delta_temp_c

    def contains(self, positions_km):
        positions_km = np.asarray(positions_km)
        return (positions_km >= self.start_km) & (positions_km <= self.end_km)


def _segment_values(value):
    if callable(value):
        return value
    if isinstance(value, (tuple, list, np.ndarray)):
        return tuple(float(v) for v in value)
    return float(value)


def _values_at(value, positions_km, length_km):
    """Evaluate a constant, per-segment or callable fiber property at positions."""
    positions_km = np.asarray(positions_km, dtype=np.float64)
    if callable(value):
        return np.broadcast_to(np.asarray(value(positions_km), dtype=np.float64), positions_km.shape)
    if isinstance(value, tuple):
        n = len(value)
        index = np.minimum((positions_km / length_km * n).astype(int), n - 1)
        return np.asarray(value)[index]
    return np.full(positions_km.shape, value)


@dataclass(frozen=True)
class FiberProfile:
    """
    Fiber under test.

    ``base_bfs_mhz``, ``linewidth_mhz``, ``gain`` and ``snr_db`` each take a
    single value, one value per equal-length segment, or a callable of the
    position in km. ``snr_db`` is kept as a tuple unless it is a callable.
    """

    length_km: float
    spatial_step_m: float
    base_bfs_mhz: object = 80.0
    linewidth_mhz: object = 30.0
    gain: object = 1.0
    snr_db: object = (23.5,)
    heated_segments: tuple = ()
    bfs_drift_mhz_per_km: float = 0.0

    def __post_init__(self):
        for name in ("base_bfs_mhz", "linewidth_mhz", "gain"):
            object.__setattr__(self, name, _segment_values(getattr(self, name)))
        snr = _segment_values(self.snr_db)
        object.__setattr__(self, "snr_db", snr if callable(snr) or isinstance(snr, tuple) else (snr,))
        object.__setattr__(self, "heated_segments", tuple(self.heated_segments))
        if not self.spatial_step_m > 0:
            raise DomainError("spatial_step_m must be > 0")
        if not self.length_km > 0:
            raise DomainError("length_km must be > 0")
        for name in ("base_bfs_mhz", "linewidth_mhz", "gain", "snr_db"):
            if getattr(self, name) == ():
                raise DomainError(f"{name} needs at least one value")
        for name in ("linewidth_mhz", "gain"):
            value = getattr(self, name)
            if not callable(value) and min(np.atleast_1d(value)) <= 0:
                raise DomainError(f"{name} must be > 0")

    def positions_km(self):
        step_km = self.spatial_step_m / 1000.0
        count = int(math.floor(self.length_km / step_km + 1e-9)) + 1
        return np.arange(count) * step_km

    def base_bfs_at(self, positions_km):
        base = _values_at(self.base_bfs_mhz, positions_km, self.length_km)
        return base + self.bfs_drift_mhz_per_km * np.asarray(positions_km)

    def linewidth_at(self, positions_km):
        return _values_at(self.linewidth_mhz, positions_km, self.length_km)

    def gain_at(self, positions_km):
        return _values_at(self.gain, positions_km, self.length_km)

    def snr_at(self, positions_km):
        return _values_at(self.snr_db, positions_km, self.length_km)

    def check_segments(self):
        for seg in self.heated_segments:
            if not (0.0 <= seg.start_km < seg.end_km <= self.length_km):
                raise DomainError(
                    f"heated segment [{seg.start_km}, {seg.end_km}] km lies outside "
                    f"the {self.length_km} km fiber"
                )
            if not seg.c_t_mhz_per_c > 0:
                raise DomainError("temperature coefficient must be > 0")


@dataclass(frozen=True, eq=False)
class TraceMeasurement:
    """Gain matrix of one acquisition: one spectrum per position."""

    positions: np.ndarray
    scan: ScanConfig
    gains: np.ndarray
    seed: int

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        gains = np.asarray(self.gains, dtype=np.float64)
        expected = (positions.shape[0], self.scan.grid().count)
        if gains.shape != expected:
            raise ShapeError(f"trace matrix has shape {gains.shape}, expected {expected}")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "gains", gains)

    def spectrum(self, index):
        return Spectrum(self.scan.grid(), self.gains[index])


@dataclass(frozen=True)
class BinnedDeviation:
    """Per-bin deviation; NaN marks bins with no valid position."""

    bin_start_km: np.ndarray
    deviation_mhz: np.ndarray

    def to_frame(self):
        return pd.DataFrame({"bin_km": self.bin_start_km, "deviation_mhz": self.deviation_mhz})


@dataclass
class AnalysisReport:
    """Everything reported for one before/after pair and one retrieval method."""

    method: str
    positions_km: np.ndarray
    bfs_profile_mhz: np.ndarray
    freq_difference_mhz: np.ndarray
    uncertainty_c: float
    heated_temperatures_c: list = field(default_factory=list)
    per_km_mean_deviation_mhz: BinnedDeviation | None = None

    def profile_frame(self):
        return pd.DataFrame({
            "position_km": self.positions_km,
            "bfs_mhz": self.bfs_profile_mhz,
            "freq_difference_mhz": self.freq_difference_mhz,
        })


@dataclass(frozen=True)
class FnnMethod:
    """Retrieve BFS with a trained network."""

    network: object
    name: str = "fnn"


@dataclass(frozen=True)
class LcfMethod:
    """Retrieve BFS by Lorentzian fitting."""

    config: FitConfig = field(default_factory=FitConfig)
    workers: int = 1
    name: str = "lcf"


def simulate_trace(p, scan, heated, seed):
    """
    Synthesize a noisy trace for a fiber profile.

    Args:
        p: FiberProfile
        scan: ScanConfig of the acquisition
        heated: Apply the profile's heated segments
        seed: Noise seed; position i draws from the i-th child stream

    Returns:
        TraceMeasurement
    """
    p.check_segments()
    positions = p.positions_km()
    bfs = p.base_bfs_at(positions)
    if heated:
        for seg in p.heated_segments:
            bfs = np.where(seg.contains(positions), bfs + seg.delta_bfs_mhz, bfs)
    snr = p.snr_at(positions)
    linewidth = p.linewidth_at(positions)
    gain = p.gain_at(positions)
    grid = scan.grid()
    children = np.random.SeedSequence(seed).spawn(len(positions))
    gains = np.empty((len(positions), grid.count))
    for i in range(len(positions)):
        ideal = synth_spectrum(LorentzianParams(float(gain[i]), float(bfs[i]), float(linewidth[i])), grid)
        child_seed = int(children[i].generate_state(1, dtype=np.uint64)[0])
        gains[i] = add_noise(ideal, NoiseSpec(float(snr[i]), child_seed)).gains
    logger.info("simulated %d positions x %d frequencies (heated=%s)", len(positions), grid.count, heated)
    return TraceMeasurement(positions, scan, gains, seed)


def retrieve_bfs_profile(t, method):
    """
    BFS (MHz on the scan axis) at every position of a trace.

    Positions that cannot be processed are reported as NaN gaps.

    Args:
        t: TraceMeasurement
        method: FnnMethod or LcfMethod

    Returns:
        Array of BFS values in position order
    """
    n = len(t.positions)
    prepared = [None] * n
    for i in range(n):
        try:
            prepared[i] = prepare_input(t.spectrum(i))
        except DataError as e:
            logger.warning("position %.3f km skipped: %s", t.positions[i], e)
    valid = [i for i in range(n) if prepared[i] is not None]
    bfs = np.full(n, np.nan)

    if isinstance(method, FnnMethod):
        if valid:
            gains = np.column_stack([prepared[i].spectrum.gains for i in valid])
            spread = gains.max(axis=0) - gains.min(axis=0)
            usable = spread > 0
            if not np.all(usable):
                logger.warning("%d flat spectra skipped", int(np.sum(~usable)))
            idx = np.asarray(valid)[usable]
            if idx.size:
                in_window = predict_bfs_batch(method.network, gains[:, usable])
                starts = np.array([prepared[i].window_start_mhz for i in idx])
                bfs[idx] = starts + in_window
    elif isinstance(method, LcfMethod):
        def fit_one(i):
            try:
                return fit_bfs(prepared[i].spectrum, method.config)
            except (DegenerateInputError, DomainError) as e:
                logger.warning("position %.3f km: fit failed: %s", t.positions[i], e)
                return math.nan

        if method.workers > 1:
            with ThreadPoolExecutor(max_workers=method.workers) as pool:
                values = list(pool.map(fit_one, valid))
        else:
            values = [fit_one(i) for i in valid]
        bfs[valid] = values
    else:
        raise UsageError(f"unknown retrieval method {method!r}")

    gaps = int(np.sum(np.isnan(bfs)))
    if gaps:
        logger.warning("%d of %d positions have no BFS", gaps, n)
    return bfs


def frequency_difference(before, after):
    """Element-wise after - before."""
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape:
        raise ShapeError(f"profiles differ in length: {before.shape} vs {after.shape}")
    return after - before


def _region_mask(positions_km, region_km):
    lo, hi = region_km
    positions_km = np.asarray(positions_km)
    return (positions_km >= lo) & (positions_km <= hi)


def measurement_uncertainty(diff, positions_km, region_km, c_t, heated_segments=()):
    """
    Standard deviation of the frequency difference over an unheated region, in degC.

    Args:
        diff: Frequency difference per position (MHz)
        positions_km: Position of each value
        region_km: (start_km, end_km) of the reference region
        c_t: Temperature coefficient (MHz per degC)
        heated_segments: Segments the region must not touch

    Returns:
        Uncertainty in degC (reported as +/-)
    """
    if not c_t > 0:
        raise DomainError("temperature coefficient must be > 0")
    diff = np.asarray(diff, dtype=np.float64)
    mask = _region_mask(positions_km, region_km)
    for seg in heated_segments:
        if np.any(mask & seg.contains(positions_km)):
            raise DomainError(
                f"region {region_km} km overlaps the heated segment "
                f"[{seg.start_km}, {seg.end_km}] km"
            )
    values = diff[mask]
    values = values[np.isfinite(values)]
    if values.size < 30:
        raise DomainError(f"uncertainty region holds {values.size} positions, need at least 30")
    return float(np.std(values, ddof=1)) / c_t


def heated_zone_temperature(diff, positions_km, segment):
    """Mean frequency difference inside a heated segment divided by its C_T."""
    values = np.asarray(diff)[segment.contains(positions_km)]
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise DomainError("no valid position inside the heated segment")
    return float(np.mean(values)) / segment.c_t_mhz_per_c


def per_km_mean_deviation(a, b, positions_km, bin_km=1.0, signed=False):
    """
    Mean deviation between two profiles in consecutive position bins.

    Args:
        a, b: Profiles (MHz)
        positions_km: Sorted positions
        bin_km: Bin width; a trailing partial bin is kept
        signed: Report |mean(a - b)| instead of mean(|a - b|)

    Returns:
        BinnedDeviation with NaN for bins without valid positions
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    positions_km = np.asarray(positions_km, dtype=np.float64)
    if not (a.shape == b.shape == positions_km.shape):
        raise ShapeError("profiles and positions must have equal lengths")
    if np.any(np.diff(positions_km) < 0):
        raise DomainError("positions must be sorted")
    n_bins = max(1, math.ceil(positions_km[-1] / bin_km - 1e-9)) if positions_km.size else 0
    index = np.minimum((positions_km / bin_km + 1e-9).astype(int), max(n_bins - 1, 0))
    diff = a - b
    deviation = np.full(n_bins, np.nan)
    for k in range(n_bins):
        values = diff[(index == k) & np.isfinite(diff)]
        if values.size:
            deviation[k] = abs(values.mean()) if signed else np.abs(values).mean()
    return BinnedDeviation(np.arange(n_bins) * bin_km, deviation)


def default_region(profile, margin_km=0.1):
    """Reference region: fiber start up to the first heated segment minus a margin."""
    if not profile.heated_segments:
        return (0.0, profile.length_km)
    first = min(seg.start_km for seg in profile.heated_segments)
    return (0.0, max(first - margin_km, 0.0))


def analyze_traces(before, after, method, profile, region_km=None, bin_km=1.0, reference=None):
    """
    Run retrieval on both traces and assemble the report for one method.

    Args:
        before, after: TraceMeasurement pair on the same positions
        method: FnnMethod or LcfMethod
        profile: FiberProfile carrying the heated segments and C_T
        region_km: Reference region for the uncertainty (default: before heating)
        bin_km: Bin width of the deviation report
        reference: BFS profile of another method on ``after`` for the per-km deviation

    Returns:
        AnalysisReport
    """
    if not np.array_equal(before.positions, after.positions):
        raise ShapeError("before and after traces sample different positions")
    if not profile.heated_segments:
        raise UsageError("profile has no heated segment to analyze")
    region_km = region_km or default_region(profile)
    bfs_before = retrieve_bfs_profile(before, method)
    bfs_after = retrieve_bfs_profile(after, method)
    diff = frequency_difference(bfs_before, bfs_after)
    c_t = profile.heated_segments[0].c_t_mhz_per_c
    uncertainty = measurement_uncertainty(diff, after.positions, region_km, c_t, profile.heated_segments)
    temperatures = [heated_zone_temperature(diff, after.positions, seg) for seg in profile.heated_segments]
    deviation = None
    if reference is not None:
        deviation = per_km_mean_deviation(bfs_after, reference, after.positions, bin_km)
    logger.info(
        "[%s] uncertainty +/-%.3f degC, heated zone %s degC",
        method.name.upper(), uncertainty, ", ".join(f"{t:.2f}" for t in temperatures),
    )
    return AnalysisReport(method.name, after.positions, bfs_after, diff, uncertainty, temperatures, deviation)


def botda_23km_profile(spatial_step_m=10.0):
    """Short-range setup: 23.95 km, 23.5 dB, 15.7 degC at 23.7 km, C_T 1.3 MHz/degC."""
    profile = FiberProfile(
        length_km=23.95,
        spatial_step_m=spatial_step_m,
        base_bfs_mhz=80.0,
        linewidth_mhz=30.0,
        snr_db=(23.5,),
        heated_segments=(HeatedSegment(23.65, 23.75, 15.7, 1.3),),
    )
    return profile, ScanConfig(1, 200)


def botda_150km_profile(spatial_step_m=50.0):
    """Long-range setup: 150.62 km at 4 MHz, segments at 27/27/27/18 dB, 18.2 degC, C_T 1.0."""
    profile = FiberProfile(
        length_km=150.62,
        spatial_step_m=spatial_step_m,
        base_bfs_mhz=70.0,
        linewidth_mhz=30.0,
        snr_db=(27.0, 27.0, 27.0, 18.0),
        heated_segments=(HeatedSegment(150.0, 150.2, 18.2, 1.0),),
    )
    return profile, ScanConfig(4, 156)


def load_profile(path):
    """
    Read a TOML fiber profile.

    Returns:
        (FiberProfile, ScanConfig)
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise UsageError(f"profile not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise DataError(f"profile {path} is not valid TOML: {e}") from e
    try:
        fiber = dict(data["fiber"])
        scan = data["scan"]
        segments = tuple(HeatedSegment(**seg) for seg in data.get("heated", []))
        profile = FiberProfile(heated_segments=segments, **fiber)
        return profile, ScanConfig(scan["step_mhz"], scan["range_mhz"])
    except (KeyError, TypeError) as e:
        raise DataError(f"profile {path} is incomplete: {e}") from e


def save_trace(t, path):
    """Write a trace to the BGSTRACE container."""
    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(struct.pack("<II", t.gains.shape[0], t.gains.shape[1]))
        f.write(struct.pack("<ddQ", float(t.scan.step_mhz), float(t.scan.range_mhz), t.seed))
        f.write(pack_floats(t.positions))
        f.write(pack_floats(t.gains.ravel(order="C")))


def load_trace(path):
    """Read a trace written by ``save_trace``."""
    reader = ContainerReader.open(path, TRACE_MAGIC)
    n_positions, n_freqs = reader.unpack("<II")
    step, range_mhz, seed = reader.unpack("<ddQ")
    scan = ScanConfig(step, range_mhz)
    if n_freqs != scan.grid().count:
        raise ShapeError(f"{path}: {n_freqs} frequencies disagree with the scan configuration")
    positions = reader.floats(n_positions)
    gains = reader.floats(n_positions * n_freqs).reshape(n_positions, n_freqs)
    reader.finish()
    return TraceMeasurement(positions, scan, gains, seed)


def write_profile_csv(positions_km, bfs_mhz, path):
    pd.DataFrame({"position_km": positions_km, "bfs_mhz": bfs_mhz}).to_csv(
        path, index=False, float_format="%.12g"
    )
