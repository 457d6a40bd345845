"""
Brillouin gain spectra - Lorentzian model, synthesis, noise, normalization.

All frequencies are MHz offsets inside the scan window; the absolute
~10.8 GHz carrier never appears here.
"""
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter1d

from .errors import (
    DataError,
    DegenerateInputError,
    DomainError,
    PeakOverlapWarning,
    ShapeError,
)

logger = logging.getLogger(__name__)

SMOOTHING_POINTS = 5
CSV_COLUMNS = ("frequency_mhz", "gain")


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform frequency axis of a scan: start, step and sample count."""

    start_mhz: float
    step_mhz: float
    count: int

    def __post_init__(self):
        if not (math.isfinite(self.step_mhz) and self.step_mhz > 0):
            raise DomainError(f"step_mhz must be > 0, got {self.step_mhz}")
        if self.count < 2:
            raise DomainError(f"count must be >= 2, got {self.count}")
        if not math.isfinite(self.start_mhz):
            raise DomainError("start_mhz must be finite")

    @classmethod
    def from_range(cls, range_mhz, step_mhz, start_mhz=0.0):
        """Grid covering ``range_mhz`` at ``step_mhz``; 156 MHz at 1 MHz gives 157 points."""
        count = int(round(range_mhz / step_mhz)) + 1
        return cls(float(start_mhz), float(step_mhz), count)

    def span(self):
        return self.step_mhz * (self.count - 1)

    def frequencies(self):
        return self.start_mhz + self.step_mhz * np.arange(self.count)


@dataclass(frozen=True)
class LorentzianParams:
    """Peak gain G_B, Brillouin frequency shift v_B and FWHM linewidth."""

    gain: float
    bfs_mhz: float
    linewidth_mhz: float

    def __post_init__(self):
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise DomainError(f"gain must be > 0, got {self.gain}")
        if not (math.isfinite(self.linewidth_mhz) and self.linewidth_mhz > 0):
            raise DomainError(f"linewidth_mhz must be > 0, got {self.linewidth_mhz}")
        if not math.isfinite(self.bfs_mhz):
            raise DomainError("bfs_mhz must be finite")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Gain samples on a frequency grid."""

    grid: FrequencyGrid
    gains: np.ndarray

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=np.float64)
        if gains.ndim != 1 or gains.shape[0] != self.grid.count:
            raise ShapeError(
                f"expected {self.grid.count} gain samples, got shape {gains.shape}"
            )
        if not np.all(np.isfinite(gains)):
            raise DataError("spectrum contains non-finite samples")
        object.__setattr__(self, "gains", gains)

    @property
    def frequencies(self):
        return self.grid.frequencies()

    def __len__(self):
        return self.grid.count


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise at ``snr_db``, drawn from ``seed``."""

    snr_db: float
    seed: int

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise DomainError("snr_db must be finite")


def lorentzian_gain(params, v):
    """
    Evaluate the Lorentzian gain model G_B / (1 + [2(v - v_B)/dv_B]^2).

    Args:
        params: LorentzianParams
        v: Frequency in MHz (scalar or array)

    Returns:
        Gain value(s), same shape as ``v``
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DomainError("frequency must be finite")
    u = 2.0 * (v - params.bfs_mhz) / params.linewidth_mhz
    result = params.gain / (1.0 + u * u)
    return float(result) if result.ndim == 0 else result


def synth_spectrum(params, grid):
    """Sample the Lorentzian model on every grid frequency."""
    return Spectrum(grid, lorentzian_gain(params, grid.frequencies()))


def noise_sigma(peak, snr_db):
    """Noise standard deviation for a peak amplitude at ``snr_db`` (amplitude convention)."""
    return peak / 10.0 ** (snr_db / 20.0)


def add_noise(s, noise):
    """
    Add zero-mean Gaussian noise with sigma = max(gains) / 10^(snr_db/20).

    Samples may go negative; nothing is clipped.

    Args:
        s: Spectrum with a positive peak
        noise: NoiseSpec (SNR and seed)

    Returns:
        New Spectrum on the same grid
    """
    peak = float(np.max(s.gains))
    if peak <= 0:
        raise DomainError("spectrum peak must be positive to define an SNR")
    rng = np.random.default_rng(noise.seed)
    sigma = noise_sigma(peak, noise.snr_db)
    return Spectrum(s.grid, s.gains + rng.normal(0.0, sigma, s.grid.count))


def smooth_gains(gains, points=SMOOTHING_POINTS):
    """Moving average used for peak location (edges repeat the end samples)."""
    return uniform_filter1d(np.asarray(gains, dtype=np.float64), size=points, mode="nearest")


def half_maximum_crossings(frequencies, curve, peak_index, level):
    """
    Find where ``curve`` falls below ``level`` on each side of ``peak_index``.

    Crossings are linearly interpolated between samples.

    Returns:
        (left_mhz, right_mhz); a side without a crossing is None
    """
    left = right = None
    for i in range(peak_index, 0, -1):
        if curve[i - 1] < level <= curve[i]:
            frac = (curve[i] - level) / (curve[i] - curve[i - 1])
            left = frequencies[i] - frac * (frequencies[i] - frequencies[i - 1])
            break
    for i in range(peak_index, len(curve) - 1):
        if curve[i + 1] < level <= curve[i]:
            frac = (curve[i] - level) / (curve[i] - curve[i + 1])
            right = frequencies[i] + frac * (frequencies[i + 1] - frequencies[i])
            break
    return left, right


def _region_indices(region, count):
    if isinstance(region, slice):
        start, stop, _ = region.indices(count)
    else:
        start, stop = region
    start, stop = max(int(start), 0), min(int(stop), count)
    return start, stop


def estimate_snr(s, noise_floor_region):
    """
    Estimate the SNR of a measured spectrum in dB.

    The peak amplitude is the maximum of the 5-point smoothed spectrum and the
    noise level is the standard deviation over ``noise_floor_region``.

    Args:
        s: Spectrum
        noise_floor_region: (start, stop) index range or slice away from the peak

    Returns:
        20 log10(peak / sigma)
    """
    start, stop = _region_indices(noise_floor_region, s.grid.count)
    if stop - start < 8:
        raise DomainError("noise floor region needs at least 8 samples")

    smoothed = smooth_gains(s.gains)
    peak_index = int(np.argmax(smoothed))
    peak = float(smoothed[peak_index])

    freqs = s.frequencies
    baseline = float(np.min(smoothed))
    left, right = half_maximum_crossings(freqs, smoothed, peak_index, baseline + (peak - baseline) / 2)
    half = [freqs[peak_index] - left if left is not None else None,
            right - freqs[peak_index] if right is not None else None]
    half = [h for h in half if h is not None]
    linewidth = 2 * max(half) if half else s.grid.span()
    region_lo, region_hi = freqs[start], freqs[stop - 1]
    if region_lo <= freqs[peak_index] + linewidth and region_hi >= freqs[peak_index] - linewidth:
        warnings.warn(
            f"noise region [{region_lo:g}, {region_hi:g}] MHz overlaps the peak at "
            f"{freqs[peak_index]:g} MHz +/- {linewidth:.1f} MHz",
            PeakOverlapWarning,
            stacklevel=2,
        )

    sigma = float(np.std(s.gains[start:stop], ddof=1))
    if sigma == 0.0:
        raise DegenerateInputError("noise floor region has zero variance")
    return 20.0 * math.log10(peak / sigma)


def normalize_spectrum(s):
    """Min-max map the gains onto [0, 1]; the grid is unchanged."""
    lo = float(np.min(s.gains))
    hi = float(np.max(s.gains))
    if not hi > lo:
        raise DegenerateInputError("cannot normalize a constant spectrum")
    return Spectrum(s.grid, (s.gains - lo) / (hi - lo))


def normalize_columns(matrix):
    """Column-wise min-max normalization of a (points x spectra) matrix."""
    lo = matrix.min(axis=0)
    hi = matrix.max(axis=0)
    spread = hi - lo
    if np.any(spread <= 0):
        raise DegenerateInputError("cannot normalize a constant spectrum")
    return (matrix - lo) / spread


def delta_bfs_to_delta_temp(delta_bfs_mhz, c_t):
    """
    Convert a BFS change to a temperature change.

    Args:
        delta_bfs_mhz: BFS difference (MHz)
        c_t: Temperature coefficient (MHz per degC)

    Returns:
        Temperature difference in degC
    """
    if not c_t > 0:
        raise DomainError(f"temperature coefficient must be > 0, got {c_t}")
    return delta_bfs_mhz / c_t


def write_spectrum_csv(s, path):
    """Write a spectrum as ``frequency_mhz,gain`` rows with full precision."""
    frame = pd.DataFrame({CSV_COLUMNS[0]: s.frequencies, CSV_COLUMNS[1]: s.gains})
    frame.to_csv(path, index=False, float_format="%.17g")


def read_spectrum_csv(path):
    """
    Read a spectrum written by ``write_spectrum_csv``.

    Returns:
        Spectrum whose grid is inferred from the frequency column
    """
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: unreadable CSV: {e}") from e
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    try:
        freqs = frame[CSV_COLUMNS[0]].to_numpy(dtype=np.float64)
        gains = frame[CSV_COLUMNS[1]].to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataError(f"{path}: non-numeric value: {e}") from e
    if len(freqs) < 2:
        raise DataError(f"{path}: a spectrum needs at least two samples")
    steps = np.diff(freqs)
    step = float(steps[0])
    if not np.allclose(steps, step, rtol=1e-9, atol=1e-9):
        raise DataError(f"{path}: frequency axis is not uniform")
    grid = FrequencyGrid(float(freqs[0]), step, len(freqs))
    return Spectrum(grid, gains)
