"""
Adapting spectra of any scanning step (1-10 MHz) to the network input.

Spectra are linearly interpolated to 1 MHz and a 157-point window is cut
around the smoothed power peak.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridContractError, InsufficientRangeError
from .spectra import FrequencyGrid, Spectrum, smooth_gains

NETWORK_RANGE_MHZ = 156
WINDOW_POINTS = NETWORK_RANGE_MHZ + 1
TARGET_STEP_MHZ = 1.0

# minimum scanning range per step 1..10 MHz
MIN_SCAN_RANGE_MHZ = (156, 156, 156, 156, 160, 156, 161, 160, 162, 160)


def _integer_step(step_mhz):
    step = float(step_mhz)
    if not step.is_integer() or not 1 <= step <= 10:
        raise DomainError(f"scanning step must be an integer in 1..10 MHz, got {step_mhz}")
    return int(step)


def min_scan_range(step_mhz):
    """Smallest scanning range (MHz) usable at ``step_mhz``."""
    return MIN_SCAN_RANGE_MHZ[_integer_step(step_mhz) - 1]


@dataclass(frozen=True)
class ScanConfig:
    """Scanning step and range of a measurement."""

    step_mhz: int
    range_mhz: float

    def __post_init__(self):
        step = _integer_step(self.step_mhz)
        object.__setattr__(self, "step_mhz", step)
        if self.range_mhz < min_scan_range(step):
            raise InsufficientRangeError(
                f"range {self.range_mhz:g} MHz is below the minimum "
                f"{min_scan_range(step)} MHz for a {step} MHz step"
            )
        if not math.isclose(self.range_mhz / step, round(self.range_mhz / step)):
            raise DomainError(
                f"range {self.range_mhz:g} MHz is not a multiple of the {step} MHz step"
            )

    def grid(self, start_mhz=0.0):
        return FrequencyGrid.from_range(self.range_mhz, self.step_mhz, start_mhz)


@dataclass(frozen=True)
class PreparedInput:
    """Network-ready 157-point spectrum and where its window starts."""

    spectrum: Spectrum
    window_start_mhz: float
    source_step_mhz: float

    def to_absolute(self, in_window_bfs_mhz):
        """Convert an in-window BFS to the measurement's frequency axis."""
        return self.window_start_mhz + in_window_bfs_mhz


def linear_interpolate_to_1mhz(s):
    """
    Reshape a spectrum to a 1 MHz step over the same span.

    Samples at the original frequencies are kept exactly; nothing is
    extrapolated.

    Args:
        s: Spectrum with an integer step in 1..10 MHz and span >= 156 MHz

    Returns:
        Spectrum at 1 MHz
    """
    step = _integer_step(s.grid.step_mhz)
    span = s.grid.span()
    if span < NETWORK_RANGE_MHZ:
        raise InsufficientRangeError(
            f"span {span:g} MHz is shorter than the {NETWORK_RANGE_MHZ} MHz network window"
        )
    if step == 1:
        return s
    grid = FrequencyGrid(s.grid.start_mhz, TARGET_STEP_MHZ, int(round(span)) + 1)
    return Spectrum(grid, np.interp(grid.frequencies(), s.frequencies, s.gains))


def peak_index(s):
    """Index of the 5-point smoothed maximum."""
    return int(np.argmax(smooth_gains(s.gains)))


def select_window(s, window_points=WINDOW_POINTS):
    """
    Cut the ``window_points`` slice centered on the smoothed power peak.

    The window is clamped to stay inside the spectrum. For even window
    lengths the center is the left of the two middle samples.

    Args:
        s: Spectrum at 1 MHz step
        window_points: Window length in samples

    Returns:
        Spectrum whose grid starts at the window's first frequency
    """
    if not math.isclose(s.grid.step_mhz, TARGET_STEP_MHZ):
        raise GridContractError("window selection needs a 1 MHz spectrum")
    if s.grid.count < window_points:
        raise InsufficientRangeError(
            f"spectrum has {s.grid.count} points, window needs {window_points}"
        )
    if s.grid.count == window_points:
        return s
    start = peak_index(s) - (window_points - 1) // 2
    start = min(max(start, 0), s.grid.count - window_points)
    grid = FrequencyGrid(s.grid.start_mhz + start * s.grid.step_mhz, s.grid.step_mhz, window_points)
    return Spectrum(grid, s.gains[start:start + window_points])


def prepare_input(s):
    """
    Interpolate to 1 MHz, then select the peak-centered 157-point window.

    Args:
        s: Spectrum whose step and span form a valid ScanConfig

    Returns:
        PreparedInput
    """
    ScanConfig(s.grid.step_mhz, s.grid.span())
    window = select_window(linear_interpolate_to_1mhz(s))
    return PreparedInput(window, window.grid.start_mhz, s.grid.step_mhz)


def prepare_matrix(spectra):
    """Prepare many spectra; returns (points x spectra) gains and window starts."""
    prepared = [prepare_input(s) for s in spectra]
    gains = np.column_stack([p.spectrum.gains for p in prepared]) if prepared else np.empty((WINDOW_POINTS, 0))
    starts = np.array([p.window_start_mhz for p in prepared])
    return gains, starts, prepared
