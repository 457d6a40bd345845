"""
Lorentzian curve fitting - damped Gauss-Newton on (G_B, v_B, linewidth).
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError
from .spectra import LorentzianParams, half_maximum_crossings, lorentzian_gain, smooth_gains

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    """Stopping and damping controls of the least-squares fit."""

    max_iterations: int = 200
    tolerance: float = 1e-10
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e16
    fit_offset: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise DomainError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if min(self.lambda0, self.lambda_up, self.lambda_down, self.lambda_max) <= 0:
            raise DomainError("damping controls must be > 0")


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with the residual sum of squares R^2."""

    params: LorentzianParams
    r_squared: float
    iterations: int
    converged: bool
    projected: bool = False
    offset: float = 0.0
    r_squared_history: tuple = ()

    def as_row(self):
        return {
            "gain": self.params.gain,
            "bfs_mhz": self.params.bfs_mhz,
            "linewidth_mhz": self.params.linewidth_mhz,
            "offset": self.offset,
            "r_squared": self.r_squared,
            "iterations": self.iterations,
            "converged": self.converged,
            "projected": self.projected,
        }


def initial_guess(s):
    """
    Starting point for the fit, read off the 5-point smoothed spectrum.

    v_B is the frequency of the smoothed maximum, G_B the maximum above the
    baseline (mean of the lowest decile) and the linewidth the distance
    between the half-level crossings, clamped to [step, span].

    Args:
        s: Spectrum with at least 5 samples

    Returns:
        LorentzianParams
    """
    if s.grid.count < 5:
        raise DomainError("initial guess needs at least 5 samples")
    freqs = s.frequencies
    smoothed = smooth_gains(s.gains)
    peak_index = int(np.argmax(smoothed))
    n_low = max(1, s.grid.count // 10)
    baseline = float(np.sort(smoothed)[:n_low].mean())
    gain = float(smoothed[peak_index]) - baseline
    # smoothing leaves rounding ripple on a constant spectrum
    if not gain > 1e-12 * float(np.max(np.abs(s.gains))):
        raise DegenerateInputError("flat spectrum, no peak to fit")

    center = float(freqs[peak_index])
    left, right = half_maximum_crossings(freqs, smoothed, peak_index, baseline + gain / 2.0)
    if left is not None and right is not None:
        width = right - left
    elif left is not None:
        width = 2.0 * (center - left)
    elif right is not None:
        width = 2.0 * (right - center)
    else:
        width = s.grid.span()
    width = float(np.clip(width, s.grid.step_mhz, s.grid.span()))
    return LorentzianParams(gain, center, width)


def residual_r2(params, s):
    """R^2 = sum_i [g(v_i) - y_i]^2."""
    diff = lorentzian_gain(params, s.frequencies) - s.gains
    return float(np.sum(diff * diff))


def _model_and_jacobian(theta, v, with_offset):
    gain, bfs, width = theta[0], theta[1], theta[2]
    u = 2.0 * (v - bfs) / width
    q = 1.0 / (1.0 + u * u)
    model = gain * q
    columns = [q, 4.0 * gain * u * q * q / width, 2.0 * gain * u * u * q * q / width]
    if with_offset:
        model = model + theta[3]
        columns.append(np.ones_like(v))
    return model, np.column_stack(columns)


def _model(theta, v, with_offset):
    u = 2.0 * (v - theta[1]) / theta[2]
    model = theta[0] / (1.0 + u * u)
    return model + theta[3] if with_offset else model


class _Bounds:
    """Box G_B > 0, linewidth in [step, span], v_B in [start - span/2, start + 1.5 span]."""

    def __init__(self, s, with_offset):
        span = s.grid.span()
        start = s.grid.start_mhz
        scale = max(float(np.max(np.abs(s.gains))), np.finfo(float).tiny)
        self.lower = np.array([1e-12 * scale, start - span / 2.0, s.grid.step_mhz])
        self.upper = np.array([np.inf, start + 1.5 * span, span])
        if with_offset:
            self.lower = np.append(self.lower, -np.inf)
            self.upper = np.append(self.upper, np.inf)

    def project(self, theta):
        clipped = np.clip(theta, self.lower, self.upper)
        return clipped, bool(np.any(clipped != theta))


def fit_lorentzian(s, cfg=None, initial=None):
    """
    Least-squares fit of the Lorentzian model to a spectrum.

    Levenberg-Marquardt with diagonal damping; steps leaving the parameter box
    are projected back and flagged. Convergence is a relative R^2 improvement
    below ``cfg.tolerance`` or no decreasing step being left.

    Args:
        s: Spectrum
        cfg: FitConfig (default settings when None)
        initial: Optional LorentzianParams to start from

    Returns:
        FitResult; converged=False when max_iterations ran out
    """
    cfg = cfg or FitConfig()
    guess = initial or initial_guess(s)
    v = s.frequencies
    y = s.gains
    with_offset = cfg.fit_offset
    theta = np.array([guess.gain, guess.bfs_mhz, guess.linewidth_mhz], dtype=np.float64)
    if with_offset:
        n_low = max(1, s.grid.count // 10)
        theta = np.append(theta, float(np.sort(smooth_gains(y))[:n_low].mean()))
    bounds = _Bounds(s, with_offset)
    theta, projected = bounds.project(theta)

    residual = y - _model(theta, v, with_offset)
    r2 = float(residual @ residual)
    history = [r2]
    lam = cfg.lambda0
    converged = r2 == 0.0
    iterations = 0

    while not converged and iterations < cfg.max_iterations:
        iterations += 1
        model, jac = _model_and_jacobian(theta, v, with_offset)
        residual = y - model
        jtj = jac.T @ jac
        jtr = jac.T @ residual
        damping = np.maximum(np.diag(jtj), np.finfo(float).eps * max(float(np.max(np.diag(jtj))), 1.0))

        accepted = False
        while lam <= cfg.lambda_max:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(damping), jtr)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                continue
            candidate, was_projected = bounds.project(theta + step)
            candidate_residual = y - _model(candidate, v, with_offset)
            candidate_r2 = float(candidate_residual @ candidate_residual)
            if candidate_r2 < r2:
                accepted = True
                break
            lam *= cfg.lambda_up

        if not accepted:
            # no step decreases R^2: stationary point
            converged = True
            break
        improvement = (r2 - candidate_r2) / r2
        theta, r2 = candidate, candidate_r2
        projected = projected or was_projected
        history.append(r2)
        lam /= cfg.lambda_down
        if r2 == 0.0 or improvement < cfg.tolerance:
            converged = True

    if not converged:
        logger.debug("fit stopped after %d iterations without converging (R2=%.3e)", iterations, r2)
    return FitResult(
        params=LorentzianParams(float(theta[0]), float(theta[1]), float(theta[2])),
        r_squared=r2,
        iterations=iterations,
        converged=converged,
        projected=projected,
        offset=float(theta[3]) if with_offset else 0.0,
        r_squared_history=tuple(history),
    )


def fit_bfs(s, cfg=None):
    """BFS (MHz, on the spectrum's own frequency axis) from a Lorentzian fit."""
    return fit_lorentzian(s, cfg).params.bfs_mhz


def fit_many(spectra, cfg=None):
    """Fit a sequence of spectra; failures become NaN."""
    results = []
    for s in spectra:
        try:
            results.append(fit_bfs(s, cfg))
        except (DegenerateInputError, DomainError) as e:
            logger.warning("fit failed: %s", e)
            results.append(math.nan)
    return np.asarray(results)
