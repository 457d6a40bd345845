"""
Comparison harnesses: BFS RMSE of the network and of Lorentzian fitting
against SNR, linewidth and scanning step, wall-clock timing, and the
noise-free vs noise-augmented generalization study.
"""
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from .containers import sha256_arrays
from .dataset import column_seed, generate_ideal_set, generate_test_set, generate_training_set, shuffle_split
from .errors import DataError, DomainError
from .fnn import batch_mse, forward_batch, init_network, predict_bfs_batch, train
from .lcf import FitConfig, fit_bfs
from .resample import NETWORK_RANGE_MHZ, min_scan_range, prepare_input
from .spectra import FrequencyGrid, LorentzianParams, NoiseSpec, Spectrum, add_noise, synth_spectrum

logger = logging.getLogger(__name__)

BENCH_STREAM = 2

SNR_SWEEP_DB = tuple(float(s) for s in range(16, 47))
LINEWIDTH_SWEEP_MHZ = tuple(float(w) for w in range(10, 61))
STEP_SWEEP_MHZ = tuple(range(1, 11))

MIN_TIMED_SECONDS = 0.05
MAX_CORPUS_REPEATS = 64


def rmse(predicted, truth):
    """Root-mean-square error between two equal-length sequences."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise DomainError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise DomainError("RMSE of an empty sequence")
    err = predicted - truth
    return float(np.sqrt(np.mean(err * err)))


def _finite_rmse(predicted, truth, label):
    ok = np.isfinite(predicted)
    if not np.all(ok):
        logger.warning("%s: %d of %d retrievals failed", label, int(np.sum(~ok)), ok.size)
    if not np.any(ok):
        return math.nan
    return rmse(predicted[ok], truth[ok])


@dataclass(frozen=True)
class EnsembleSpec:
    """
    Random spectra drawn per abscissa point.

    Linewidths are uniform in ``linewidth_range_mhz`` and the BFS is uniform
    over ``bfs_fraction_range`` of the scan range. Each point uses its own
    seed stream, so points never share noise.
    """

    size: int = 2000
    seed: int = 0
    linewidth_range_mhz: tuple = (10.0, 60.0)
    bfs_fraction_range: tuple = (0.1, 0.9)
    workers: int = 1
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.size < 1:
            raise DomainError("ensemble size must be >= 1")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


@dataclass
class RmseCurve:
    """RMSE of both methods per abscissa value."""

    kind: str
    abscissa: list
    rmse_fnn_mhz: list
    rmse_lcf_mhz: list
    ensemble_size: int
    corpus_hashes: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.abscissa) == len(self.rmse_fnn_mhz) == len(self.rmse_lcf_mhz)):
            raise DataError("curve columns differ in length")

    def ratios(self):
        return [f / l if l else math.nan for f, l in zip(self.rmse_fnn_mhz, self.rmse_lcf_mhz)]

    def to_frame(self):
        return pd.DataFrame({
            self.kind: self.abscissa,
            "rmse_fnn_mhz": self.rmse_fnn_mhz,
            "rmse_lcf_mhz": self.rmse_lcf_mhz,
            "ratio_fnn_lcf": self.ratios(),
            "ensemble_size": self.ensemble_size,
        })

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.9g")


@dataclass
class TimingReport:
    """Wall-clock seconds per scanning step for one corpus of ``n_spectra``."""

    step_mhz: list
    seconds_lcf_1t: list
    seconds_lcf_mt: list
    seconds_fnn_1t: list
    n_spectra: int
    worker_count: int
    machine: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def ratio_lcf_1t(self):
        return [l / f for l, f in zip(self.seconds_lcf_1t, self.seconds_fnn_1t)]

    @property
    def ratio_lcf_mt(self):
        return [l / f for l, f in zip(self.seconds_lcf_mt, self.seconds_fnn_1t)]

    def to_frame(self):
        return pd.DataFrame({
            "step_mhz": self.step_mhz,
            "seconds_lcf_1t": self.seconds_lcf_1t,
            "seconds_lcf_mt": self.seconds_lcf_mt,
            "seconds_fnn_1t": self.seconds_fnn_1t,
            "ratio_lcf_1t": self.ratio_lcf_1t,
            "ratio_lcf_mt": self.ratio_lcf_mt,
            "n_spectra": self.n_spectra,
            "worker_count": self.worker_count,
        })

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.9g")


@dataclass(frozen=True)
class CorpusSummary:
    corpus: str
    train_mse: float
    test_mse: float
    iterations: int
    selected_iteration: int | None = None

    @property
    def ratio(self):
        return self.test_mse / self.train_mse if self.train_mse > 0 else math.inf


@dataclass(frozen=True)
class GeneralizationReport:
    """Final MSEs of a noise-augmented and a noise-free trained network."""

    noisy: CorpusSummary
    ideal: CorpusSummary
    logs: dict = field(default_factory=dict, compare=False)

    def to_frame(self):
        return pd.DataFrame([
            {"corpus": s.corpus, "train_mse": s.train_mse, "test_mse": s.test_mse,
             "ratio": s.ratio, "iterations": s.iterations, "selected_iteration": s.selected_iteration}
            for s in (self.noisy, self.ideal)
        ])

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.9g")


def machine_descriptor():
    """Host facts recorded next to every timing result."""
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "timer_resolution_s": time.get_clock_info("perf_counter").resolution,
    }


def ensemble_spectra(ens, point, snr_db, step_mhz=1, range_mhz=NETWORK_RANGE_MHZ, linewidth_mhz=None):
    """
    Draw one ensemble of noisy spectra.

    Args:
        ens: EnsembleSpec
        point: Index of the abscissa point (selects the seed stream)
        snr_db: Noise level
        step_mhz, range_mhz: Scanning grid, starting at 0 MHz
        linewidth_mhz: Fixed linewidth, or None to draw it

    Returns:
        (list of Spectrum, true BFS array in MHz)
    """
    rng = np.random.default_rng(np.random.SeedSequence(ens.seed, spawn_key=(BENCH_STREAM, point)))
    if linewidth_mhz is None:
        widths = rng.uniform(*ens.linewidth_range_mhz, size=ens.size)
    else:
        widths = np.full(ens.size, float(linewidth_mhz))
    truth = rng.uniform(*ens.bfs_fraction_range, size=ens.size) * range_mhz
    grid = FrequencyGrid.from_range(range_mhz, step_mhz)
    spectra = []
    for m in range(ens.size):
        ideal = synth_spectrum(LorentzianParams(1.0, float(truth[m]), float(widths[m])), grid)
        seed = column_seed(ens.seed, BENCH_STREAM, (point, m))
        spectra.append(add_noise(ideal, NoiseSpec(snr_db, seed)))
    return spectra, truth


def _fit_block(args):
    starts, step, gains, cfg = args
    out = np.empty(len(starts))
    for i, start in enumerate(starts):
        s = Spectrum(FrequencyGrid(float(start), step, gains.shape[0]), gains[:, i])
        try:
            out[i] = fit_bfs(s, cfg)
        except DataError:
            out[i] = math.nan
    return out


def _blocks(starts, step, gains, cfg, n_blocks):
    edges = np.linspace(0, len(starts), n_blocks + 1).astype(int)
    return [
        (starts[a:b], step, gains[:, a:b], cfg)
        for a, b in zip(edges[:-1], edges[1:])
        if b > a
    ]


def lcf_retrieve(starts, step, gains, cfg=None, workers=1, pool=None):
    """
    Fit every column of ``gains`` (spectra sharing one step).

    Columns are split into contiguous blocks; results come back in column order.
    """
    cfg = cfg or FitConfig()
    starts = np.asarray(starts, dtype=np.float64)
    if workers <= 1 and pool is None:
        return _fit_block((starts, step, gains, cfg))
    blocks = _blocks(starts, step, gains, cfg, workers * 4)
    if pool is not None:
        return np.concatenate(list(pool.map(_fit_block, blocks)))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return np.concatenate(list(executor.map(_fit_block, blocks)))


def _prepared_matrix(spectra):
    prepared = [prepare_input(s) for s in spectra]
    gains = np.column_stack([p.spectrum.gains for p in prepared])
    starts = np.array([p.window_start_mhz for p in prepared])
    return gains, starts


def _compare_point(model, ens, spectra, truth, label):
    gains, starts = _prepared_matrix(spectra)
    corpus_hash = sha256_arrays(gains, starts)
    fnn_bfs = starts + predict_bfs_batch(model, gains)
    lcf_bfs = lcf_retrieve(starts, 1.0, gains, ens.fit, ens.workers)
    if sha256_arrays(gains, starts) != corpus_hash:
        raise DataError(f"{label}: corpus changed between retrievals")
    r_fnn = _finite_rmse(fnn_bfs, truth, f"{label} fnn")
    r_lcf = _finite_rmse(lcf_bfs, truth, f"{label} lcf")
    logger.info("%s: RMSE fnn %.4f MHz, lcf %.4f MHz", label, r_fnn, r_lcf)
    return r_fnn, r_lcf, corpus_hash


def _sweep(model, kind, values, ens, make_ensemble):
    fnn, lcf, hashes = [], [], []
    for point, value in enumerate(values):
        spectra, truth = make_ensemble(point, value)
        r_fnn, r_lcf, h = _compare_point(model, ens, spectra, truth, f"{kind}={value:g}")
        fnn.append(r_fnn)
        lcf.append(r_lcf)
        hashes.append(h)
    return RmseCurve(kind, list(values), fnn, lcf, ens.size, hashes)


def rmse_vs_snr(model, snrs=SNR_SWEEP_DB, ens=None):
    """RMSE of both methods per SNR, at 1 MHz over the network range."""
    ens = ens or EnsembleSpec()
    return _sweep(model, "snr_db", snrs, ens, lambda point, snr: ensemble_spectra(ens, point, snr))


def rmse_vs_linewidth(model, linewidths=LINEWIDTH_SWEEP_MHZ, snr_db=16.0, ens=None):
    """RMSE of both methods per fixed linewidth at one SNR."""
    ens = ens or EnsembleSpec()
    return _sweep(
        model, "linewidth_mhz", linewidths, ens,
        lambda point, width: ensemble_spectra(ens, point, snr_db, linewidth_mhz=width),
    )


def rmse_vs_step(model, steps=STEP_SWEEP_MHZ, snr_db=16.0, ens=None):
    """
    RMSE of both methods per scanning step.

    Each step scans its minimum range; spectra go through ``prepare_input``
    before either method sees them.
    """
    ens = ens or EnsembleSpec()
    return _sweep(
        model, "step_mhz", steps, ens,
        lambda point, step: ensemble_spectra(ens, point, snr_db, step, min_scan_range(step)),
    )


def _timed(fn):
    start = time.perf_counter()
    result = fn()
    return time.perf_counter() - start, result


def _fnn_pass(model, spectra):
    gains, starts = _prepared_matrix(spectra)
    return starts + predict_bfs_batch(model, gains)


def _warm_up(pool, workers):
    list(pool.map(abs, range(workers * 2)))


def timing_ratios(model, n_spectra=10000, steps=STEP_SWEEP_MHZ, workers=16, snr_db=16.0, seed=0, cfg=None):
    """
    Wall-clock comparison of Lorentzian fitting and the network per step.

    Methods run one after the other on the same corpus. Network time includes
    ``prepare_input``; fitting works on the spectra as scanned. When the
    network pass is too short to time, the corpus is repeated and the
    seconds are reported per original corpus.

    Args:
        model: Trained Network
        n_spectra: Corpus size per step
        steps: Scanning steps (MHz)
        workers: Processes of the multi-worker fitting run
        snr_db: Corpus noise level
        seed: Corpus seed
        cfg: FitConfig

    Returns:
        TimingReport
    """
    cfg = cfg or FitConfig()
    ens = EnsembleSpec(size=n_spectra, seed=seed, fit=cfg)
    report = TimingReport([], [], [], [], n_spectra, workers, machine_descriptor())
    report.notes.append("single-worker runs are limited to one BLAS thread")

    warm, _ = ensemble_spectra(EnsembleSpec(size=4, seed=seed), 0, snr_db)
    _fnn_pass(model, warm)
    fit_bfs(warm[0], cfg)

    with ProcessPoolExecutor(max_workers=workers) as pool:
        _warm_up(pool, workers)
        for point, step in enumerate(steps):
            spectra, _ = ensemble_spectra(ens, point, snr_db, step, min_scan_range(step))
            gains = np.column_stack([s.gains for s in spectra])
            corpus_hash = sha256_arrays(gains)

            repeats = 1
            with threadpool_limits(limits=1):
                fnn_seconds, _ = _timed(lambda: _fnn_pass(model, spectra))
                while fnn_seconds < MIN_TIMED_SECONDS and repeats < MAX_CORPUS_REPEATS:
                    repeats *= 2
                    fnn_seconds, _ = _timed(lambda: [_fnn_pass(model, spectra) for _ in range(repeats)])
            if repeats > 1:
                report.notes.append(f"step {step} MHz: network corpus repeated x{repeats} for timer resolution")
            fnn_seconds /= repeats

            starts = np.zeros(len(spectra))
            with threadpool_limits(limits=1):
                lcf_1t, _ = _timed(lambda: lcf_retrieve(starts, float(step), gains, cfg))
            lcf_mt, _ = _timed(lambda: lcf_retrieve(starts, float(step), gains, cfg, workers, pool))
            if sha256_arrays(gains) != corpus_hash:
                raise DataError(f"step {step}: corpus changed between timed runs")

            report.step_mhz.append(step)
            report.seconds_fnn_1t.append(fnn_seconds)
            report.seconds_lcf_1t.append(lcf_1t)
            report.seconds_lcf_mt.append(lcf_mt)
            logger.info(
                "step %d MHz: lcf %.3fs, lcf x%d %.3fs, fnn %.4fs",
                step, lcf_1t, workers, lcf_mt, fnn_seconds,
            )
    return report


def evaluate_model(model, d):
    """MSE and BFS RMSE (MHz) of a network on a dataset."""
    predicted = forward_batch(model, d.inputs)[0] * model.scan_range_mhz
    return {
        "mse": batch_mse(model, d),
        "rmse_mhz": rmse(predicted, d.targets * d.meta.scan_range_mhz),
        "count": d.count,
    }


def generalization_contrast(train_spec, test_spec, layout, cfg, seed=0, workers=1, validation_fraction=0.1):
    """
    Train the same layout on the noisy corpus and on the noise-free corpus.

    Both runs start from identical weights. Each holds out
    ``validation_fraction`` of its own corpus for early stopping; the noisy
    test set is only used for scoring. Train MSE is measured on the columns
    the network was fitted to.

    Returns:
        GeneralizationReport
    """
    noisy = generate_training_set(train_spec, workers)
    ideal = generate_ideal_set(train_spec, workers)
    test = generate_test_set(test_spec, training_seed=train_spec.base_seed, workers=workers)
    start = init_network(layout, seed, scan_range_mhz=train_spec.scan_range_mhz, step_mhz=train_spec.step_mhz)

    summaries = {}
    logs = {}
    for name, corpus in (("noisy", noisy), ("ideal", ideal)):
        logger.info("training on the %s corpus (%d columns)", name, corpus.count)
        if validation_fraction > 0:
            fitted, validation = shuffle_split(corpus, validation_fraction, seed)
        else:
            fitted, validation = corpus, None
        model, log = train(start, fitted, validation, cfg)
        summary = CorpusSummary(
            name, batch_mse(model, fitted), batch_mse(model, test),
            log.final().iteration, log.selected().iteration,
        )
        summaries[name] = summary
        logs[name] = log
        logger.info(
            "%s: train MSE %.3e, test MSE %.3e, ratio %.2f (weights of iteration %d)",
            name, summary.train_mse, summary.test_mse, summary.ratio, summary.selected_iteration,
        )
    return GeneralizationReport(summaries["noisy"], summaries["ideal"], logs)
