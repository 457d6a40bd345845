"""
bfsnet command line: one entry point, one subcommand per task.

Global options go before the subcommand:

    bfsnet --seed 3 --workers 8 --config run.toml train --train train.bin --out model.fnn

Values from ``--config`` fill in options not given on the command line.
Every command that writes an artifact also writes ``<artifact>.manifest.json``.
"""
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import pandas as pd
import typer

from . import bench as bench_mod
from . import config
from .dataset import (
    GRID_REALIZATIONS,
    GRID_SCAN_RANGE_MHZ,
    GRID_SNRS_DB,
    GridSpec,
    export_csv,
    generate_ideal_set,
    generate_test_set,
    generate_training_set,
    load_dataset,
    save_dataset,
    shuffle_split,
)
from .errors import BfsError, DataError, GridContractError, UsageError
from .fnn import (
    LEVENBERG_MARQUARDT,
    STEEPEST_DESCENT,
    NetworkLayout,
    TrainConfig,
    init_network,
    load_model,
    predict_bfs,
    save_model,
    train,
)
from .lcf import FitConfig, fit_lorentzian
from .manifest import RunManifest, RunRecord, write_manifest
from .resample import prepare_input
from .spectra import read_spectrum_csv, write_spectrum_csv
from .trace import (
    FnnMethod,
    LcfMethod,
    analyze_traces,
    botda_150km_profile,
    botda_23km_profile,
    load_profile,
    load_trace,
    per_km_mean_deviation,
    save_trace,
    simulate_trace,
    write_profile_csv,
)

logger = logging.getLogger(__name__)

PRESETS = {"23km": botda_23km_profile, "150km": botda_150km_profile}
ALGORITHMS = {"lm": LEVENBERG_MARQUARDT, "sd": STEEPEST_DESCENT}

# typer re-exports these from the click it is built on, vendored or not
CliAbort = typer.Abort
CliUsageError = next(c for c in typer.BadParameter.__mro__ if c.__name__ == "UsageError")

app = typer.Typer(add_completion=False, no_args_is_help=True, help="BFS retrieval toolkit.")
bench_app = typer.Typer(no_args_is_help=True, help="Accuracy, speed and generalization studies.")
app.add_typer(bench_app, name="bench")


@dataclass
class State:
    argv: list = field(default_factory=list)
    seed: int = config.DEFAULT_SEED
    workers: int = config.DEFAULT_WORKERS


def _state(ctx):
    return ctx.find_root().obj


def _finish(ctx, command, params, inputs, outputs):
    state = _state(ctx)
    run = RunRecord(command, state.argv, params, state.seed, state.workers, inputs, outputs)
    return write_manifest(run)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from e


@app.callback()
def main(
    ctx: typer.Context,
    seed: Annotated[int, typer.Option(help="Global seed for every random draw.")] = config.DEFAULT_SEED,
    workers: Annotated[int, typer.Option(min=1, help="Worker threads/processes.")] = config.DEFAULT_WORKERS,
    config_file: Annotated[Optional[Path], typer.Option("--config", help="TOML run configuration.")] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")] = False,
):
    config.setup_logging("DEBUG" if verbose else None)
    state = ctx.obj if isinstance(ctx.obj, State) else State(argv=sys.argv[1:])
    state.seed = seed
    state.workers = workers
    ctx.obj = state
    if config_file is not None:
        ctx.default_map = config.load_run_config(config_file)


@app.command("gen-data")
def gen_data(
    ctx: typer.Context,
    out: Annotated[Path, typer.Option(help="Dataset container to write.")],
    paper_defaults: Annotated[bool, typer.Option("--paper-defaults", help="Full 51 x 126 x 3 x 20 grid.")] = False,
    desk: Annotated[bool, typer.Option("--desk", help="Reduced 17 x 42 x 3 x 2 grid.")] = False,
    test_set: Annotated[bool, typer.Option("--test-set", help="16 dB test corpus on the test noise stream.")] = False,
    ideal: Annotated[bool, typer.Option("--ideal", help="Noise-free corpus.")] = False,
    base_seed: Annotated[Optional[int], typer.Option(help="Corpus seed (default: global seed, +1 for --test-set).")] = None,
    csv: Annotated[Optional[Path], typer.Option(help="Also export the first columns as CSV.")] = None,
    scan_range: Annotated[Optional[float], typer.Option(help="Custom grid: scan window width in MHz.")] = None,
    step: Annotated[Optional[float], typer.Option(help="Custom grid: scanning step in MHz.")] = None,
    snrs: Annotated[Optional[str], typer.Option(help="Custom grid: comma-separated SNRs in dB.")] = None,
    realizations: Annotated[Optional[int], typer.Option(min=1, help="Custom grid: noise draws per SNR.")] = None,
):
    """Generate a normalized synthetic BGS corpus."""
    state = _state(ctx)
    custom = any(v is not None for v in (scan_range, step, snrs, realizations))
    if paper_defaults and desk:
        raise UsageError("--paper-defaults and --desk are exclusive")
    if custom and (paper_defaults or desk):
        raise UsageError("grid flags cannot be combined with --paper-defaults or --desk")
    if test_set and ideal:
        raise UsageError("--test-set and --ideal are exclusive")
    if base_seed is None:
        base_seed = state.seed + 1 if test_set else state.seed
    if custom:
        default_snrs = (16.0,) if test_set else GRID_SNRS_DB
        spec = GridSpec.for_scan(
            GRID_SCAN_RANGE_MHZ if scan_range is None else scan_range,
            1.0 if step is None else step,
            snrs_db=_floats(snrs) if snrs else default_snrs,
            realizations_per_snr=GRID_REALIZATIONS if realizations is None else realizations,
            base_seed=base_seed,
        )
    elif desk and test_set:
        spec = GridSpec.desk(base_seed=base_seed, snrs_db=(16.0,))
    elif desk:
        spec = GridSpec.desk(base_seed=base_seed)
    elif test_set:
        spec = GridSpec.full_test(base_seed=base_seed)
    else:
        spec = GridSpec.full(base_seed=base_seed)

    if test_set:
        d = generate_test_set(spec, training_seed=state.seed, workers=state.workers)
    elif ideal:
        d = generate_ideal_set(spec, state.workers)
    else:
        d = generate_training_set(spec, state.workers)
    save_dataset(d, out)
    outputs = [out]
    if csv is not None:
        export_csv(d, csv)
        outputs.append(csv)
    typer.echo(f"{d.rows} x {d.count} -> {out}")
    _finish(ctx, "gen-data", {
        "grid": "custom" if custom else "desk" if desk else "full", "test_set": test_set, "ideal": ideal,
        "base_seed": base_seed, "scan_range_mhz": spec.scan_range_mhz, "step_mhz": spec.step_mhz,
        "snrs_db": list(spec.snrs_db), "realizations": spec.realizations_per_snr,
    }, [], outputs)


@app.command("train")
def train_cmd(
    ctx: typer.Context,
    train_path: Annotated[Path, typer.Option("--train", "--data", help="Training dataset.")],
    out: Annotated[Path, typer.Option(help="Model container to write.")],
    test_path: Annotated[Optional[Path], typer.Option("--test", help="Test dataset for monitoring.")] = None,
    validation_fraction: Annotated[float, typer.Option(help="Hold out this share of --train when --test is absent.")] = 0.0,
    layout: Annotated[str, typer.Option(help="Layer widths, e.g. 157,40,15,1 (or 'full', 'desk').")] = "full",
    algorithm: Annotated[str, typer.Option("--algorithm", "--algo", help="lm or sd.")] = "lm",
    iterations: Annotated[int, typer.Option("--iterations", "--iters", min=1)] = 30,
    eta: Annotated[float, typer.Option(help="Steepest-descent learning rate.")] = 0.01,
    patience: Annotated[int, typer.Option(help="Early-stop patience, 0 disables.")] = 5,
    no_bias: Annotated[bool, typer.Option("--no-bias", help="Bias-free network.")] = False,
    log: Annotated[Optional[Path], typer.Option(help="Per-iteration MSE CSV.")] = None,
):
    """Train a network with Levenberg-Marquardt or steepest descent."""
    state = _state(ctx)
    if algorithm not in ALGORITHMS:
        raise UsageError(f"--algorithm must be one of {', '.join(ALGORITHMS)}")
    if layout == "full":
        net_layout = NetworkLayout.full()
    elif layout == "desk":
        net_layout = NetworkLayout.desk()
    else:
        net_layout = NetworkLayout(tuple(int(v) for v in _floats(layout)))

    train_set = load_dataset(train_path)
    inputs = [train_path]
    if test_path is not None:
        test_set = load_dataset(test_path)
        inputs.append(test_path)
    elif validation_fraction > 0:
        train_set, test_set = shuffle_split(train_set, validation_fraction, state.seed)
    else:
        test_set = None

    cfg = TrainConfig(
        algorithm=ALGORITHMS[algorithm],
        eta=eta,
        max_iterations=iterations,
        seed=state.seed,
        early_stop_patience=patience or None,
    )
    net = init_network(
        net_layout, state.seed, use_bias=not no_bias,
        scan_range_mhz=train_set.meta.scan_range_mhz, step_mhz=train_set.meta.step_mhz,
    )
    model, train_log = train(net, train_set, test_set, cfg)
    save_model(model, out)
    outputs = [out]
    if log is not None:
        train_log.write_csv(log, timings=False)
        outputs.append(log)
    final = train_log.final()
    kept = train_log.selected()
    typer.echo(
        f"iterations={final.iteration} kept={kept.iteration} "
        f"train_mse={kept.train_mse:.6e} test_mse={kept.test_mse:.6e}"
    )
    _finish(ctx, "train", {
        "layout": list(net_layout.sizes), "algorithm": cfg.algorithm, "iterations": iterations,
        "eta": eta, "patience": patience, "bias": not no_bias, "validation_fraction": validation_fraction,
    }, inputs, outputs)


@app.command("eval")
def eval_cmd(
    model: Annotated[Path, typer.Option(help="Model container.")],
    data: Annotated[Path, typer.Option(help="Dataset container.")],
):
    """Report MSE and BFS RMSE of a model on a dataset."""
    result = bench_mod.evaluate_model(load_model(model), load_dataset(data))
    typer.echo(f"count={result['count']} mse={result['mse']:.6e} rmse_mhz={result['rmse_mhz']:.6f}")


@app.command("fit")
def fit_cmd(
    ctx: typer.Context,
    in_path: Annotated[Path, typer.Option("--in", help="Spectrum CSV (frequency_mhz,gain).")],
    out: Annotated[Optional[Path], typer.Option("--out", "--report", help="Write the result CSV here instead of stdout.")] = None,
    offset: Annotated[bool, typer.Option("--offset", help="Fit a constant baseline too.")] = False,
    max_iterations: Annotated[int, typer.Option(min=1)] = 200,
):
    """Lorentzian fit of one spectrum."""
    result = fit_lorentzian(read_spectrum_csv(in_path), FitConfig(max_iterations=max_iterations, fit_offset=offset))
    frame = pd.DataFrame([result.as_row()])
    if out is None:
        typer.echo(frame.to_csv(index=False, float_format="%.9g"), nl=False)
        return
    frame.to_csv(out, index=False, float_format="%.9g")
    _finish(ctx, "fit", {"offset": offset, "max_iterations": max_iterations}, [in_path], [out])


@app.command("resample")
def resample_cmd(
    ctx: typer.Context,
    in_path: Annotated[Path, typer.Option("--in", help="Spectrum CSV at any step 1..10 MHz.")],
    out: Annotated[Path, typer.Option(help="157-point 1 MHz window CSV.")],
    step: Annotated[Optional[int], typer.Option(help="Expected scanning step; checked against the file.")] = None,
):
    """Interpolate to 1 MHz and cut the peak-centered network window."""
    s = read_spectrum_csv(in_path)
    if step is not None and not math.isclose(s.grid.step_mhz, step):
        raise GridContractError(f"{in_path} is sampled every {s.grid.step_mhz:g} MHz, not {step} MHz")
    prepared = prepare_input(s)
    write_spectrum_csv(prepared.spectrum, out)
    typer.echo(f"window_start_mhz={prepared.window_start_mhz:g}")
    _finish(ctx, "resample", {"step": step}, [in_path], [out])


@app.command("infer")
def infer_cmd(
    model: Annotated[Path, typer.Option(help="Model container.")],
    in_path: Annotated[Path, typer.Option("--in", help="Spectrum CSV at any step 1..10 MHz.")],
):
    """Print the BFS (MHz, on the spectrum's frequency axis) retrieved by a model."""
    net = load_model(model)
    prepared = prepare_input(read_spectrum_csv(in_path))
    bfs = prepared.to_absolute(predict_bfs(net, prepared.spectrum))
    typer.echo(f"{bfs:.6f}")


def _resolve_profile(profile, preset):
    if (profile is None) == (preset is None):
        raise UsageError("give exactly one of --profile or --preset")
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"--preset must be one of {', '.join(PRESETS)}")
        return PRESETS[preset]()
    return load_profile(profile)


@app.command("simulate-trace")
def simulate_trace_cmd(
    ctx: typer.Context,
    out: Annotated[Path, typer.Option(help="Trace container to write.")],
    profile: Annotated[Optional[Path], typer.Option(help="Fiber profile TOML.")] = None,
    preset: Annotated[Optional[str], typer.Option(help="23km or 150km.")] = None,
    heated: Annotated[bool, typer.Option("--heated", help="Apply the heated segments.")] = False,
):
    """Simulate one BOTDA acquisition (use different --seed values for before/after)."""
    state = _state(ctx)
    fiber, scan = _resolve_profile(profile, preset)
    t = simulate_trace(fiber, scan, heated, state.seed)
    save_trace(t, out)
    typer.echo(f"{len(t.positions)} positions x {scan.grid().count} frequencies -> {out}")
    _finish(ctx, "simulate-trace", {"preset": preset, "heated": heated}, [profile] if profile else [], [out])


@app.command("analyze")
def analyze_cmd(
    ctx: typer.Context,
    trace_before: Annotated[Path, typer.Option(help="Trace before heating.")],
    trace_after: Annotated[Path, typer.Option(help="Trace after heating.")],
    model: Annotated[Path, typer.Option(help="Model container.")],
    report: Annotated[Path, typer.Option(help="Output directory.")],
    profile: Annotated[Optional[Path], typer.Option(help="Fiber profile TOML.")] = None,
    preset: Annotated[Optional[str], typer.Option(help="23km or 150km.")] = None,
    region: Annotated[Optional[str], typer.Option(help="Reference region start,end in km.")] = None,
    bin_km: Annotated[float, typer.Option(help="Deviation bin width.")] = 1.0,
):
    """Frequency difference, uncertainty and FNN-vs-LCF deviation for a trace pair."""
    state = _state(ctx)
    fiber, _ = _resolve_profile(profile, preset)
    region_km = _floats(region) if region else None
    if region_km is not None and len(region_km) != 2:
        raise UsageError("--region needs two values: start,end")
    before = load_trace(trace_before)
    after = load_trace(trace_after)
    net = load_model(model)
    report.mkdir(parents=True, exist_ok=True)

    lcf = analyze_traces(before, after, LcfMethod(workers=state.workers), fiber, region_km, bin_km)
    fnn = analyze_traces(
        before, after, FnnMethod(net), fiber, region_km, bin_km, reference=lcf.bfs_profile_mhz,
    )
    outputs = []
    for r in (fnn, lcf):
        path = report / f"profile_{r.method}.csv"
        r.profile_frame().to_csv(path, index=False, float_format="%.9g")
        outputs.append(path)
    deviation = report / "deviation.csv"
    frame = fnn.per_km_mean_deviation_mhz.to_frame()
    frame["signed_deviation_mhz"] = per_km_mean_deviation(
        fnn.bfs_profile_mhz, lcf.bfs_profile_mhz, fnn.positions_km, bin_km, signed=True,
    ).deviation_mhz
    frame.to_csv(deviation, index=False, float_format="%.9g")
    outputs.append(deviation)
    summary = report / "summary.csv"
    pd.DataFrame([
        {"method": r.method, "uncertainty_c": r.uncertainty_c, "temperature_c": t, "segment": i}
        for r in (fnn, lcf)
        for i, t in enumerate(r.heated_temperatures_c)
    ]).to_csv(summary, index=False, float_format="%.9g")
    outputs.append(summary)
    bfs_fnn = report / "bfs_fnn.csv"
    write_profile_csv(fnn.positions_km, fnn.bfs_profile_mhz, bfs_fnn)
    outputs.append(bfs_fnn)
    for r in (fnn, lcf):
        typer.echo(
            f"{r.method}: uncertainty=+/-{r.uncertainty_c:.3f} C heated="
            + ",".join(f"{t:.2f}" for t in r.heated_temperatures_c)
        )
    _finish(ctx, "analyze", {"preset": preset, "region_km": region_km, "bin_km": bin_km},
            [trace_before, trace_after, model] + ([profile] if profile else []), outputs)


def _ensemble(state, size):
    return bench_mod.EnsembleSpec(size=size, seed=state.seed, workers=state.workers)


@bench_app.command("rmse-snr")
def bench_rmse_snr(
    ctx: typer.Context,
    model: Annotated[Path, typer.Option(help="Model container.")],
    out: Annotated[Path, typer.Option(help="Curve CSV.")],
    ensemble: Annotated[int, typer.Option(min=1, help="Spectra per point.")] = 2000,
    snrs: Annotated[str, typer.Option(help="Comma-separated SNRs in dB.")] = "16:46",
):
    """RMSE of both methods against SNR."""
    values = bench_mod.SNR_SWEEP_DB if snrs == "16:46" else _floats(snrs)
    curve = bench_mod.rmse_vs_snr(load_model(model), values, _ensemble(_state(ctx), ensemble))
    curve.write_csv(out)
    _finish(ctx, "bench rmse-snr", {"ensemble": ensemble, "snrs": list(values)}, [model], [out])


@bench_app.command("rmse-linewidth")
def bench_rmse_linewidth(
    ctx: typer.Context,
    model: Annotated[Path, typer.Option(help="Model container.")],
    out: Annotated[Path, typer.Option(help="Curve CSV.")],
    ensemble: Annotated[int, typer.Option(min=1, help="Spectra per point.")] = 2000,
    snr: Annotated[float, typer.Option(help="SNR in dB.")] = 16.0,
):
    """RMSE of both methods against linewidth."""
    curve = bench_mod.rmse_vs_linewidth(
        load_model(model), bench_mod.LINEWIDTH_SWEEP_MHZ, snr, _ensemble(_state(ctx), ensemble),
    )
    curve.write_csv(out)
    _finish(ctx, "bench rmse-linewidth", {"ensemble": ensemble, "snr": snr}, [model], [out])


@bench_app.command("rmse-step")
def bench_rmse_step(
    ctx: typer.Context,
    model: Annotated[Path, typer.Option(help="Model container.")],
    out: Annotated[Path, typer.Option(help="Curve CSV.")],
    ensemble: Annotated[int, typer.Option(min=1, help="Spectra per point.")] = 2000,
    snr: Annotated[float, typer.Option(help="SNR in dB.")] = 16.0,
):
    """RMSE of both methods against scanning step."""
    curve = bench_mod.rmse_vs_step(
        load_model(model), bench_mod.STEP_SWEEP_MHZ, snr, _ensemble(_state(ctx), ensemble),
    )
    curve.write_csv(out)
    _finish(ctx, "bench rmse-step", {"ensemble": ensemble, "snr": snr}, [model], [out])


@bench_app.command("timing")
def bench_timing(
    ctx: typer.Context,
    model: Annotated[Path, typer.Option(help="Model container.")],
    out: Annotated[Path, typer.Option(help="Timing CSV.")],
    n_spectra: Annotated[int, typer.Option(min=1, help="Corpus size per step.")] = 10000,
    fit_workers: Annotated[Optional[int], typer.Option(min=1, help="Processes of the parallel fit (default: --workers).")] = None,
):
    """Wall-clock time of fitting vs the network per scanning step."""
    state = _state(ctx)
    workers = fit_workers or state.workers
    result = bench_mod.timing_ratios(load_model(model), n_spectra, workers=workers, seed=state.seed)
    result.write_csv(out)
    for note in result.notes:
        logger.info(note)
    typer.echo(f"machine: {result.machine}")
    # wall-clock output: the manifest records the run but replay cannot match its hash
    _finish(ctx, "bench timing", {"n_spectra": n_spectra, "fit_workers": workers,
                                  "machine": result.machine, "notes": result.notes}, [model], [out])


@bench_app.command("generalization")
def bench_generalization(
    ctx: typer.Context,
    out: Annotated[Path, typer.Option(help="Summary CSV.")],
    iterations: Annotated[int, typer.Option("--iterations", "--iters", min=1)] = 30,
    patience: Annotated[int, typer.Option(help="Early-stop patience on the validation share, 0 disables.")] = 5,
    validation_fraction: Annotated[float, typer.Option(help="Share of each corpus held out for early stopping.")] = 0.1,
    log_dir: Annotated[Optional[Path], typer.Option(help="Write per-iteration logs here.")] = None,
):
    """Train on noisy and on noise-free corpora and compare test/train MSE."""
    state = _state(ctx)
    cfg = TrainConfig(max_iterations=iterations, seed=state.seed, early_stop_patience=patience or None)
    report = bench_mod.generalization_contrast(
        GridSpec.desk(base_seed=state.seed),
        GridSpec.desk(base_seed=state.seed + 1, snrs_db=(16.0,)),
        NetworkLayout.desk(),
        cfg,
        seed=state.seed,
        workers=state.workers,
        validation_fraction=validation_fraction,
    )
    report.write_csv(out)
    outputs = [out]
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        for name, log in report.logs.items():
            path = log_dir / f"train_{name}.csv"
            log.to_frame().drop(columns="wall_seconds").to_csv(path, index=False, float_format="%.17g")
            outputs.append(path)
    for s in (report.noisy, report.ideal):
        typer.echo(f"{s.corpus}: train_mse={s.train_mse:.3e} test_mse={s.test_mse:.3e} ratio={s.ratio:.2f}")
    _finish(ctx, "bench generalization", {
        "iterations": iterations, "patience": patience, "validation_fraction": validation_fraction,
    }, [], outputs)


@app.command("replay")
def replay_cmd(
    manifest: Annotated[Path, typer.Option(help="Manifest written by an earlier run.")],
):
    """Re-run a recorded command and check that its outputs hash identically."""
    recorded = RunManifest(manifest)
    if not recorded.data:
        raise UsageError(f"manifest not found: {manifest}")
    missing = recorded.missing_inputs()
    if missing:
        raise DataError(f"inputs missing: {', '.join(missing)}")
    changed = recorded.changed_inputs()
    if changed:
        raise DataError(f"inputs changed since the run: {', '.join(changed)}")
    code = dispatch(recorded.argv)
    if code != 0:
        raise DataError(f"replayed command exited with {code}")
    mismatched = recorded.verify_outputs()
    if mismatched:
        raise DataError(f"outputs differ from the manifest: {', '.join(mismatched)}")
    typer.echo(f"replay ok: {len(recorded.data.get('outputs', {}))} output(s) identical")


def dispatch(argv=None):
    """
    Run the command line and map failures to exit codes.

    Args:
        argv: Arguments without the program name (default: sys.argv[1:])

    Returns:
        0 on success, 2 usage, 3 data, 4 numerical, 1 anything else
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        result = app(args=argv, prog_name="bfsnet", standalone_mode=False, obj=State(argv=argv))
    except CliUsageError as e:
        e.show()
        return 2
    except CliAbort:
        typer.echo("[ERROR] aborted", err=True)
        return 1
    except BfsError as e:
        typer.echo(f"[ERROR] {e}", err=True)
        return e.exit_code
    except np.linalg.LinAlgError as e:
        typer.echo(f"[ERROR] {e}", err=True)
        return 4
    except OSError as e:
        typer.echo(f"[ERROR] {e}", err=True)
        return DataError.exit_code
    return result if isinstance(result, int) else 0
