import numpy as np
import pytest

from bfsnet.dataset import GRID_BFS_OFFSETS_MHZ, GRID_LINEWIDTHS_MHZ
from bfsnet.errors import DegenerateInputError, DomainError
from bfsnet.lcf import FitConfig, fit_bfs, fit_lorentzian, fit_many, initial_guess, residual_r2
from bfsnet.spectra import FrequencyGrid, LorentzianParams, NoiseSpec, Spectrum, add_noise, lorentzian_gain, synth_spectrum


def test_fit_config_validation():
    with pytest.raises(DomainError):
        FitConfig(tolerance=0.0)
    with pytest.raises(DomainError):
        FitConfig(max_iterations=0)


def test_initial_guess_noiseless(ideal_spectrum):
    guess = initial_guess(ideal_spectrum)
    assert guess.bfs_mhz == pytest.approx(78.0, abs=1.0)
    assert guess.linewidth_mhz == pytest.approx(30.0, abs=3.0)


def test_initial_guess_peak_at_edge(grid157):
    s = synth_spectrum(LorentzianParams(1.0, 1.0, 40.0), grid157)
    guess = initial_guess(s)
    assert 1.0 <= guess.linewidth_mhz <= 156.0
    assert guess.bfs_mhz <= 3.0


def test_initial_guess_rejects_flat_and_short(grid157):
    with pytest.raises(DegenerateInputError):
        initial_guess(Spectrum(grid157, np.full(157, 0.7)))
    with pytest.raises(DomainError):
        initial_guess(Spectrum(FrequencyGrid(0.0, 1.0, 4), np.array([0.1, 0.5, 0.4, 0.2])))


@pytest.mark.parametrize("level", [0.7, 1e-3, 250.0])
def test_constant_spectrum_is_degenerate_for_fitting(grid157, level):
    with pytest.raises(DegenerateInputError):
        fit_bfs(Spectrum(grid157, np.full(157, level)))


def test_initial_guess_noisy_monte_carlo(grid157):
    ideal = synth_spectrum(LorentzianParams(1.0, 78.0, 20.0), grid157)
    hits = sum(
        abs(initial_guess(add_noise(ideal, NoiseSpec(16.0, seed))).bfs_mhz - 78.0) <= 5.0
        for seed in range(1000)
    )
    assert hits >= 950


def test_residual_r2(ideal_spectrum):
    p = LorentzianParams(1.0, 78.0, 30.0)
    assert residual_r2(p, ideal_spectrum) == 0.0
    shifted = Spectrum(ideal_spectrum.grid, ideal_spectrum.gains + 0.01)
    assert residual_r2(p, shifted) == pytest.approx(157 * 1e-4, rel=1e-9)


def test_residual_r2_matches_loop():
    rng = np.random.default_rng(2)
    grid = FrequencyGrid(0.0, 2.0, 60)
    s = Spectrum(grid, rng.uniform(0.0, 1.0, 60))
    p = LorentzianParams(0.8, 47.3, 21.0)
    expected = 0.0
    for v, y in zip(grid.frequencies(), s.gains):
        expected += (lorentzian_gain(p, v) - y) ** 2
    assert residual_r2(p, s) == pytest.approx(expected, rel=1e-12)


def test_fit_recovers_noiseless_params(ideal_spectrum):
    result = fit_lorentzian(ideal_spectrum)
    assert result.converged
    assert result.params.gain == pytest.approx(1.0, rel=1e-6)
    assert result.params.bfs_mhz == pytest.approx(78.0, rel=1e-6)
    assert result.params.linewidth_mhz == pytest.approx(30.0, rel=1e-6)


def test_fit_at_grid_corner(grid157):
    s = synth_spectrum(LorentzianParams(0.3, 15.6, 10.0), grid157)
    result = fit_lorentzian(s)
    assert result.params.gain == pytest.approx(0.3, rel=1e-4)
    assert result.params.bfs_mhz == pytest.approx(15.6, rel=1e-4)
    assert result.params.linewidth_mhz == pytest.approx(10.0, rel=1e-4)


def test_fit_from_optimum_is_a_fixed_point(ideal_spectrum):
    p = LorentzianParams(1.0, 78.0, 30.0)
    result = fit_lorentzian(ideal_spectrum, initial=p)
    assert result.converged
    assert result.iterations <= 2
    assert result.r_squared == residual_r2(p, ideal_spectrum)


def test_fit_bfs_off_grid():
    s = synth_spectrum(LorentzianParams(1.0, 100.5, 30.0), FrequencyGrid(0.0, 1.0, 201))
    assert fit_bfs(s) == pytest.approx(100.5, abs=1e-4)


def test_fit_bfs_constant_spectrum(grid157):
    with pytest.raises(DegenerateInputError):
        fit_bfs(Spectrum(grid157, np.ones(157)))


def test_r2_history_is_non_increasing(ideal_spectrum):
    result = fit_lorentzian(add_noise(ideal_spectrum, NoiseSpec(16.0, 4)))
    history = result.r_squared_history
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert result.r_squared == history[-1]


def test_iteration_cap_reports_non_convergence(ideal_spectrum):
    result = fit_lorentzian(add_noise(ideal_spectrum, NoiseSpec(20.0, 1)), FitConfig(max_iterations=1))
    assert not result.converged
    assert result.iterations == 1


def test_fit_is_unbiased_at_23_5_db(ideal_spectrum):
    errors = [fit_bfs(add_noise(ideal_spectrum, NoiseSpec(23.5, seed))) - 78.0 for seed in range(1000)]
    assert abs(np.mean(errors)) < 0.05


def test_fit_scale_equivariance(ideal_spectrum):
    noisy = add_noise(ideal_spectrum, NoiseSpec(30.0, 8))
    base = fit_lorentzian(noisy)
    scaled = fit_lorentzian(Spectrum(noisy.grid, 3.0 * noisy.gains))
    assert scaled.params.gain == pytest.approx(3.0 * base.params.gain, rel=1e-9)
    assert scaled.params.bfs_mhz == pytest.approx(base.params.bfs_mhz, rel=1e-9)
    assert scaled.params.linewidth_mhz == pytest.approx(base.params.linewidth_mhz, rel=1e-9)


def test_fit_offset_term(ideal_spectrum):
    lifted = Spectrum(ideal_spectrum.grid, ideal_spectrum.gains + 0.2)
    result = fit_lorentzian(lifted, FitConfig(fit_offset=True))
    assert result.offset == pytest.approx(0.2, abs=1e-6)
    assert result.params.bfs_mhz == pytest.approx(78.0, abs=1e-6)
    assert result.as_row()["offset"] == result.offset


def test_fit_many_marks_failures(grid157, ideal_spectrum):
    values = fit_many([ideal_spectrum, Spectrum(grid157, np.ones(157))])
    assert values[0] == pytest.approx(78.0, abs=1e-6)
    assert np.isnan(values[1])


@pytest.mark.slow
def test_fit_recovers_every_training_grid_point(grid157):
    worst_bfs = worst_width = 0.0
    for width in GRID_LINEWIDTHS_MHZ:
        for bfs in GRID_BFS_OFFSETS_MHZ:
            p = fit_lorentzian(synth_spectrum(LorentzianParams(1.0, bfs, width), grid157)).params
            worst_bfs = max(worst_bfs, abs(p.bfs_mhz - bfs))
            worst_width = max(worst_width, abs(p.linewidth_mhz - width) / width)
    assert worst_bfs < 1e-3
    assert worst_width < 1e-4
