from pathlib import Path

import numpy as np
import pytest

from bfsnet.errors import BadMagicError, DomainError, ShapeError
from bfsnet.lcf import fit_lorentzian
from bfsnet.resample import ScanConfig
from bfsnet.trace import (
    FiberProfile,
    FnnMethod,
    HeatedSegment,
    LcfMethod,
    TraceMeasurement,
    analyze_traces,
    botda_150km_profile,
    botda_23km_profile,
    frequency_difference,
    heated_zone_temperature,
    load_profile,
    load_trace,
    measurement_uncertainty,
    per_km_mean_deviation,
    retrieve_bfs_profile,
    save_trace,
    simulate_trace,
)

PROFILES = Path(__file__).resolve().parent.parent / "profiles"


def short_fiber(snr_db=300.0, heated=()):
    return FiberProfile(length_km=1.0, spatial_step_m=100.0, base_bfs_mhz=80.0, snr_db=snr_db, heated_segments=heated)


def test_positions_cover_fiber():
    profile, scan = botda_23km_profile()
    positions = profile.positions_km()
    assert len(positions) == 2396
    assert positions[-1] == pytest.approx(23.95)
    assert scan == ScanConfig(1, 200)


def test_profile_validation():
    with pytest.raises(DomainError):
        FiberProfile(length_km=1.0, spatial_step_m=0.0)
    outside = short_fiber(heated=(HeatedSegment(0.9, 1.2, 5.0, 1.0),))
    with pytest.raises(DomainError):
        simulate_trace(outside, ScanConfig(1, 200), True, 0)


def test_snr_segments_split_the_fiber_in_quarters():
    profile, _ = botda_150km_profile()
    snr = profile.snr_at(np.array([0.0, 40.0, 100.0, 120.0, 150.62]))
    np.testing.assert_array_equal(snr, [27.0, 27.0, 27.0, 18.0, 18.0])


def test_per_segment_linewidth_and_gain_shape_the_trace():
    profile = FiberProfile(
        length_km=1.0, spatial_step_m=100.0, base_bfs_mhz=80.0,
        linewidth_mhz=(20.0, 40.0), gain=[1.0, 0.5], snr_db=300.0,
    )
    assert profile.gain == (1.0, 0.5)
    t = simulate_trace(profile, ScanConfig(1, 200), False, 0)
    near = fit_lorentzian(t.spectrum(0)).params
    far = fit_lorentzian(t.spectrum(10)).params
    assert (near.linewidth_mhz, near.gain) == (pytest.approx(20.0, rel=1e-4), pytest.approx(1.0, rel=1e-4))
    assert (far.linewidth_mhz, far.gain) == (pytest.approx(40.0, rel=1e-4), pytest.approx(0.5, rel=1e-4))


def test_callable_bfs_profile():
    profile = FiberProfile(length_km=1.0, spatial_step_m=100.0, base_bfs_mhz=lambda z: 80.0 + 10.0 * z, snr_db=300.0)
    np.testing.assert_allclose(profile.base_bfs_at([0.0, 0.5]), [80.0, 85.0])
    t = simulate_trace(profile, ScanConfig(1, 200), False, 0)
    np.testing.assert_allclose(retrieve_bfs_profile(t, LcfMethod()), 80.0 + 10.0 * t.positions, atol=1e-3)


@pytest.mark.parametrize("kwargs", [{"linewidth_mhz": (30.0, -1.0)}, {"gain": ()}, {"snr_db": []}, {"gain": 0.0}])
def test_profile_rejects_bad_fiber_properties(kwargs):
    with pytest.raises(DomainError):
        FiberProfile(length_km=1.0, spatial_step_m=10.0, **kwargs)


def test_heated_zone_shift_of_23km_setup():
    profile, _ = botda_23km_profile()
    seg = profile.heated_segments[0]
    assert seg.delta_bfs_mhz == pytest.approx(20.41)
    assert seg.contains(np.array([23.7]))[0]


def test_simulation_is_deterministic():
    scan = ScanConfig(1, 200)
    a = simulate_trace(short_fiber(20.0), scan, False, 5)
    b = simulate_trace(short_fiber(20.0), scan, False, 5)
    c = simulate_trace(short_fiber(20.0), scan, False, 6)
    assert a.gains.shape == (11, 201)
    assert np.array_equal(a.gains, b.gains)
    assert not np.array_equal(a.gains, c.gains)


def test_heated_flag_without_segments_changes_nothing():
    scan = ScanConfig(1, 200)
    a = simulate_trace(short_fiber(20.0), scan, True, 1)
    b = simulate_trace(short_fiber(20.0), scan, False, 1)
    assert np.array_equal(a.gains, b.gains)


def test_trace_matrix_shape_is_checked():
    with pytest.raises(ShapeError):
        TraceMeasurement(np.zeros(3), ScanConfig(1, 200), np.zeros((3, 10)), 0)


def test_lcf_recovers_noiseless_profile():
    t = simulate_trace(short_fiber(), ScanConfig(1, 200), False, 0)
    bfs = retrieve_bfs_profile(t, LcfMethod())
    np.testing.assert_allclose(bfs, 80.0, atol=1e-3)


def test_fnn_adds_window_start(const_net):
    t = simulate_trace(short_fiber(), ScanConfig(1, 200), False, 0)
    np.testing.assert_allclose(retrieve_bfs_profile(t, FnnMethod(const_net)), 80.0, atol=1e-9)


def test_bad_positions_become_gaps(const_net):
    t = simulate_trace(short_fiber(), ScanConfig(1, 200), False, 0)
    gains = t.gains.copy()
    gains[4] = 0.5
    broken = TraceMeasurement(t.positions, t.scan, gains, t.seed)
    for method in (LcfMethod(), FnnMethod(const_net)):
        bfs = retrieve_bfs_profile(broken, method)
        assert np.isnan(bfs[4])
        assert np.all(np.isfinite(np.delete(bfs, 4)))


def test_parallel_fit_keeps_position_order():
    t = simulate_trace(short_fiber(25.0), ScanConfig(1, 200), False, 3)
    serial = retrieve_bfs_profile(t, LcfMethod())
    parallel = retrieve_bfs_profile(t, LcfMethod(workers=3))
    np.testing.assert_array_equal(serial, parallel)


def test_heated_difference_with_lcf():
    heated = (HeatedSegment(0.4, 0.6, 15.7, 1.3),)
    profile = short_fiber(heated=heated)
    scan = ScanConfig(1, 200)
    before = retrieve_bfs_profile(simulate_trace(profile, scan, False, 1), LcfMethod())
    after = retrieve_bfs_profile(simulate_trace(profile, scan, True, 2), LcfMethod())
    diff = frequency_difference(before, after)
    inside = heated[0].contains(profile.positions_km())
    np.testing.assert_allclose(diff[inside], 20.41, atol=1e-3)
    np.testing.assert_allclose(diff[~inside], 0.0, atol=1e-3)


def test_frequency_difference_cases():
    np.testing.assert_array_equal(frequency_difference([1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])
    np.testing.assert_array_equal(frequency_difference([3.0], [4.5]), [1.5])
    with pytest.raises(ShapeError):
        frequency_difference([1.0, 2.0], [1.0])


def test_uncertainty_of_zero_difference():
    positions = np.linspace(0.0, 1.0, 50)
    assert measurement_uncertainty(np.zeros(50), positions, (0.0, 1.0), 1.3) == 0.0


def test_uncertainty_matches_gaussian_spread():
    rng = np.random.default_rng(0)
    positions = np.linspace(0.0, 20.0, 4000)
    diff = rng.normal(0.0, 0.286, 4000)
    assert measurement_uncertainty(diff, positions, (0.0, 20.0), 1.3) == pytest.approx(0.22, abs=0.01)


def test_uncertainty_region_rules():
    positions = np.linspace(0.0, 10.0, 101)
    diff = np.zeros(101)
    segment = HeatedSegment(5.0, 6.0, 10.0, 1.0)
    with pytest.raises(DomainError):
        measurement_uncertainty(diff, positions, (4.0, 8.0), 1.0, (segment,))
    with pytest.raises(DomainError):
        measurement_uncertainty(diff, positions, (0.0, 2.0), 1.0)


def test_per_km_deviation():
    positions = np.arange(0.0, 23.951, 0.05)
    a = np.full(positions.shape, 80.0)
    assert len(per_km_mean_deviation(a, a, positions).deviation_mhz) == 24
    np.testing.assert_array_equal(per_km_mean_deviation(a, a, positions).deviation_mhz, 0.0)
    np.testing.assert_allclose(per_km_mean_deviation(a + 0.1, a, positions).deviation_mhz, 0.1)


def test_per_km_deviation_absent_bins_and_signed():
    positions = np.array([0.1, 0.2, 2.5, 2.6])
    a = np.array([1.0, -1.0, 0.3, 0.3])
    b = np.zeros(4)
    result = per_km_mean_deviation(a, b, positions)
    assert result.deviation_mhz[0] == 1.0
    assert np.isnan(result.deviation_mhz[1])
    assert result.deviation_mhz[2] == pytest.approx(0.3)
    assert per_km_mean_deviation(a, b, positions, signed=True).deviation_mhz[0] == 0.0
    with pytest.raises(DomainError):
        per_km_mean_deviation(a, b, positions[::-1])


def test_heated_zone_temperature():
    positions = np.linspace(0.0, 1.0, 11)
    diff = np.where((positions >= 0.4) & (positions <= 0.6), 20.41, 0.0)
    assert heated_zone_temperature(diff, positions, HeatedSegment(0.4, 0.6, 15.7, 1.3)) == pytest.approx(15.7)


def test_analyze_traces_recovers_temperature():
    heated = (HeatedSegment(2.5, 2.7, 10.0, 1.0),)
    profile = FiberProfile(length_km=3.0, spatial_step_m=20.0, base_bfs_mhz=80.0, snr_db=30.0, heated_segments=heated)
    scan = ScanConfig(1, 200)
    before = simulate_trace(profile, scan, False, 11)
    after = simulate_trace(profile, scan, True, 12)
    report = analyze_traces(before, after, LcfMethod(), profile)
    assert report.method == "lcf"
    assert report.heated_temperatures_c[0] == pytest.approx(10.0, abs=0.5)
    assert 0.0 < report.uncertainty_c < 1.0
    assert list(report.profile_frame().columns) == ["position_km", "bfs_mhz", "freq_difference_mhz"]


def test_trace_round_trip(tmp_path):
    t = simulate_trace(short_fiber(20.0), ScanConfig(1, 200), False, 9)
    path = tmp_path / "t.bin"
    save_trace(t, path)
    back = load_trace(path)
    assert back.scan == t.scan
    assert back.seed == 9
    assert np.array_equal(back.gains, t.gains)
    assert np.array_equal(back.positions, t.positions)
    path.write_bytes(b"BFSFNN01" + path.read_bytes()[8:])
    with pytest.raises(BadMagicError):
        load_trace(path)


@pytest.mark.parametrize("name, preset", [("botda_23km.toml", botda_23km_profile), ("botda_150km.toml", botda_150km_profile)])
def test_shipped_profiles_match_presets(name, preset):
    assert load_profile(PROFILES / name) == preset()


@pytest.mark.slow
def test_23km_closure_with_both_methods(acceptance_model):
    profile, scan = botda_23km_profile()
    before = simulate_trace(profile, scan, False, 101)
    after = simulate_trace(profile, scan, True, 102)
    lcf = analyze_traces(before, after, LcfMethod(workers=4), profile)
    fnn = analyze_traces(before, after, FnnMethod(acceptance_model), profile)
    for report in (lcf, fnn):
        assert report.heated_temperatures_c[0] == pytest.approx(15.7, abs=0.5)
    assert abs(fnn.uncertainty_c - lcf.uncertainty_c) <= 0.2 * lcf.uncertainty_c


@pytest.mark.slow
def test_150km_method_agreement(acceptance_model):
    profile, scan = botda_150km_profile()
    t = simulate_trace(profile, scan, False, 103)
    fnn = retrieve_bfs_profile(t, FnnMethod(acceptance_model))
    lcf = retrieve_bfs_profile(t, LcfMethod(workers=4))
    deviation = per_km_mean_deviation(fnn, lcf, t.positions).deviation_mhz
    assert np.mean(deviation[np.isfinite(deviation)] < 0.2) >= 0.9


@pytest.mark.slow
def test_noiseless_trace_with_trained_network(acceptance_model):
    t = simulate_trace(short_fiber(), ScanConfig(1, 200), False, 0)
    np.testing.assert_allclose(retrieve_bfs_profile(t, FnnMethod(acceptance_model)), 80.0, atol=0.5)
