import numpy as np
import pandas as pd
import pytest

from bfsnet.dataset import (
    DATASET_MAGIC,
    GridSpec,
    Dataset,
    column_seed,
    dataset_hash,
    denormalize_target,
    export_csv,
    generate_ideal_set,
    generate_test_set,
    generate_training_set,
    load_dataset,
    save_dataset,
    shuffle_split,
)
from bfsnet.errors import (
    BadMagicError,
    DimensionMismatchError,
    DomainError,
    SeedCollisionError,
    ShapeError,
    TargetRangeWarning,
    TruncatedFileError,
    VersionMismatchError,
)
from bfsnet.spectra import LorentzianParams, NoiseSpec, add_noise, normalize_spectrum, synth_spectrum


def test_full_grid_has_385560_columns():
    spec = GridSpec.full()
    assert len(spec.linewidths_mhz) == 51
    assert len(spec.bfs_fractions) == 126
    assert spec.column_count() == 385_560
    assert spec.grid().count == 157


def test_full_grid_offsets_stay_inside_10_to_90_percent():
    fractions = np.asarray(GridSpec.full().bfs_fractions)
    assert fractions[0] == pytest.approx(0.1)
    assert fractions[-1] == pytest.approx(0.9)
    assert fractions.max() <= 0.9 + 1e-12
    assert np.all(np.diff(fractions) > 0)
    assert np.diff(fractions * 156.0) == pytest.approx(np.full(125, 124.8 / 125))


def test_desk_grid_size():
    spec = GridSpec.desk()
    assert (len(spec.linewidths_mhz), len(spec.bfs_fractions)) == (17, 42)
    assert spec.column_count() == 17 * 42 * 3 * 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"linewidths_mhz": ()},
        {"bfs_fractions": (0.0, 0.5)},
        {"bfs_fractions": (1.2,)},
        {"snrs_db": ()},
        {"realizations_per_snr": 0},
    ],
)
def test_gridspec_validation(kwargs):
    with pytest.raises(DomainError):
        GridSpec(**kwargs)


def test_training_set_shape_and_order(tiny_spec):
    d = generate_training_set(tiny_spec)
    assert (d.rows, d.count) == (157, 48)
    d.validate()
    # (linewidth, fraction, snr, realization): 4 columns per fraction
    assert d.targets[0] == pytest.approx(0.3)
    assert d.targets[4] == pytest.approx(0.4)
    assert d.targets[16] == pytest.approx(0.3)


def test_column_can_be_regenerated_alone(tiny_spec):
    d = generate_training_set(tiny_spec)
    i, j, k, r = 1, 2, 1, 0
    col = ((i * 4 + j) * 2 + k) * 2 + r
    ideal = synth_spectrum(LorentzianParams(1.0, 0.5 * 156.0, 30.0), tiny_spec.grid())
    seed = column_seed(tiny_spec.base_seed, 0, (i, j, k, r))
    expected = normalize_spectrum(add_noise(ideal, NoiseSpec(26.0, seed))).gains
    assert np.array_equal(d.inputs[:, col], expected)


def test_generation_is_reproducible_and_worker_independent(tiny_spec):
    a = generate_training_set(tiny_spec)
    b = generate_training_set(tiny_spec, workers=3)
    assert dataset_hash(a) == dataset_hash(b)


def test_single_linewidth_grid():
    spec = GridSpec(linewidths_mhz=(30.0,), bfs_fractions=(0.5,), snrs_db=(16.0,), realizations_per_snr=3)
    d = generate_training_set(spec)
    assert d.count == 3
    assert len({dataset_hash(Dataset(d.inputs[:, [c]], d.targets[[c]], spec)) for c in range(3)}) == 3


def test_test_set_uses_its_own_stream(tiny_spec):
    train = generate_training_set(tiny_spec)
    test = generate_test_set(tiny_spec)
    assert not np.array_equal(train.inputs, test.inputs)
    np.testing.assert_array_equal(train.targets, test.targets)


def test_test_set_seed_collision(tiny_spec):
    with pytest.raises(SeedCollisionError):
        generate_test_set(tiny_spec, training_seed=tiny_spec.base_seed)


def test_default_test_grid_is_16db():
    spec = GridSpec.full_test()
    assert spec.snrs_db == (16.0,)
    assert spec.base_seed != GridSpec.full().base_seed


def test_ideal_set_has_no_noise(tiny_spec):
    d = generate_ideal_set(tiny_spec)
    assert d.count == 12
    expected = normalize_spectrum(synth_spectrum(LorentzianParams(1.0, 0.3 * 156.0, 20.0), tiny_spec.grid()))
    assert np.array_equal(d.inputs[:, 0], expected.gains)


def test_denormalize_target():
    assert denormalize_target(0.5, 156.0) == 78.0
    assert denormalize_target(0.1, 156.0) == pytest.approx(15.6)
    with pytest.raises(DomainError):
        denormalize_target(1.2, 156.0, strict=True)
    with pytest.warns(TargetRangeWarning):
        assert denormalize_target(1.2, 156.0) == pytest.approx(187.2)


def test_dataset_rejects_mismatched_targets():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((157, 3)), np.zeros(2), GridSpec())


def test_save_load_round_trip(tmp_path, tiny_spec):
    d = generate_training_set(tiny_spec)
    path = tmp_path / "d.bin"
    save_dataset(d, path)
    back = load_dataset(path)
    assert dataset_hash(back) == dataset_hash(d)
    assert back.meta == tiny_spec


def test_load_rejects_bad_files(tmp_path, tiny_spec):
    path = tmp_path / "d.bin"
    save_dataset(generate_ideal_set(tiny_spec), path)
    raw = path.read_bytes()

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTADSET" + raw[8:])
    with pytest.raises(BadMagicError):
        load_dataset(bad)

    bad.write_bytes(DATASET_MAGIC[:-1] + b"2" + raw[8:])
    with pytest.raises(VersionMismatchError):
        load_dataset(bad)

    bad.write_bytes(raw[:-5])
    with pytest.raises(TruncatedFileError):
        load_dataset(bad)

    bad.write_bytes(raw + b"\x00" * 8)
    with pytest.raises(DimensionMismatchError):
        load_dataset(bad)


def test_shuffle_split(tiny_spec):
    d = generate_ideal_set(tiny_spec)
    first, second = shuffle_split(d, 0.25, seed=3)
    assert (first.count, second.count) == (9, 3)
    again, _ = shuffle_split(d, 0.25, seed=3)
    assert dataset_hash(first) == dataset_hash(again)
    merged = np.sort(np.concatenate([first.targets, second.targets]))
    np.testing.assert_array_equal(merged, np.sort(d.targets))
    whole, empty = shuffle_split(d, 0.0, seed=3)
    assert (whole.count, empty.count) == (12, 0)
    with pytest.raises(DomainError):
        shuffle_split(d, 1.0, seed=3)


def test_export_csv(tmp_path, tiny_spec):
    d = generate_ideal_set(tiny_spec)
    path = tmp_path / "slice.csv"
    export_csv(d, path, columns=[0, 5])
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["sample", "target", "frequency_mhz", "gain"]
    assert len(frame) == 2 * 157
    assert set(frame["sample"]) == {0, 5}
