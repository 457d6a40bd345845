import numpy as np
import pytest

from bfsnet.dataset import GridSpec, generate_test_set, generate_training_set
from bfsnet.fnn import Network, NetworkLayout, TrainConfig, init_network, train
from bfsnet.spectra import FrequencyGrid, LorentzianParams, synth_spectrum


@pytest.fixture
def grid157():
    return FrequencyGrid(0.0, 1.0, 157)


@pytest.fixture
def ideal_spectrum(grid157):
    return synth_spectrum(LorentzianParams(1.0, 78.0, 30.0), grid157)


@pytest.fixture
def tiny_spec():
    """3 linewidths x 4 offsets x 2 SNRs x 2 realizations = 48 columns."""
    return GridSpec(
        linewidths_mhz=(20.0, 30.0, 40.0),
        bfs_fractions=(0.3, 0.4, 0.5, 0.6),
        snrs_db=(16.0, 26.0),
        realizations_per_snr=2,
        base_seed=7,
    )


def constant_network(in_window_mhz, scan_range_mhz=156.0):
    """157-1 linear network whose output is a fixed in-window BFS."""
    layout = NetworkLayout((157, 1))
    return Network(
        layout,
        (np.zeros((1, 157)),),
        (np.array([in_window_mhz / scan_range_mhz]),),
        scan_range_mhz=scan_range_mhz,
    )


@pytest.fixture
def const_net():
    return constant_network(78.0)


@pytest.fixture(scope="session")
def acceptance_model():
    """157-20-8-1 network trained by LM on every linewidth and offset of the full grid."""
    train_set = generate_training_set(GridSpec.dense(base_seed=0), workers=4)
    test_set = generate_test_set(
        GridSpec.dense(base_seed=1, snrs_db=(16.0,), realizations_per_snr=1), training_seed=0, workers=4,
    )
    net = init_network(NetworkLayout.desk(), seed=0)
    model, _ = train(net, train_set, test_set, TrainConfig(max_iterations=60, early_stop_patience=5))
    return model
