import os

# numpy's BLAS must not fan out threads: these are small matrices and the
# determinism tests assume a fixed reduction order.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest
from hypothesis import settings

from mibench import builder, dataio

settings.register_profile("suite", deadline=None, max_examples=100)
settings.load_profile("suite")


def small_net_spec(n_classes=2, h=4, w=256, filters=8, dropout=0.25):
    """A compact two-block CNN for synthetic 4-channel trials."""
    return builder.ModelSpec(
        h=h, w=w, layers_cnn=2,
        kernel_list=[(1, 32), (h, 1)],
        filters_list=[(1, filters), (filters, 2 * filters)],
        stride_list=None,
        padding_list=[(0, 16), (0, 0)],
        pooling_list=[-1, [1, (1, 8)]],
        groups_list=[1, filters],
        cnn_normalization_list=[True, True],
        layers_ff=1,
        neurons_list=[n_classes],
        activation_list=[-1, 3, 9],
        bias_list=[False, False, True],
        dropout_list=[-1, dropout, -1],
    )


@pytest.fixture(scope="session")
def eegnet_spec():
    return builder.eegnet_spec()


@pytest.fixture(scope="session")
def synth_2class():
    cfg = dataio.SynthConfig(class_bands=[(9, 11), (29, 31)], n_channels=4,
                             fs=128.0, n_samples=256, trials_per_class=80,
                             n_subjects=1, snr=1.5, seed=42)
    return dataio.synth_mi(cfg)


@pytest.fixture(scope="session")
def synth_multi_subject():
    cfg = dataio.SynthConfig(class_bands=[(9, 11), (29, 31)], n_channels=4,
                             fs=128.0, n_samples=256, trials_per_class=16,
                             n_subjects=9, snr=1.5, seed=7)
    return dataio.synth_mi(cfg)
