import numpy as np
import pytest

from qchest.channel import GridSpec, SystemDims, build_dictionaries, sample_channel
from qchest.measurement import (SensingOperator, agc_input_std, build_training,
                                design_quantizer, observe)


class Tiny:
    """A small quantized problem with everything needed to build objectives."""

    def __init__(self, seed, *, m=2, k=1, d=2, n=6, r_aoa=4, r_delay=2, paths=1,
                 bits=2, snr_db=10.0):
        rng = np.random.default_rng(seed)
        self.dims = SystemDims(m, k, d, paths)
        self.dicts = build_dictionaries(self.dims, GridSpec(r_aoa, r_delay))
        self.snr = 10 ** (snr_db / 10)
        self.train = build_training(k, d, n, self.snr)
        self.channel = sample_channel(int(rng.integers(2 ** 32)), self.dims)
        self.quantizer = design_quantizer(bits, agc_input_std(self.snr, k))
        self.obs = observe(self.channel, self.train, self.quantizer, int(rng.integers(2 ** 32)))
        self.op = SensingOperator.from_parts(self.dicts, self.train)


@pytest.fixture
def tiny():
    return Tiny


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
