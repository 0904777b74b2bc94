import numpy as np
import pytest

from ganmosaic.generator import GeneratorSpec, calibrate_bn, random_weights


@pytest.fixture(scope="session")
def toy_spec():
    return GeneratorSpec(depth=2, channels=(16, 3), kernel=5, d_g=4, d_l=4, d_p=2,
                         mlp_hidden=8)


@pytest.fixture(scope="session")
def toy_weights(toy_spec):
    w = random_weights(toy_spec, seed=100)
    return calibrate_bn(w, toy_spec, n_samples=64, lattice=(8, 8), seed=101)


@pytest.fixture(scope="session")
def toy_spec_nop():
    # no periodic channels: translation-covariance and tiling tests
    return GeneratorSpec(depth=2, channels=(16, 3), kernel=5, d_g=4, d_l=4, d_p=0,
                         mlp_hidden=8)


@pytest.fixture(scope="session")
def toy_weights_nop(toy_spec_nop):
    w = random_weights(toy_spec_nop, seed=200)
    return calibrate_bn(w, toy_spec_nop, n_samples=64, lattice=(8, 8), seed=201)
