import numpy as np
import pytest

from partassembly.datagen import SyntheticSpec, generate_shape


@pytest.fixture(scope="session")
def table_record():
    spec = SyntheticSpec(template="table", d_pc=120, m=24)
    return generate_shape(spec, 11)


@pytest.fixture(scope="session")
def chair_record():
    spec = SyntheticSpec(template="chair", d_pc=120, m=24)
    return generate_shape(spec, 4)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
