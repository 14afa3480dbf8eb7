import numpy as np
import pytest

from pathsec import assurance, traffic


@pytest.fixture(scope="session")
def catalog():
    return traffic.default_catalog()


@pytest.fixture(scope="session")
def signatures():
    return traffic.default_signatures()


@pytest.fixture(scope="session")
def suites(signatures):
    return {s.suite_id: s for s in signatures}


@pytest.fixture(scope="session")
def reference(catalog):
    return traffic.generate_baseline(catalog, 1024, seed=999, window_id="reference")


@pytest.fixture(scope="session")
def pcfg(reference):
    return assurance.PipelineConfig.from_baseline(reference, sensing_seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
