import numpy as np
import pytest

from gestalt_probe.runner import load_model
from gestalt_probe.smallnet import SmallNet, save_bundle


@pytest.fixture(scope="session")
def smallnet_bundle(tmp_path_factory):
    """Seeded internal reference net, serialized once per session."""
    d = tmp_path_factory.mktemp("bundle")
    net = SmallNet(input_size=64, n_classes=3, seed=1234)
    path = save_bundle(net, d / "smallnet.onnx")
    return path


@pytest.fixture(scope="session")
def smallnet_handle(smallnet_bundle):
    return load_model(smallnet_bundle)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
