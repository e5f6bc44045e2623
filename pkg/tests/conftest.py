import pytest

from mtaffect.data import DataGenConfig
from mtaffect.trainer import TrainConfig


@pytest.fixture
def tiny_config():
    """A config that trains in well under a second."""
    return TrainConfig(data=DataGenConfig(n_groups=20, group_size=10, seed=0), epochs=2, seed=0)
