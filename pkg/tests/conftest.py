import numpy as np
import pytest
import torch

from insinet.data import extract_samples
from insinet.synthetic import SceneParams, synthesize_scene

DESK_PARAMS = SceneParams(n_mines=10, change_events=10, min_radius=6, max_radius=20)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def desk_scene():
    return synthesize_scene(11, 320, 320, DESK_PARAMS)


@pytest.fixture(scope="session")
def desk_samples(desk_scene):
    return extract_samples(*desk_scene, tile_size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
