"""Shared fixtures: small architectures, datasets and checkpoints."""

import json

import pytest

from src.fieldamort import data
from src.fieldamort.models import Architecture, ModelKind, build_model
from src.fieldamort.numerics import make_rng
from src.fieldamort.oracle import Box
from src.fieldamort.utils.logger import Logger


@pytest.fixture(autouse=True)
def quiet_logger():
    Logger.quiet = True
    yield
    Logger.quiet = False


@pytest.fixture
def rng():
    return make_rng(1234)


def tiny_arch(kind, **overrides) -> Architecture:
    values = dict(
        kind=ModelKind.parse(kind),
        n_max=2,
        trunk_width=6,
        trunk_depth=2,
        inr_width=4,
        inr_depth=2,
        hyper_width_factor=1.0,
        hyper_depth=2,
        hyper_max_width=8,
        output_scale=1.0,
    )
    values.update(overrides)
    return Architecture(**values)


def tiny_model(kind, dim=2, seed=0, **overrides):
    return build_model(tiny_arch(kind, **overrides), Box.square(dim=dim), make_rng(seed), seed=seed)


@pytest.fixture
def small_config():
    return data.DataGenConfig(n_collections=6, points_per_collection=16, seed=3)


@pytest.fixture
def small_dataset(small_config):
    return data.generate(small_config)


@pytest.fixture
def multi_dataset():
    return data.generate(data.DataGenConfig(n_collections=4, sources_per_collection=2, max_sources_per_collection=6,
                                            points_per_collection=16, seed=5))


@pytest.fixture
def config_file(tmp_path):
    """Writes a run configuration small enough for CLI tests."""

    def write(doc=None):
        doc = doc if doc is not None else {
            "data": {"n_collections": 6, "points_per_collection": 16, "seed": 0},
            "validation": {"n_collections": 3, "sources_per_collection": 2, "max_sources_per_collection": 6,
                           "points_per_collection": 16, "seed": 1},
            "train": {"kind": "linear", "epochs_per_stage": 2, "log_lrs": [-3.0, -4.0], "batch_collections": 4,
                      "n_max": 2, "hyper_max_width": 8, "log_every": 1},
            "bench": {"m_values": [4, 16], "n_values": [4, 16], "repeats": 3, "seed": 0},
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        return str(path)

    return write
