import numpy as np
import pytest

from koastack.imaging import GrayImage


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gray(a) -> GrayImage:
    return GrayImage(np.asarray(a, dtype=np.uint8))


def small_config(**overrides) -> dict:
    """A configuration that runs the whole pipeline in a few seconds."""
    cfg = {
        "synth": {"counts": [24, 12, 18, 9, 6], "width": 32, "height": 32},
        "preprocess": {"clahe": {"tiles_x": 4, "tiles_y": 4}, "target_width": 16, "target_height": 16},
        "training": {"learning_rate": 0.01, "dense_units": 16},
        "backbones": [
            {"name": "a", "channels": [4], "epochs": 3},
            {"name": "b", "channels": [3, 6], "epochs": 3},
        ],
        "selection_threshold": 0.0,
        "meta": {
            "grids": {"knn": {"k": [1, 3]}, "gbdt": {"depth": [2], "iterations": [5], "learning_rate": [0.1]},
                      "random_forest": {"n_trees": [5], "max_depth": [None]}},
            "folds": 3,
        },
        "stack_folds": 3,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """One finished end-to-end run shared by the workflow tests."""
    from koastack import config, workflow
    out = tmp_path_factory.mktemp("run")
    cfg = config.resolve(small_config())
    workflow.run_all(cfg, out)
    return cfg, out
