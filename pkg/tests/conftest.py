from dataclasses import replace

import pytest

from dipalab.config import ExperimentSpec, TrainSettings
from dipalab.data import GeneratorConfig
from dipalab.model import ModelConfig

TINY_TOML = """schema = 1
[experiment]
shots = [1, "all"]
losses = ["ce"]
dipa = [false, true]
seeds = [0, 1]
[generator]
num_classes = 4
channels = 2
total_samples = 200
obs_count_range = [3, 6]
test_only_classes = 1
[model]
embed_dim = 8
ffn_hidden = 16
[train]
max_epochs = 3
patience = 2
"""


def tiny_spec(**over) -> ExperimentSpec:
    spec = ExperimentSpec(
        shots=(1, "all"),
        losses=("ce",),
        dipa=(False, True),
        seeds=(0, 1),
        generator=GeneratorConfig(num_classes=4, channels=2, total_samples=200, obs_count_range=(3, 6),
                                  test_only_classes=1),
        model=ModelConfig(embed_dim=8, num_heads=2, ffn_hidden=16),
        train=TrainSettings(max_epochs=3, patience=2),
    )
    return replace(spec, **over)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(TINY_TOML)
    return path
