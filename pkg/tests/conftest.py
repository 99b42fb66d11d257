import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from rmsched.config import ScenarioConfig, MachineSpec

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def make_smoke_config(**overrides):
    """Tiny explicit two-machine shop used across the unit tests."""
    cfg = ScenarioConfig(
        machines=[
            MachineSpec(native=(0, 1), reconfigurable=(2, 3), setup_time=1.0,
                        reconfig_time=2.0, flexibility=0.9, reliability=0.95),
            MachineSpec(native=(2, 3), reconfigurable=(0, 1), setup_time=1.0,
                        reconfig_time=2.0, flexibility=0.8, reliability=0.9),
        ],
        job_count=5,
        process_count=4,
        view_size=3,
        horizon=200.0,
        ops_range=(2, 3),
        proc_time_range=(2.0, 5.0),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


@pytest.fixture
def smoke_cfg():
    return make_smoke_config()


def config_path(name: str) -> str:
    return os.path.abspath(os.path.join(CONFIG_DIR, name))
