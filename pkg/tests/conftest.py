from pathlib import Path

import pytest

from submodular_mfg.config import RunConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name: str) -> RunConfig:
    return RunConfig.load(CONFIGS / f"{name}.toml")


@pytest.fixture(scope="session")
def shipped():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load(name).build()
        return cache[name]

    return get
