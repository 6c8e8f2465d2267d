from pathlib import Path

import pytest

from dermflow.config import build_stack, data_dir, load_config
from dermflow.ontology import load_ontology

FIXTURES = data_dir() / "fixtures"
IMAGES = FIXTURES / "images"
MANIFESTS = FIXTURES / "manifests"


@pytest.fixture(scope="session")
def config():
    return load_config()


@pytest.fixture(scope="session")
def ontology(config):
    return load_ontology(config["ontology"]["taxonomy"])


@pytest.fixture(scope="session")
def stack(config):
    return build_stack(config)


@pytest.fixture
def image(tmp_path) -> Path:
    p = tmp_path / "lesion.img"
    p.write_bytes(b"not really a jpeg")
    return p
