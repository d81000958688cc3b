import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lramkit.materials import builtin_materials


@pytest.fixture(scope="session")
def materials():
    return builtin_materials()


@pytest.fixture(scope="session")
def epoxy(materials):
    return materials["epoxy"]


@pytest.fixture(scope="session")
def steel(materials):
    return materials["steel"]


@pytest.fixture(scope="session")
def rubber(materials):
    return materials["silicone_rubber"]
