import numpy as np
import pytest

from qrlob.presets import paperlike_bundle


@pytest.fixture(scope="session")
def paperlike():
    return paperlike_bundle()


@pytest.fixture(scope="session")
def shared_tmp(tmp_path_factory):
    return tmp_path_factory.mktemp("shared")
