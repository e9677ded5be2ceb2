import os

import pytest


@pytest.fixture(scope="session")
def base_seed():
    """Global seed offset; override with the PINLAB_SEED environment variable."""
    return int(os.environ.get("PINLAB_SEED", "0"))
