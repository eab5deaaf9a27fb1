import sys
from pathlib import Path

import pytest

from cxrgen import tensor as T

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def fresh_graph():
    """Keep the recording tape isolated between tests."""
    T.reset_graph()
    yield
    T.reset_graph()
