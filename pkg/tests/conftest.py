import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lindbladiff.instrumentation import counters


@pytest.fixture(autouse=True)
def _fresh_counters():
    counters.reset()
    yield
