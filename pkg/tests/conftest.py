import hypothesis.strategies as st
import pytest
from hypothesis import settings

from sahiref.geometry import BBox

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


@st.composite
def boxes(draw, extent: float = 512.0, integer: bool = False):
    if integer:
        x0 = draw(st.integers(0, int(extent) - 1))
        y0 = draw(st.integers(0, int(extent) - 1))
        x1 = draw(st.integers(x0 + 1, int(extent)))
        y1 = draw(st.integers(y0 + 1, int(extent)))
        return BBox(x0, y0, x1, y1)
    coord = st.floats(0, extent, allow_nan=False, allow_infinity=False)
    x0, y0 = draw(coord), draw(coord)
    w = draw(st.floats(1e-3, extent, allow_nan=False))
    h = draw(st.floats(1e-3, extent, allow_nan=False))
    return BBox(x0, y0, x0 + w, y0 + h)


@pytest.fixture
def box_strategy():
    return boxes


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
