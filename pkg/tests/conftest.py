import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from framedisp.model import FrameConfig  # noqa: E402
from framedisp.render import Camera, scaled_camera  # noqa: E402
from framedisp.scene import Scene  # noqa: E402


@pytest.fixture(scope="session")
def small_scene():
    """Quarter-resolution default frame, padded to a multiple of 16."""
    return Scene.from_config(FrameConfig(), scaled_camera(Camera(), 0.25), 16)


@pytest.fixture(scope="session")
def half_scene():
    return Scene.from_config(FrameConfig(), scaled_camera(Camera(), 0.5), 32)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; the terminal summary repeats them all."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
