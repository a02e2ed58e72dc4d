import numpy as np
import pytest

from filament_eval.volume import InstanceSet, LabeledImage, VoxelMask

# pass/fail lines collected by test_acceptance and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def line_mask(shape, z, y, x0, length):
    xs = np.arange(x0, x0 + length)
    return VoxelMask.from_coords(shape, np.stack([np.full(length, z), np.full(length, y), xs], axis=1))


def make_image(shape, gt: dict, pred: dict | None, name="img", **kw) -> LabeledImage:
    return LabeledImage(
        name,
        InstanceSet(shape, gt),
        None if pred is None else InstanceSet(shape, pred),
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
