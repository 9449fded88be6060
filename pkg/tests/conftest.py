import pytest

from rangemos.dataset_io import InMemorySequence
from rangemos.synth import gen_sequence, moving_box_scene, static_scene

ACCEPTANCE = []


def record(criterion, passed, detail):
    ACCEPTANCE.append((criterion, bool(passed), detail))


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")


def _store(frames):
    return InMemorySequence([f[0] for f in frames], [f[1] for f in frames],
                            [f[2] for f in frames])


@pytest.fixture(scope="session")
def static_frames():
    """20 frames, backdrop only: ego translation + yaw, 1 cm range noise."""
    return _store(gen_sequence(static_scene(frames=20), 20))


@pytest.fixture(scope="session")
def moving_frames():
    """20 frames of the moving-box scene (ground, parked car, car at 2 m/frame)."""
    return _store(gen_sequence(moving_box_scene(frames=20), 20))
