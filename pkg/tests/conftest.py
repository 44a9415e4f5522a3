import numpy as np
import pytest

from mixedflow.traffic import SimState


def make_state(pos, lane, cls=None, speed=None, max_speed=None, ring_length=1000.0, n_lanes=3, length=5.0):
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    cls = np.ones(n, dtype=np.int8) if cls is None else np.asarray(cls, dtype=np.int8)
    speed = np.zeros(n) if speed is None else np.asarray(speed, dtype=float)
    max_speed = np.full(n, 25.0) if max_speed is None else np.asarray(max_speed, dtype=float)
    return SimState(
        time=0.0, ring_length=float(ring_length), n_lanes=n_lanes, cls=cls, pos=pos,
        lane=np.asarray(lane, dtype=np.int64), speed=speed, max_speed=max_speed, length=np.full(n, length),
        lane_change_count=np.zeros(n, dtype=np.int64), last_change=np.full(n, -np.inf),
        changed=np.zeros(n, dtype=bool), suppressed=np.zeros(n, dtype=np.int64),
    )


@pytest.fixture
def state_factory():
    return make_state


# acceptance lines collected by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
