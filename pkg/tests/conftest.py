import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hurryup.statsproto import StatsEvent  # noqa: E402

SNAPSHOT_LINES = [
    "75;ixI.;1498060927539",
    "77;1J.D;1498060927953",
    "78;579[;1498060927954",
    "79;Xrt@;1498060928003",
    "80;qc8o;1498060928014",
    "77;1J.D;1498060928023",
]


@pytest.fixture
def snapshot_lines():
    return list(SNAPSHOT_LINES)


@pytest.fixture
def snapshot_events():
    out = []
    for line in SNAPSHOT_LINES:
        tid, rid, ts = line.split(";")
        out.append(StatsEvent(int(tid), rid, int(ts)))
    return out
