import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ldedfusion.sim import DefectOnsetModel, WallSpec, simulate  # noqa: E402

SMALL_WALLS = (WallSpec(n_layers=4, dwell_s=0), WallSpec(n_layers=3, dwell_s=5, travel_speed_mm_s=27.5))
SMALL_ONSET = DefectOnsetModel(base_onset_layer=2, dwell_gain_layers_per_s=0.0)


@pytest.fixture(scope="session")
def small_walls():
    return simulate(SMALL_WALLS, seed=11, onset=SMALL_ONSET)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, small_walls):
    from ldedfusion.sim import write_dataset

    out = tmp_path_factory.mktemp("ds") / "small"
    write_dataset(SMALL_WALLS, out, seed=11, onset=SMALL_ONSET)
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(line)
