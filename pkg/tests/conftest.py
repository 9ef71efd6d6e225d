from importlib import resources
from pathlib import Path

import pytest

from hydrosim.hydro_physics import TurbineUnit


EXAMPLES = Path(str(resources.files("hydrosim") / "data" / "examples"))


@pytest.fixture
def examples_dir():
    return EXAMPLES


@pytest.fixture
def francis100():
    return TurbineUnit("U1", "Francis", rated_power=100.0, rated_head=80.0, rated_flow=140.0)


def unit_pu(**kw):
    """A 100 MVA unit whose per-unit gains are all 1 unless overridden."""
    base = dict(unit_id="T", turbine_type="Francis", rated_power=100.0, rated_head=100.0, rated_flow=100.0,
                turbine_gain_At=1.0, no_load_flow_qnl=0.0, water_time_constant_Tw=1.0, inertia_H=4.0)
    base.update(kw)
    return TurbineUnit(**base)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
