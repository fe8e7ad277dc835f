import copy
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from mergesim import kpi
from mergesim.scenario import Scenario, apply_overrides, parse_scenario, reference_document
from mergesim.simulation import Simulation, SimulationReport

GOLDEN = Path(__file__).parent / "golden"


@dataclass
class RunResult:
    scenario: Scenario
    sim: Simulation
    report: SimulationReport
    out: Path
    wall_s: float

    @property
    def traces(self) -> Path:
        return self.out / "traces"

    @property
    def logs(self) -> Path:
        return self.out / "logs" / self.scenario.simulation.id

    def messages(self):
        return kpi.read_messages(self.traces / "messages.csv")

    def positions(self):
        return kpi.read_positions(self.traces / "positions.csv")

    def route_of(self) -> dict[str, str]:
        return {str(e): r[3] for e, r in self.sim._entity_rows.items()}


def rows(frame):
    """Iterate a trace frame as named tuples."""
    return frame.itertuples(index=False)


def run_scenario(doc: dict, out: Path, overrides=()) -> RunResult:
    scenario = parse_scenario(apply_overrides(doc, overrides))
    sim = Simulation(scenario)
    t0 = time.perf_counter()
    report = sim.run(out)
    return RunResult(scenario, sim, report, out, time.perf_counter() - t0)


@pytest.fixture
def reference_doc() -> dict:
    return copy.deepcopy(reference_document())


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory) -> RunResult:
    """The full 1200 s reference scenario, run once per session."""
    return run_scenario(reference_document(), tmp_path_factory.mktemp("reference"))


@pytest.fixture(scope="session")
def reference_kpi(reference_run):
    r = reference_run
    ctx = kpi.TraceContext.from_scenario(r.scenario)
    msgs, positions = r.messages(), r.positions()
    report = kpi.analyze(msgs, positions, kpi.requirement("Urban Intersection"), r.scenario.merge_zone, context=ctx)
    return report, msgs, positions


@pytest.fixture(scope="session")
def short_run(tmp_path_factory) -> RunResult:
    """First 300 s of the reference scenario."""
    return run_scenario(
        reference_document(), tmp_path_factory.mktemp("short"), ["simulation.end_time_s=300"]
    )


# --- acceptance summary -------------------------------------------------------

_criteria: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    n = getattr(report, "criterion", None)
    if n is not None:
        _criteria.setdefault(n, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok = all(o == "passed" for o in _criteria[n])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")
