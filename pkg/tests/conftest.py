import gc
import time
from collections import defaultdict

import pytest

from linkforge.harness import run_scenario, scenario_library

SUITE_BUDGET_S = 60.0
CRITERIA = {
    1: "solo saturation",
    2: "TCP unfairness",
    3: "UDP dominance",
    4: "loss reaction",
    5: "two-way starvation",
    6: "window overrun",
    7: "stream-count bias",
    8: "record/replay fidelity",
    9: "property suites and suite time",
}
_T0 = time.monotonic()
_outcomes = defaultdict(list)  # criterion -> [(passed, detail)]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test checks")


class ScenarioCache:
    """Each shipped scenario runs at most once per session; tests share the result."""

    def __init__(self):
        self.lib = scenario_library()
        self._runs = {}

    def config(self, name, profile=None):
        cfg = self.lib[name].config
        return cfg.with_profile(profile) if profile else cfg

    def run(self, name, profile=None):
        """(config, result, wall seconds)."""
        if profile is not None and self.config(name, profile) == self.config(name):
            profile = None
        key = (name, profile)
        if key not in self._runs:
            cfg = self.config(name, profile)
            t0 = time.monotonic()
            result = run_scenario(cfg)
            self._runs[key] = (cfg, result, time.monotonic() - t0)
            # Cached logs live for the whole session; keep them out of later collections.
            gc.freeze()
        return self._runs[key]


@pytest.fixture(scope="session")
def scenarios():
    return ScenarioCache()


@pytest.fixture
def detail(request):
    """Tests append a short measurement summary; it is shown on the criterion line."""
    notes = []
    request.node.user_properties.append(("detail", notes))
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        notes = dict(item.user_properties).get("detail", [])
        _outcomes[marker.args[0]].append((rep.passed, "; ".join(notes)))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    elapsed = time.monotonic() - _T0
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        results = _outcomes.get(n)
        if n == 9:
            results = list(results or []) + [(elapsed < SUITE_BUDGET_S,
                                              f"suite wall time {elapsed:.1f} s < {SUITE_BUDGET_S:.0f} s")]
        if not results:
            continue
        ok = all(p for p, _ in results)
        details = " | ".join(d for _, d in results if d)
        terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'}  {details}")


def pytest_sessionfinish(session, exitstatus):
    if _outcomes and time.monotonic() - _T0 >= SUITE_BUDGET_S and session.exitstatus == 0:
        session.exitstatus = 1
