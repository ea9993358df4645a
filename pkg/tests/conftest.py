"""Suite-wide bookkeeping.

Every ``FitTrace`` built anywhere in the session is checked on creation for
a non-decreasing objective and, for VI fits, for the convex-combination
form of the point estimate. Acceptance results are collected here and
printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from stackcast import estimator

SUITE_BUDGET_S = 120.0
MONOTONE_SLACK = 1e-10
MAP_TOL = 1e-12

_start = time.perf_counter()


class TraceAudit:
    def __init__(self):
        self.fits = {"em": 0, "vi": 0}
        self.worst_drop = 0.0
        self.worst_map_gap = 0.0
        self.bad_monotone = []
        self.bad_map = []

    def check(self, trace):
        self.fits[trace.method] += 1
        path = trace.objective_path
        drop = float(np.max(path[:-1] - path[1:])) if path.size > 1 else 0.0
        self.worst_drop = max(self.worst_drop, drop)
        if drop > MONOTONE_SLACK:
            self.bad_monotone.append((trace.method, trace.iterations, drop))
        if trace.method == "vi" and trace.iterations > 0:
            rho = trace.schedule.rho
            m = trace.schedule.num_models
            r = trace.final_responsibilities
            share = r.sum(axis=1) / r.shape[1]
            expected = (rho / (1 + rho)) / m + share / (1 + rho)
            gap = float(np.max(np.abs(trace.final_weights.weights - expected)))
            self.worst_map_gap = max(self.worst_map_gap, gap)
            if gap > MAP_TOL:
                self.bad_map.append((rho, m, r.shape[1], gap))


AUDIT = TraceAudit()
ACCEPTANCE = {}

_orig_init = estimator.FitTrace.__init__


def _audited_init(self, *args, **kwargs):
    _orig_init(self, *args, **kwargs)
    AUDIT.check(self)


estimator.FitTrace.__init__ = _audited_init


def elapsed() -> float:
    return time.perf_counter() - _start


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"\nACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def trace_audit():
    return AUDIT


def pytest_collection_modifyitems(config, items):
    # Suite-wide criteria look at everything that ran before them, so the
    # acceptance module goes last and its suite-wide checks last of all.
    def rank(item):
        if item.module.__name__.endswith("test_acceptance"):
            return 2 if "suite" in item.keywords else 1
        return 0
    items.sort(key=rank)


def pytest_configure(config):
    config.addinivalue_line("markers", "suite: acceptance check over the whole session")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 13):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            tr.write_line(f"criterion {n:2d}: not run")
    tr.write_line(
        f"fits audited: {AUDIT.fits['em']} EM, {AUDIT.fits['vi']} VI; "
        f"largest objective drop {AUDIT.worst_drop:.3g}; "
        f"largest MAP identity gap {AUDIT.worst_map_gap:.3g}"
    )
    tr.write_line(f"session wall time: {elapsed():.1f} s (budget {SUITE_BUDGET_S:.0f} s)")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT.bad_monotone or AUDIT.bad_map or elapsed() > SUITE_BUDGET_S:
        session.exitstatus = 1
