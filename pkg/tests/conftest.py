import time
from collections import namedtuple

import pytest

from edgescale.agents.base import make_observation
from edgescale.domain import ServiceKind
from edgescale.monitoring import MetricSample

CV, QR = ServiceKind.CV, ServiceKind.QR


def snapshot(kind, quality, cores, tp, model=None, t=5.0):
    return MetricSample(t, kind, quality, cores, tp, model)


@pytest.fixture
def obs_factory():
    def make(cv=(192, 2, 2.0, 8.9), qr=(500, 2.0, 97.0)):
        q, m, c, tp = cv
        qq, qc, qtp = qr
        return make_observation(snapshot(CV, q, c, tp, m), snapshot(QR, qq, qc, qtp))

    return make



Pretrained = namedtuple("Pretrained", "nets curve seconds")


@pytest.fixture(scope="session")
def pretrained_dqn():
    """Default-config DQN pair pretrained once per session."""
    from edgescale.harness import ExperimentSpec, pretrain_dqn

    t0 = time.perf_counter()
    nets, curve = pretrain_dqn(ExperimentSpec(agent="dqn", seed=0))
    return Pretrained(nets, curve, time.perf_counter() - t0)


# acceptance reporting: one line per criterion in the terminal summary

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _CRITERIA[mark.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
