import sys

import pytest

from vdwcavity.model import SystemParams


@pytest.fixture
def ela_params():
    """Baseline point on the upper dressed resonance, U = 0, small truncation."""
    return SystemParams.baseline(u_vdw=0.0, delta_a=2 ** 0.5 * 5.0, n_max=10)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
