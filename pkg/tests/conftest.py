import pytest

from biasdecoy.channel import ChannelParams
from biasdecoy.decoy import ProtocolParams, SecurityParams

Y0 = 1.7e-6
ED = 0.033
MU = 0.479
N_TOTAL = 6e9


@pytest.fixture
def base_channel():
    return ChannelParams(1.0, Y0, ED)


@pytest.fixture
def security():
    return SecurityParams()


@pytest.fixture
def params_10db():
    # a reasonable (not optimal) biased allocation
    return ProtocolParams.from_fractions(MU, 0.05, 0.95, 0.94, 0.012, 0.047, 0.001, N_TOTAL)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed at the end of the run."""

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance_lines.append((number, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
