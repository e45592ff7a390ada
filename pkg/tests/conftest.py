import numpy as np
import pytest

from floatctl.config import RunConfig
from floatctl.harness import make_agent


def zero_policy_agent(cfg=None, log_std=-np.inf):
    """Agent whose policy mean is identically zero."""
    agent = make_agent(cfg or RunConfig(), np.random.default_rng(0))
    net = agent.policy.mean_net
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    agent.policy.log_std[:] = log_std
    return agent


@pytest.fixture
def zero_agent():
    return zero_policy_agent()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
