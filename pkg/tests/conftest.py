import numpy as np
import pytest

from cascade_lab.cost_model import PricingPolicy
from cascade_lab.mdp_env import CascadeEnv
from cascade_lab.trace_store import (ArmTarget, SynthConfig, planted_two_arm_config,
                                     synth_generate)


@pytest.fixture(scope="session")
def planted():
    return synth_generate(planted_two_arm_config(), 0)


@pytest.fixture(scope="session")
def planted_env(planted):
    return CascadeEnv(planted, PricingPolicy())


@pytest.fixture(scope="session")
def small_trace():
    """Three arms, 120 questions, explicit tier probabilities."""
    arms = (
        ArmTarget("a", "plain", 0.001, 0.001, 1.0, 1.0, 100.0, 50.0, p_easy=0.7, p_hard=0.2),
        ArmTarget("b", "plain", 0.004, 0.004, 2.0, 1.0, 100.0, 50.0, p_easy=0.8, p_hard=0.5),
        ArmTarget("c", "plain", 0.02, 0.02, 3.0, 1.0, 100.0, 50.0, p_easy=0.95, p_hard=0.9),
    )
    return synth_generate(SynthConfig(arms=arms, n_questions=120), 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
