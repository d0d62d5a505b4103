import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ambistop.scenario_model import ConstantCost, DiscreteNoise, DivestModel, LinearRevenue, example_stock_model

settings.register_profile(
    "ambistop", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ambistop")


def small_divest_model(noise=True) -> DivestModel:
    """Two scenarios, one factor, T=3: small enough for the exhaustive tree."""
    mu = np.zeros((2, 4, 1))
    mu[0, :, 0] = [0.0, 0.5, 0.5, 0.5]
    mu[1, :, 0] = [0.0, -0.8, -1.0, -1.2]
    sig = np.zeros((2, 4))
    sig[1, 1:] = 0.5 * np.sqrt(3.0)
    return DivestModel(
        phi=[[0.6]],
        vol=[[0.4]],
        mu_paths=mu,
        signal_means=sig,
        sigma_s=0.5,
        beta=0.95,
        revenue=LinearRevenue(0.2, (1.0,)),
        closure_cost=ConstantCost(-1.0),
        horizon_T=3,
        noise=DiscreteNoise.three_point() if noise else None,
    )


@pytest.fixture
def small_model():
    return small_divest_model()


@pytest.fixture(scope="session")
def stock_model():
    return example_stock_model(0.30)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines collected during the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
