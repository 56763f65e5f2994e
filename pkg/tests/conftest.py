import json
from pathlib import Path

import pytest

from eoslab import activation, r_from_activation, r_from_loss, scalar_loss

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def oracles() -> dict:
    with open(FIXTURES / "derived_oracles.json") as f:
        raw = json.load(f)
    return {k: v["value"] for k, v in raw.items()}


@pytest.fixture(scope="session")
def r_logcosh():
    return r_from_loss(scalar_loss("log-cosh"))


@pytest.fixture(scope="session")
def r_sqrt():
    return r_from_loss(scalar_loss("square-root"))


@pytest.fixture(scope="session")
def r_tanh():
    return r_from_activation(activation("tanh"))


@pytest.fixture(scope="session")
def r_elu():
    return r_from_activation(activation("elu"))
