from __future__ import annotations

from dataclasses import replace

import pytest

from attractorlab.config import model_from_config, parse_config
from attractorlab.model import (
    DelayOperator,
    EpsilonProfile,
    Forcing,
    ModelSpec,
    NonlinearitySplit,
    NonlocalCoefficient,
)
from attractorlab.spectral import build_basis


@pytest.fixture
def default_cfg():
    return parse_config(None)


@pytest.fixture
def default_spec(default_cfg):
    return model_from_config(default_cfg)


@pytest.fixture
def unforced_spec(default_spec):
    return replace(default_spec, forcing=Forcing(amplitude=0.0, offset=0.0))


@pytest.fixture
def linear_spec():
    """f = g = h = 0, eps = 1, a = 2: every mode decays at 2*lambda/(1+lambda)."""

    def _build(n: int = 3, kmax: int = 1) -> ModelSpec:
        basis = build_basis(n, kmax)
        return ModelSpec(
            basis=basis,
            epsilon=EpsilonProfile(kind="constant", base=1.0),
            coefficient=NonlocalCoefficient(a_lo=2.0, a_hi=2.0, m=2.0, M=2.0, weight=basis.unit(0)),
            nonlinearity=NonlinearitySplit(cubic=0.0, kappa=0.0),
            delay=DelayOperator(b=0.0, k=0.5),
            forcing=Forcing(amplitude=0.0, offset=0.0),
            skip_validation=True,
        )

    return _build
