"""Finite-difference gradient checks of every building block."""

# ruff: noqa: D103

import pytest

from inamp.errors import ConfigError
from inamp.gradcheck import CASES, GROUPS, TOLERANCE, run_checks


@pytest.mark.parametrize("module", ["conv", "loss", "inamp"])
def test_groups(module):  # type: ignore
    errors = run_checks(module, seed=0)
    assert list(errors) == list(GROUPS[module])
    assert max(errors.values()) < TOLERANCE


def test_all_cases():  # type: ignore
    errors = run_checks("all", seed=1)
    assert set(errors) == set(CASES)
    failed = {k: v for k, v in errors.items() if v >= TOLERANCE}
    assert failed == {}


def test_unknown_group():  # type: ignore
    with pytest.raises(ConfigError):
        run_checks("attention")
