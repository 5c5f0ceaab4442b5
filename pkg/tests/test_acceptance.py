"""Acceptance criteria 1 to 11 at their stated tolerances.

Each test runs one criterion through ``run_criterion`` and records its
pass/fail line, which the terminal summary prints in order.
"""
import pytest

from dppballs.acceptance import CRITERIA, run_criterion

from conftest import ACCEPTANCE_LINES


def _id(n):
    return f"c{n:02d}_" + CRITERIA[n][0].replace(" ", "_").replace("-", "_")


@pytest.mark.parametrize("number", sorted(CRITERIA), ids=_id)
def test_criterion(number):
    result = run_criterion(number)
    ACCEPTANCE_LINES.append((number, result.line()))
    print(result.line())
    assert result.passed, result.line()
