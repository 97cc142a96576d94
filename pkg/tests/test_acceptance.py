"""Acceptance suite: one test per criterion at its stated tolerance.

Each test prints its ``[PASS]``/``[FAIL]`` line; the lines are also gathered
into a block at the end of the pytest run.
"""

import pytest

from singular_shooting.acceptance import CRITERIA, Suite


@pytest.fixture(scope="module")
def suite():
    return Suite()


@pytest.mark.parametrize("number", CRITERIA)
def test_criterion(number, suite, request):
    result = getattr(suite, f"c{number}")()
    line = result.line()
    print(line)
    request.node.user_properties.append(("acceptance", line))
    assert result.passed, line
