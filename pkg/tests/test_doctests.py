import doctest

import pytest

import robinsync.linalg
import robinsync.syncalg


@pytest.mark.parametrize("module", [robinsync.linalg, robinsync.syncalg])
def test_module_doctests(module):
    result = doctest.testmod(module)
    assert result.failed == 0
