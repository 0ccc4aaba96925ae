"""Acceptance suite: every criterion at its stated tolerance.  One PASS/FAIL
line per criterion is printed in the terminal summary."""

from __future__ import annotations

import pytest

from conftest import ACCEPTANCE_LINES
from spdelab.verify import CRITERIA, criterion_determinism


def _record(result):
    ACCEPTANCE_LINES.append(result.line())
    print(result.line())
    assert result.passed, result.details


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    _record(CRITERIA[number]())


def test_criterion_determinism(tmp_path):
    _record(criterion_determinism(tmp_path))
