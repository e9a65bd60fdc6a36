"""End-to-end acceptance run: every criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see one line per criterion.
The suite is executed twice; the second run only feeds the determinism check.
"""

import json

import pytest

from conebif.acceptance import TITLES, SuiteConfig, run_suite


@pytest.fixture(scope="module")
def results():
    res = run_suite(SuiteConfig(), log=print)
    print()
    for r in res:
        print(r.line())
    return {r.number: r for r in res}


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(TITLES))
def test_criterion(results, number):
    r = results[number]
    assert r.passed, json.dumps(r.values, indent=1, default=str)[:4000]
