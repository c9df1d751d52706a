"""Acceptance suite: every criterion at its stated size and tolerance.

Each test prints one ``criterion N [PASS|FAIL] ...`` line (also under output
capture) and fails if the criterion's hard checks fail.
"""

import json

import pytest

from bbmcom.stats import _jsonable
from bbmcom.validation import CRITERIA, run_criterion

SEED = 1


@pytest.mark.slow
@pytest.mark.parametrize("cid", sorted(CRITERIA))
def test_criterion(cid, capsys):
    res = run_criterion(cid, seed=SEED)
    with capsys.disabled():
        print("\n" + res.line())
    detail = json.dumps(_jsonable(res.details), sort_keys=True)[:2000]
    failed = [r.name for r in res.reports if not r.passed]
    assert res.passed, f"{res.line()}\nfailed reports: {failed}\ndetails: {detail}"
