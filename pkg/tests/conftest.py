import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphguard.transactions import TransactionTable  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def make_table(rows, numeric=("amount",), categorical=()):
    """Table from a list of dicts; missing fields get simple defaults."""
    filled = []
    for i, r in enumerate(rows):
        r = dict(r)
        r.setdefault("tx_id", i)
        r.setdefault("card_id", "c0")
        r.setdefault("merchant_id", "m0")
        r.setdefault("label", 0)
        for f in numeric:
            r.setdefault(f, 0.0)
        filled.append(r)
    return TransactionTable.from_frame(pd.DataFrame(filled), categorical, numeric)


def random_rows(rng, n, n_cards=8, n_merchants=5, span=10 * 86_400):
    return [
        {"tx_id": int(i), "time": int(rng.integers(0, span)), "card_id": f"c{rng.integers(n_cards)}",
         "merchant_id": f"m{rng.integers(n_merchants)}", "label": int(rng.random() < 0.1),
         "amount": float(rng.normal())}
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
