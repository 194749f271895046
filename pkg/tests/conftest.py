import os
import random
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from qstrom.crypto import DEMO, keygen  # noqa: E402
from qstrom.market import Order, OrderBook, Side  # noqa: E402


@pytest.fixture
def group():
    return DEMO


@pytest.fixture
def keys(group):
    return [keygen(group, i) for i in range(16)]


def random_book(rng: random.Random, max_orders=12, max_energy=20, price_range=(0, 30), slot=0):
    book = OrderBook(slot)
    for k in range(rng.randint(0, max_orders)):
        book.submit(Order(k.to_bytes(32, "big"), rng.choice([Side.BUY, Side.SELL]),
                          rng.randint(*price_range), rng.randint(1, max_energy), slot))
    book.close()
    return book


ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion; the summary prints a line for each."""
    def record(name: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[name] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
