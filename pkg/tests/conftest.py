import datetime as dt

import numpy as np
import pytest

from terrepi.core import Region, Registry, Typology


def make_registry(rows):
    """``rows``: iterable of (region_id, country, typology[, population, area])."""
    regions = []
    for row in rows:
        rid, country, typ = row[:3]
        pop = row[3] if len(row) > 3 else 100_000.0
        area = row[4] if len(row) > 4 else 100.0
        regions.append(Region(rid, country, Typology.parse(typ), float(pop), float(area)))
    return Registry(regions)


@pytest.fixture
def small_registry():
    return make_registry(
        [
            ("IT001", "IT", "urban", 1_000_000, 500),
            ("IT002", "IT", "intermediate", 300_000, 1000),
            ("IT003", "IT", "rural", 80_000, 2000),
            ("DE001", "DE", "urban", 900_000, 300),
            ("DE002", "DE", "rural", 60_000, 1500),
        ]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def day0():
    return dt.date(2020, 3, 1)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def check(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}"
        if detail:
            line += f"  [{detail}]"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
