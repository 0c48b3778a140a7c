import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

DATA = Path(__file__).resolve().parent.parent / "src" / "regcheck" / "data"

ZONE_NUMBER = {"I": 1, "II": 2, "III": 3}


def tile_dt(slope, zone, situation, recovery=None, tile="tile1"):
    """A one-tile technical document in .trp form."""
    lines = [
        "@prefix dt: <http://regcheck.org/ns/dt#> .",
        "@prefix ex: <http://example.org/dt/sweep#> .",
        f"ex:{tile} rdf:type dt:PlatClayTile .",
        f'ex:{tile} dt:hasSlope "{slope}"^^integer .',
        f"ex:{tile} dt:hasArea ex:{tile}_area .",
        f"ex:{tile}_area rdf:type dt:Zone{ZONE_NUMBER[zone]} .",
        f"ex:{tile}_area dt:hasSituation ex:{tile}_situation .",
        f"ex:{tile}_situation rdf:type dt:{situation.capitalize()} .",
    ]
    if recovery is not None:
        lines.append(f'ex:{tile} dt:hasRecovery "{recovery}"^^integer .')
    return "\n".join(lines) + "\n"


@pytest.fixture
def data_dir():
    return DATA


# acceptance criteria report one line each at the end of the session
ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
