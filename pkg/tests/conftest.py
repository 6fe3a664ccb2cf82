import copy

import pytest

from kpp_lab.config import parse_config

ACCEPTANCE_LINES = []


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@pytest.fixture
def report():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


FISHER = {
    "domain": {"kind": "continuum", "dim": 1, "L": 20, "h": 0.1, "p": 1, "buffer": 2},
    "dispersal": {"kind": "random"},
    "reaction": {"r0": 1.0, "b": 1.0},
    "integrator": {"scheme": "euler"},
}

MEDIA = {
    "a": 1.0,
    "b": {"constant": 1.0, "terms": [{"amplitude": 0.3, "kind": "cos", "space_modes": [1]}]},
    "c": {"constant": 1.0, "terms": [{"amplitude": 0.5, "kind": "sin", "time_mode": 1}]},
}


def make_config(base=FISHER, **overrides):
    """Deep-copied config dict with block-level updates, e.g. domain={"L": 40}."""
    raw = copy.deepcopy(base)
    for block, upd in overrides.items():
        if isinstance(upd, dict) and isinstance(raw.get(block), dict):
            raw[block].update(upd)
        else:
            raw[block] = upd
    return raw


def medium(name, bump=0.0, **domain):
    rx = {"r0": MEDIA[name], "b": 1.0}
    if bump:
        rx["dr"] = {"shape": "bump", "amplitude": bump, "radius": 5.0}
    return parse_config(make_config(reaction=rx, domain=domain))
