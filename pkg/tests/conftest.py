from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from dshgt.hetgraph import Cpg  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TWO_FUNCTIONS = """\
// read one value from the input
int readData(int x) {
    int y = x + 1;
    return y;
}

int writeData(int x) {
    int y = readData(x);
    if (y > 10) {
        y = y - 10;
    } else {
        y = y + 1;
    }
    print_int(y);
    return y;
}
"""


def build_two_method_graph() -> Cpg:
    """Two methods hanging off one file node; method 3 reaches 6,7,8,11,13,14,15."""
    g = Cpg()
    g.new_node(1, "FILE", "main.c", name="main.c")
    g.new_node(2, "METHOD", "void readData()", name="readData")
    g.new_node(3, "METHOD", "void writeData()", name="writeData")
    for nid, t, code in [
        (4, "METHOD_PARAMETER_IN", "int a"), (5, "BLOCK", ""), (9, "CALL", "a = 1"),
        (10, "IDENTIFIER", "a"), (12, "LITERAL", "1"),
        (6, "METHOD_PARAMETER_IN", "int x"), (7, "BLOCK", ""), (8, "CALL", "y = x"),
        (11, "CONTROL_STRUCTURE", "if (y > 0)"), (13, "IDENTIFIER", "y"),
        (14, "CALL", "y > 0"), (15, "METHOD_RETURN", "void"),
    ]:
        g.new_node(nid, t, code)
    for s, t, k in [(1, 2, "AST"), (2, 4, "AST"), (2, 5, "AST"), (5, 9, "AST"), (9, 10, "AST"),
                    (9, 12, "AST")]:
        g.connect(s, t, k)
    for s, t, k in [(1, 3, "AST"), (3, 6, "AST"), (3, 7, "AST"), (7, 8, "AST"), (8, 11, "CFG"),
                    (11, 15, "CFG"), (11, 14, "AST"), (11, 13, "AST"), (3, 15, "AST")]:
        g.connect(s, t, k)
    return g


@pytest.fixture
def two_method_graph() -> Cpg:
    return build_two_method_graph()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
