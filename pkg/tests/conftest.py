import math
import os

import numpy as np
import pytest

from clogsim import Bean, Circle, Ellipse, build_table, read_table, write_table

TABLE_SHAPES = {
    "circle": Circle(0.2),
    "ellipse30": Ellipse(0.01, 0.001, math.radians(30)),
    "ellipse45": Ellipse(0.01, 0.001, math.radians(45)),
    "ellipse135": Ellipse(0.01, 0.001, math.radians(135)),
    "ellipse135_small": Ellipse(0.005, 0.0005, math.radians(135)),
    "bean": Bean(0.001),
    "ellipse150": Ellipse(0.1, 0.01, math.radians(150)),
}
# the thin 0.1/0.01 ellipse needs a finer cell mesh to resolve its early offsets
TABLE_H = {"ellipse150": 0.01}

ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    """Store one acceptance outcome for the terminal summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)


@pytest.fixture(scope="session")
def table_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("tables")


@pytest.fixture(scope="session")
def tables(table_dir):
    """Production coefficient tables (M = 60, eps = 1e-3, h = 0.02 unless noted), built lazily."""
    cache = {}

    def get(name):
        if name not in cache:
            shape = TABLE_SHAPES[name]
            path = os.path.join(table_dir, f"{name}.csv")
            table = build_table(shape, h=TABLE_H.get(name, 0.02))
            write_table(table, path)
            cache[name] = (table, path)
        return cache[name][0]

    get.path = lambda name: (get(name), cache[name][1])[1]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
