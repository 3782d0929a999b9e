import csv

import numpy as np
import pytest

from ddsignal import PanelDataset


@pytest.fixture
def write_csv(tmp_path):
    def _write(rows, header, name="data.csv"):
        path = tmp_path / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        return path

    return _write


def constant_cells(c0, c1, t0, t1, per_cell=1):
    """Noiseless dataset with constant outcome inside each (treat, post) cell."""
    y = np.repeat([c0, c1, t0, t1], per_cell).astype(float)
    treat = np.repeat([0, 0, 1, 1], per_cell)
    post = np.repeat([0, 1, 0, 1], per_cell)
    return PanelDataset(outcome=y, treat=treat, post=post)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    """Record a one-line verdict per acceptance criterion; printed in the terminal summary."""

    def record(number, title, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}" + (f" -- {detail}" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
