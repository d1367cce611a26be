import numpy as np
import pytest
from scipy import ndimage

CRITERIA = {}


def record(criterion, ok, detail):
    CRITERIA[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: int(k.split()[0])):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def flood_fill_betti(values, t, nbhd):
    """Betti numbers of {z <= t} by connected-component labelling.

    beta1 counts complement components that do not touch the window edge.
    """
    conn = 1 if nbhd == "cross" else 2
    st = ndimage.generate_binary_structure(2, conn)
    inside = values <= t
    _, b0 = ndimage.label(inside, structure=st)
    lab, n = ndimage.label(~inside, structure=st)
    edge = set(np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))) - {0}
    return b0, n - len(edge)
