import numpy as np
import pytest

from pedcc.numeric import Rng

ACCEPTANCE_LINES = []

# hand-built IDX pair: two 2x2 images (pixel bytes row-major) and their labels
IMAGE_BYTES = bytes([0, 0, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                     0, 255, 51, 102,
                     204, 1, 128, 254])
LABEL_BYTES = bytes([0, 0, 0x08, 0x01, 0, 0, 0, 2, 1, 0])
IDX_EXPECTED = np.array([[0, 255, 51, 102], [204, 1, 128, 254]]) / 255.0


@pytest.fixture
def rng():
    return Rng(20240501)


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(criterion, ok, detail=""):
        line = f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_instance(rng, n_max=8, c_max=10, d_max=16):
    """Random loss instance: batch features, raw weights, unit centroids and labels."""
    n = 1 + int(rng.uniform(1)[0] * n_max)
    c = 2 + int(rng.uniform(1)[0] * (c_max - 1))
    d = 2 + int(rng.uniform(1)[0] * (d_max - 1))
    x = rng.normal(n * d).reshape(n, d)
    w = rng.normal(c * d).reshape(c, d)
    p = w / np.linalg.norm(w, axis=1, keepdims=True)
    y = (rng.uniform(n) * c).astype(np.int64)
    return x, w, p, y
