import os

# Single-threaded BLAS: the workloads are tiny and threads only add jitter.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from vaebo import vae as vaelib
from vaebo.design_space import builtin_config, load_space
from vaebo.simulators import ReactorSimulator


@pytest.fixture(scope="session")
def reactor_space():
    return load_space(builtin_config("reactor"))


@pytest.fixture(scope="session")
def small_space():
    return load_space({"variables": [
        {"name": "a", "kind": "categorical", "levels": ["x", "y", "z"]},
        {"name": "b", "kind": "discrete-integer", "lower": 1, "upper": 4},
        {"name": "c", "kind": "discretized-continuous", "lower": 0.0, "upper": 1.0, "num_levels": 5},
    ]})


@pytest.fixture(scope="session")
def reactor_vae(reactor_space):
    """A briefly trained reactor VAE, shared by tests that only need *a* model."""
    model, report = vaelib.train(reactor_space, reactor_space.enumerate_indices(),
                                 latent_dim=4, epochs=150, seed=3)
    return model


@pytest.fixture(scope="session")
def reactor_grid(reactor_space):
    """Exhaustive objective table: (index array, single objective, bi-objective)."""
    idx = reactor_space.enumerate_indices()
    single, bi = ReactorSimulator(), ReactorSimulator(bi_objective=True)
    pts = reactor_space.points(idx)
    f = np.array([single(reactor_space.assignment(p))[0] for p in pts])
    F = np.array([bi(reactor_space.assignment(p)) for p in pts])
    return idx, f, F


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the lines are replayed in the terminal summary."""
    def record(criterion: int, ok: bool, detail: str):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
