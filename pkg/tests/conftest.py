import time
from pathlib import Path

import numpy as np
import pytest

from swlqr.scenario import (
    build_plant,
    parse_scenario,
    read_trace,
    run_scenario,
)
from swlqr.switched_plant import LinearMode


F18_A1 = [[0.977, 0.097], [0.002, 0.981]]
F18_B1 = [[-0.013, -0.004], [-0.171, -0.051]]
F18_A2 = [[0.852, 0.088], [-0.753, 0.878]]
F18_B2 = [[-0.106, -0.021], [-1.8143, -0.358]]

F404_A = [[0.867, 0.0, 0.202], [0.015, 0.961, -0.032], [0.026, 0.0, 0.803]]
F404_B = [[0.011, 0.0], [0.014, -0.039], [0.009, 0.0]]
F404_D = [[0.075, 0.0, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, -0.75]]


@pytest.fixture(scope="session")
def f18_modes():
    return [
        LinearMode(F18_A1, F18_B1, "mach-0.3-26kft"),
        LinearMode(F18_A2, F18_B2, "mach-0.7-14kft"),
    ]


@pytest.fixture(scope="session")
def f404_mode():
    return LinearMode(F404_A, F404_B, "f404-nominal")


def random_controllable_system(rng, n=None, m=None, rho_range=(0.3, 1.1)):
    """Draw a controllable (A, B) with bounded spectral radius."""
    n = n if n is not None else int(rng.integers(1, 5))
    m = m if m is not None else int(rng.integers(1, 4))
    for _ in range(100):
        A = rng.normal(size=(n, n))
        radius = max(abs(np.linalg.eigvals(A)))
        if radius > 0:
            A *= rng.uniform(*rho_range) / radius
        B = rng.normal(size=(n, m))
        mode = LinearMode(A, B)
        if mode.is_controllable():
            return mode
    raise RuntimeError("failed to draw a controllable system")


def _run_builtin(name, tmp_path_factory):
    config = parse_scenario(name)
    plant = build_plant(config)
    windows = {}

    def hook(k, window):
        windows[k] = window

    out_dir = tmp_path_factory.mktemp(f"{name}-run")
    start = time.monotonic()
    report = run_scenario(config, output_dir=out_dir, on_step=hook)
    wall_time = time.monotonic() - start
    assert report.error is None, f"builtin '{name}' aborted: {report.error}"
    rows = read_trace(Path(report.trace_path))
    return {
        "config": config,
        "plant": plant,
        "report": report,
        "rows": rows,
        "windows": windows,
        "seed_inputs": windows[0].inputs,
        "wall_time": wall_time,
    }


@pytest.fixture(scope="session")
def f18_run(tmp_path_factory):
    return _run_builtin("f18", tmp_path_factory)


@pytest.fixture(scope="session")
def f404_run(tmp_path_factory):
    return _run_builtin("f404", tmp_path_factory)
