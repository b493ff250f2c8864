import time

import numpy as np
import pytest

from twinpurify.synth import SynthConfig, generate_cohort

# filled by tests/test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE: dict = {}

BENCHMARK_SEEDS = (10, 11, 12, 13, 14)


@pytest.fixture(scope="session")
def small_cohort():
    cfg = SynthConfig(n_genes=240, n_tumor=120, n_normal=40, seed=3, hazard_weights=(0.8, 0.0, -0.8))
    return generate_cohort(cfg)


@pytest.fixture(scope="session")
def dilution_runs():
    """Default-cohort benchmark over five seeds; shared by every test that needs it."""
    from twinpurify.benchmark import dilution_benchmark

    t0 = time.perf_counter()
    runs = [dilution_benchmark(seed) for seed in BENCHMARK_SEEDS]
    return runs, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
