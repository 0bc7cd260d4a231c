import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tgpnet import tensor as T  # noqa: E402
from tgpnet.config import toy_train_config  # noqa: E402
from tgpnet.degradations import default_spec, make_pair  # noqa: E402
from tgpnet.model import ModelConfig, build_model  # noqa: E402
from tgpnet.training import train  # noqa: E402


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


def toy_pool(tasks, per_task=16, size=32, offset=0):
    return [make_pair(offset + 1000 * i + s, default_spec(t, seed=offset + s), size, size)
            for i, t in enumerate(tasks) for s in range(per_task)]


@dataclass
class ToyRun:
    model: object
    pool: list
    report: object
    seconds: float


def run_toy(tasks, **model_overrides) -> ToyRun:
    pool = toy_pool(tasks)
    model = build_model(ModelConfig.toy(tasks=list(tasks), **model_overrides))
    t0 = time.perf_counter()
    rep = train(model, pool, toy_train_config())
    return ToyRun(model, pool, rep, time.perf_counter() - t0)


# Trained once per session and shared by every test that needs them.
@pytest.fixture(scope="session")
def two_task_run():
    return run_toy(("denoise", "deblur"))


@pytest.fixture(scope="session")
def relu_run():
    return run_toy(("denoise", "deblur"), relu_modulation=True)


@pytest.fixture(scope="session")
def three_task_run():
    return run_toy(("denoise", "deblur", "decloud"))


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"ACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
