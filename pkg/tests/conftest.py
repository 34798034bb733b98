import time

import pytest

from toydata import ToyTask, train_to_memorization


@pytest.fixture(scope="session")
def toy_task() -> ToyTask:
    return ToyTask()


@pytest.fixture(scope="session")
def overfit_text(toy_task):
    """(model, stats, wall seconds) for the text-only overfit run."""
    start = time.monotonic()
    model, stats = train_to_memorization(toy_task, fusion="none", seed=11)
    return model, stats, time.monotonic() - start


@pytest.fixture(scope="session")
def overfit_imgw(toy_task):
    """(model, stats, wall seconds) for the pseudo-word fusion overfit run."""
    start = time.monotonic()
    model, stats = train_to_memorization(toy_task, fusion="img_w", seed=12)
    return model, stats, time.monotonic() - start
