from __future__ import annotations

import numpy as np
import pytest
import torch

from periogan import corpus
from periogan.toy import TOY_LABELING, write_toy_corpus


@pytest.fixture(autouse=True)
def _single_thread():
    # keep float reductions on the reference path across tests
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(n)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    return write_toy_corpus(tmp_path_factory.mktemp("toy") / "eyes", n=48, size=(32, 32), seed=0)


@pytest.fixture(scope="session")
def toy_manifest(toy_dir):
    return corpus.ingest_directory(toy_dir, TOY_LABELING)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    acc = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if acc is None:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in acc.TITLES.items():
        if n in acc.RESULTS:
            ok, _, detail = acc.RESULTS[n]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d} ({title}): {detail}")
        else:
            terminalreporter.write_line(f"FAIL criterion {n:2d} ({title}): did not run to completion")
