"""Shared fixtures, dataset builders, and the acceptance-criteria reporter."""

from __future__ import annotations

import numpy as np
import pytest

from clusterstable import Cluster, ClusteredDataset

_ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_criterion(index: int, name: str, ok: bool, detail: str = "") -> bool:
    """Register one acceptance-criterion outcome for the terminal summary."""
    _ACCEPTANCE_RESULTS.append((index, name, bool(ok), detail))
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {index} [{status}] {name}" + (f" :: {detail}" if detail else ""))
    return bool(ok)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for index, name, ok, detail in sorted(_ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        line = f"ACCEPTANCE {index} [{status}] {name}"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)


def make_dataset(rng: np.random.Generator, sizes, dim: int = 2,
                 theta=None, noise: float = 1.0) -> ClusteredDataset:
    """Random clustered design: intercept plus dim-1 standard-normal regressors."""
    if theta is None:
        theta = np.arange(1, dim + 1, dtype=float)
    clusters = []
    for g, n in enumerate(sizes):
        X = np.column_stack([np.ones(n)] + [rng.normal(size=n) for _ in range(dim - 1)])
        Y = X @ np.asarray(theta, dtype=float) + noise * rng.normal(size=n)
        clusters.append(Cluster(id=f"c{g + 1}", X=X, Y=Y))
    return ClusteredDataset.from_clusters(clusters)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_ds(rng):
    return make_dataset(rng, sizes=[3, 4, 2, 5, 3, 4])
