import sys

import numpy as np
import pytest

from repcite.model import FIELDS, ML_FEATURE_NAMES, ModelConfig, PaperRecord


def random_records(rng, n, T, variant="science", groups=FIELDS, max_count=30, full=False):
    """Small random dataset with prefix masks of random length."""
    out = []
    for i in range(n):
        n_obs = T if full else int(rng.integers(0, T + 1))
        observed = np.arange(T) < n_obs
        counts = rng.integers(0, max_count, T)
        if variant == "science":
            group = groups[int(rng.integers(len(groups)))]
        else:
            group = np.concatenate([rng.integers(0, 2, 5), rng.normal(size=7), rng.integers(0, 2, 6)]).astype(float)
        out.append(PaperRecord(f"p{i}", group, bool(rng.integers(2)), 2000, counts, observed))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_science():
    cfg = ModelConfig(T=4, K=3, groups=("Economics", "Medicine"))
    data = random_records(np.random.default_rng(1), 5, cfg.T, groups=cfg.groups)
    return cfg, data


@pytest.fixture
def small_ml():
    cfg = ModelConfig.ml(T=4, K=3)
    assert len(cfg.groups) == len(ML_FEATURE_NAMES)
    data = random_records(np.random.default_rng(2), 5, cfg.T, variant="ml")
    return cfg, data


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
