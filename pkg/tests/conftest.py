import numpy as np
import pytest

from mllm_redux.attention import AttentionParams, BlockParams


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


def random_block(rng, d=8, heads=2, d_ff=12, scale=0.3, ln_noise=True):
    attn = AttentionParams(*(rng.normal(0, scale, (d, d)) for _ in range(4)), heads)
    if ln_noise:
        ln = [1 + 0.1 * rng.normal(size=d), 0.1 * rng.normal(size=d), 1 + 0.1 * rng.normal(size=d), 0.1 * rng.normal(size=d)]
    else:
        ln = [np.ones(d), np.zeros(d), np.ones(d), np.zeros(d)]
    return BlockParams(attn, rng.normal(0, scale, (d, d_ff)), rng.normal(0, scale, (d_ff, d)), *ln)


def zero_block(d=8, heads=2, d_ff=12):
    z = np.zeros((d, d))
    return BlockParams(AttentionParams(z, z, z, z, heads), np.zeros((d, d_ff)), np.zeros((d_ff, d)),
                       np.ones(d), np.zeros(d), np.ones(d), np.zeros(d))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
