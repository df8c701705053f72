import time

import numpy as np
import pytest

from greit_hrnet.autodiff import finite_diff_check
from greit_hrnet.blocks import gsw_forward, make_gsw
from greit_hrnet.gradsuite import BLOCKS, CASES, run_block, run_suite
from greit_hrnet.params import init_random, leaves, unflatten


@pytest.mark.parametrize("block", BLOCKS)
def test_block_gradients(block):
    results = run_block(block, seed=1)
    assert len(results) >= 3
    assert len({r.shape for r in results}) == len(results)
    for r in results:
        assert r.passed, r


def test_gsw_gradient_at_reference_shape():
    p = init_random(make_gsw(4, 2, 4, np.float64), 0)
    x = np.random.default_rng(0).standard_normal((1, 4, 4, 4))

    def f(x, *ws):
        return gsw_forward(x, unflatten(p, ws))

    rep = finite_diff_check(f, [x] + leaves(p))
    assert rep.passed and rep.max_rel_err < 1e-4


def test_full_suite_under_a_minute():
    t0 = time.perf_counter()
    results = run_suite(seed=2)
    elapsed = time.perf_counter() - t0
    assert all(r.passed for r in results)
    assert len(results) == 3 * len(CASES)
    assert elapsed < 60


def test_unknown_block():
    with pytest.raises(ValueError):
        run_block("attention")
