import numpy as np
import pytest

from greit_hrnet.blocks import make_lks, make_se
from greit_hrnet.params import (init_random, is_learned, leaves, named_tensors, set_tensor,
                                tree_map, unflatten)


def test_names_and_buffers():
    p = make_lks(3, 8, 8, 2, (3, 3, 2))
    names = [k for k, _ in named_tensors(p)]
    assert "stem_conv.conv.weight" in names and "stem_conv.bn.eps" in names
    assert not is_learned("a.bn.running_var") and not is_learned("a.bn.eps")
    assert is_learned("a.bn.gamma")
    assert len(leaves(p)) == len(names) - sum(n.endswith(".eps") for n in names)


def test_tree_map_and_unflatten():
    p = make_se(8, 2)
    doubled = tree_map(lambda a: a + 2, p)
    assert np.all(doubled.reduce.weight == 2) and np.all(p.reduce.weight == 0)
    new = [np.full_like(a, i) for i, a in enumerate(leaves(p))]
    q = unflatten(p, new)
    assert [float(a.flat[0]) for a in leaves(q)] == list(range(len(new)))
    with pytest.raises(ValueError):
        unflatten(p, new + [np.zeros(1)])


def test_set_tensor_and_init():
    p = make_se(4, 2)
    set_tensor(p, "reduce.bias", [1, 2])
    assert p.reduce.bias.tolist() == [1, 2] and p.reduce.bias.dtype == np.float32
    with pytest.raises(ValueError):
        set_tensor(p, "reduce.bias", [1, 2, 3])
    a, b = init_random(make_se(8, 2), 5), init_random(make_se(8, 2), 5)
    assert all(np.array_equal(x, y) for x, y in zip(leaves(a), leaves(b)))
    bound = 1 / np.sqrt(8)
    assert np.all(np.abs(a.reduce.weight) <= bound)
