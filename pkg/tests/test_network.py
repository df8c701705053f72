import numpy as np
import pytest

from greit_hrnet import instrument
from greit_hrnet.accounting import count_params
from greit_hrnet.blocks import GAPWeightingParams, GSWParams
from greit_hrnet.network import (ArchConfig, arch_config, build_network, forward,
                                 forward_branches, named_parameters)
from greit_hrnet.tensor import ShapeError


@pytest.fixture(scope="module")
def greit18_random():
    return build_network(arch_config("greit18"), init="random", seed=3)


def test_output_shapes(greit18_random, rng):
    x = rng.standard_normal((1, 3, 256, 192)).astype(np.float32)
    assert forward(greit18_random, x).shape == (1, 17, 64, 48)
    x2 = rng.standard_normal((2, 3, 256, 192)).astype(np.float32)
    out2 = forward(greit18_random, x2)
    assert out2.shape == (2, 17, 64, 48) and out2.dtype == np.float32


def test_second_input_size():
    net = build_network(arch_config("greit18"))
    assert forward(net, np.zeros((1, 3, 384, 288), np.float32)).shape == (1, 17, 96, 72)


def test_forward_is_deterministic(greit18_random, rng):
    x = rng.standard_normal((1, 3, 64, 96)).astype(np.float32)
    a, b = forward(greit18_random, x), forward(greit18_random, x)
    assert a.tobytes() == b.tobytes()


def test_batch_entries_are_independent(greit18_random, rng):
    x = rng.standard_normal((2, 3, 64, 64)).astype(np.float32)
    both = forward(greit18_random, x)
    one = forward(greit18_random, x[1:])
    np.testing.assert_allclose(both[1:], one, rtol=1e-5, atol=1e-6)


def test_input_validation(greit18_random):
    with pytest.raises(ShapeError):
        forward(greit18_random, np.zeros((1, 3, 100, 96), np.float32))
    with pytest.raises(ShapeError):
        forward(greit18_random, np.zeros((1, 1, 64, 64), np.float32))


def test_stage_structure():
    g18 = build_network(arch_config("greit18"))
    assert [len(s.modules) for s in g18.stages] == [2, 4, 2]
    assert all(len(m.blocks) == 2 for s in g18.stages for m in s.modules)
    g30 = build_network(arch_config("greit30"))
    assert [len(s.modules) for s in g30.stages] == [3, 8, 3]
    assert [len(s.modules[0].blocks[0]) for s in g18.stages] == [1, 2, 2]
    assert [[b.branches for b in s.modules[0].blocks[0]] for s in g18.stages] == [
        [(0, 1)], [(0, 1), (2,)], [(0, 1), (2, 3)]]
    assert len(g18.stages[0].modules[0].blocks[0][0].weighting) == 2


def test_lite18_substitutions():
    net = build_network(arch_config("lite18"))
    assert net.stem.lka is None
    for stage in net.stages:
        layer = stage.modules[0].blocks[0]
        assert len(layer) == 1 and layer[0].branches == tuple(range(len(stage.transition.adapt) + 1))
        assert all(isinstance(s, GAPWeightingParams) for s in layer[0].spatial)
    g18 = build_network(arch_config("greit18"))
    assert g18.stem.lka is not None
    assert all(isinstance(s, GSWParams) for s in g18.stages[2].modules[0].blocks[0][1].spatial)


def test_greit18_and_greit30_share_boundary_shapes(rng):
    x = rng.standard_normal((1, 3, 64, 64)).astype(np.float32)
    a = forward_branches(build_network(arch_config("greit18")), x)
    b = forward_branches(build_network(arch_config("greit30")), x)
    assert [t.shape for t in a] == [t.shape for t in b]


def test_named_parameters():
    net = build_network(arch_config("greit18"))
    items = named_parameters(net)
    names = [k for k, _ in items]
    assert names == sorted(names) and len(set(names)) == len(names)
    assert all(not np.any(v) for k, v in items if not k.endswith(".eps"))
    again = [k for k, _ in named_parameters(build_network(arch_config("greit18")))]
    assert names == again
    learned = sum(np.asarray(v).size for _, v in named_parameters(net, learned_only=True))
    assert learned == count_params(net).total_params
    assert "head.weight" in names and "stem.lka.dwd.weight" in names


def test_random_init_is_seeded():
    a = named_parameters(build_network(arch_config("lite18"), init="random", seed=1))
    b = named_parameters(build_network(arch_config("lite18"), init="random", seed=1))
    c = named_parameters(build_network(arch_config("lite18"), init="random", seed=2))
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a, b))
    assert any(not np.array_equal(x, y) for (_, x), (_, y) in zip(a, c))
    with pytest.raises(ValueError):
        build_network(arch_config("lite18"), init="xavier")


def test_zero_network_is_finite_with_half_weights():
    net = build_network(arch_config("greit18"))
    x = np.random.default_rng(0).standard_normal((1, 3, 64, 64)).astype(np.float32)
    with instrument.record_weights() as seen:
        out = forward(net, x)
    assert np.all(np.isfinite(out))
    assert {k for k, _ in seen} == {"ccw", "gsw"}
    assert all(np.all(w == 0.5) for _, w in seen)


def test_config_validation():
    with pytest.raises(ValueError):
        arch_config("greit50")
    with pytest.raises(ValueError):
        ArchConfig(stage_repetitions=(1, 2, 4))
    with pytest.raises(ValueError):
        ArchConfig(widths=(40, 80, 120, 320))
    with pytest.raises(ValueError):
        ArchConfig(weighting="attention")
    assert arch_config("greit18").stage_repetitions == (1, 2, 4, 2)
    assert arch_config("greit30").stage_repetitions == (1, 3, 8, 3)


@pytest.mark.parametrize("variant", ["greit18", "greit30", "lite18", "lite30"])
def test_every_variant_runs(variant):
    net = build_network(arch_config(variant), init="random", seed=0)
    out = forward(net, np.random.default_rng(1).standard_normal((1, 3, 64, 32)).astype(np.float32))
    assert out.shape == (1, 17, 16, 8) and np.all(np.isfinite(out))
