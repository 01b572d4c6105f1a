import numpy as np
import pytest

from ddcoupling.rng import as_generator, derive, make_rng, map_replicas, open_uniforms, seed_sequence


def test_streams_reproducible_and_distinct():
    a = make_rng(5, "x", 1).random(4)
    np.testing.assert_array_equal(a, make_rng(5, "x", 1).random(4))
    assert not np.array_equal(a, make_rng(5, "x", 2).random(4))
    assert not np.array_equal(a, make_rng(5, "y", 1).random(4))
    assert not np.array_equal(a, make_rng(6, "x", 1).random(4))


def test_derive_nests():
    child = derive(3, "outer", 2)
    g1 = make_rng(child, "inner", 0).random(3)
    g2 = make_rng(derive(3, "outer", 2), "inner", 0).random(3)
    np.testing.assert_array_equal(g1, g2)
    assert not np.array_equal(g1, make_rng(derive(3, "outer", 3), "inner", 0).random(3))


def test_seed_normalization():
    g = as_generator(9)
    assert seed_sequence(g).entropy == 9
    assert as_generator(g) is g
    with pytest.raises(ValueError):
        seed_sequence(-1)
    with pytest.raises(TypeError):
        seed_sequence("seed")


def test_open_uniforms():
    u = open_uniforms(np.random.default_rng(0), 10000)
    assert u.min() > 0 and u.max() < 1


def test_map_replicas_order_independent_of_threads():
    fn = lambda i: make_rng(1, "r", i).normal()
    assert map_replicas(fn, 20, threads=1) == map_replicas(fn, 20, threads=4)
