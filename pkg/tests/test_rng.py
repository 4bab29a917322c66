"""Random stream tests."""

# ruff: noqa: D103

from inamp.rng import Seeds, current, set_seed


def test_streams_are_reproducible():  # type: ignore
    a = Seeds(3).stream("shuffle", 1).integers(0, 1000, size=5)
    b = Seeds(3).stream("shuffle", 1).integers(0, 1000, size=5)
    assert a.tolist() == b.tolist()


def test_streams_are_independent():  # type: ignore
    seeds = Seeds(3)
    draws = {
        key: seeds.stream(*key).integers(0, 2**32, size=4).tolist()
        for key in (("shuffle", 1), ("shuffle", 2), ("augment", 1), ("init",))
    }
    values = [tuple(v) for v in draws.values()]
    assert len(set(values)) == len(values)
    assert Seeds(4).stream("init").integers(0, 2**32) != Seeds(3).stream(
        "init",
    ).integers(0, 2**32)


def test_global_seed():  # type: ignore
    seeds = set_seed(11)
    assert current() is seeds
    assert current().seed == 11
    assert repr(seeds) == "<Seeds: 11>"
