import numpy as np
import pytest

from pdmplil import errors
from pdmplil.gallery import load_gallery
from pdmplil.sampler import (SeedStream, categorical, draw_interjump, draw_noise, draw_switch,
                             draw_theta)


def test_same_key_same_draws():
    a = SeedStream(7, 3).rng.random(5)
    b = SeedStream(7, 3).rng.random(5)
    assert np.array_equal(a, b)


def test_streams_differ():
    a = SeedStream(7, 3).rng.random(1000)
    b = SeedStream(7, 4).rng.random(1000)
    c = SeedStream(8, 3).rng.random(1000)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_spawn_is_deterministic():
    s = [c.rng.random() for c in SeedStream(1, 2).spawn(3)]
    t = [c.rng.random() for c in SeedStream(1, 2).spawn(3)]
    assert s == t and len(set(s)) == 3


def test_interjump_mean():
    x = draw_interjump(SeedStream(0), 2.0, size=200_000)
    assert x.mean() == pytest.approx(0.5, abs=4 * 0.5 / np.sqrt(len(x)))
    with pytest.raises(errors.PreconditionError):
        draw_interjump(SeedStream(0), 0.0)


def test_noise_strictly_inside_ball():
    m = load_gallery("relaxation").model
    h = draw_noise(SeedStream(0), m, 100_000)
    assert np.all(np.abs(h) < m.noise.radius)


def test_theta_in_space_and_density():
    m = load_gallery("two-flow-switch").model
    y = np.full((50_000, 1), 5.0)
    th = draw_theta(SeedStream(0), m, y)
    assert np.all((th >= 0) & (th <= 1))
    # compare the empirical mean against the density's own mean
    grid = np.linspace(0, 1, 20001)
    pdf = m.density.pdf(np.full((len(grid), 1), 5.0), grid)
    mean = np.trapezoid(grid * pdf, grid) / np.trapezoid(pdf, grid)
    assert th.mean() == pytest.approx(mean, abs=4 * th.std() / np.sqrt(len(th)))


def test_switch_frequencies():
    m = load_gallery("two-flow-switch").model
    y = np.full((100_000, 1), 3.0)
    i = np.ones(len(y), dtype=int)
    j = draw_switch(SeedStream(0), m, i, y)
    p = m.switching(i[:1], y[:1])[0]
    f = np.mean(j == 1)
    assert f == pytest.approx(p[0], abs=4 * np.sqrt(p[0] * (1 - p[0]) / len(j)))


def test_categorical_three_way(rng):
    w = np.tile([0.2, 0.3, 0.5], (200_000, 1))
    j = categorical(rng, w)
    freq = np.bincount(j, minlength=4)[1:] / len(j)
    assert np.allclose(freq, [0.2, 0.3, 0.5], atol=0.005)
