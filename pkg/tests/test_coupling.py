import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdmplil import errors
from pdmplil.coupling import (CouplingSetF, check_B_conditions, coupled_advance,
                              coupled_increment_gap, coupled_step, CoupledState, fit_drift,
                              simulate_coupled)
from pdmplil.gallery import load_gallery
from pdmplil.model import HybridState
from pdmplil.observables import make_observable
from pdmplil.sampler import SeedStream
from pdmplil.simulate import simulate_batch
from pdmplil.stats import ks_two_sample


@settings(max_examples=15)
@given(st.floats(0, 12), st.sampled_from([1, 2]), st.integers(0, 2**31))
def test_equal_states_stay_equal(y, i, seed):
    m = load_gallery("two-flow-switch").model
    x = HybridState([y], i)
    cp = simulate_coupled(m, x, x, 30, SeedStream(seed), n_paths=8)
    assert np.all(cp.dist == 0.0)
    assert np.all(cp.zeta[1:] == 1)


def test_relaxation_always_couples(relaxation):
    """One flow and a state-free theta law: every step is a coupled move,
    and the gap contracts by exactly w-scale times the flow factor."""
    m = relaxation.model
    cp = simulate_coupled(m, HybridState([8.0]), HybridState([0.5]), 10, SeedStream(1), 50)
    assert np.all(cp.zeta[1:] == 1)
    gap = cp.y1[..., 0] - cp.y2[..., 0]
    assert np.allclose(gap[1:], 0.5 * gap[:-1] * np.exp(-cp.dtau[1:]), rtol=1e-12, atol=1e-15)


def test_coupled_frequency_matches_overlap(two_flow):
    """P(zeta = 1) equals the expected overlap mass computed by quadrature."""
    m = two_flow.model
    n = 40_000
    y1, y2 = np.full((n, 1), 9.0), np.full((n, 1), 0.5)
    i1, i2 = np.full(n, 1), np.full(n, 2)
    *_, zeta = coupled_advance(m, y1, i1, y2, i2, SeedStream(3))
    rng = np.random.default_rng(4)
    k = 4000
    dt = rng.exponential(1.0, k)
    h = m.noise.sample(rng, k, 1)
    th = np.linspace(0, 1, 801)
    wt = np.full(len(th), 1.0 / (len(th) - 1))
    wt[[0, -1]] *= 0.5
    z1 = m.flow(dt, y1[:k], i1[:k])
    z2 = m.flow(dt, y2[:k], i2[:k])
    mass = np.zeros(k)
    for t, w in zip(th, wt):
        tt = np.full(k, t)
        d = np.minimum(m.density.pdf(z1, tt), m.density.pdf(z2, tt))
        u1, u2 = m.jump_map(tt, z1) + h, m.jump_map(tt, z2) + h
        s = np.minimum(m.switching(i1[:k], u1), m.switching(i2[:k], u2)).sum(axis=1)
        mass += w * d * s
    se = np.sqrt(zeta.mean() * (1 - zeta.mean()) / n) + mass.std() / np.sqrt(k)
    assert abs(zeta.mean() - mass.mean()) < 4 * se


@pytest.mark.parametrize("name", ["relaxation", "two-flow-switch"])
def test_marginals_match_plain_chain(name):
    m = load_gallery(name).model
    x1, x2 = HybridState([9.0], 1), HybridState([0.5], m.num_flows)
    cp = simulate_coupled(m, x1, x2, 3, SeedStream(5), n_paths=3000)
    for comp, x in ((cp.y1, x1), (cp.y2, x2)):
        ys, _ = simulate_batch(m, np.repeat(x.y[None], 3000, 0), np.full(3000, x.i), 3,
                               SeedStream(6), record=False)
        assert ks_two_sample(comp[3, :, 0], ys[:, 0])[1] > 0.001


def test_coupled_step_wrapper(two_flow):
    s = CoupledState(HybridState([3.0], 1), HybridState([3.0], 1))
    t = coupled_step(two_flow.model, s, SeedStream(0))
    assert t.x1 == t.x2 and t.zeta == 1 and t.t > 0


def test_coupling_set():
    with pytest.raises(errors.PreconditionError):
        CouplingSetF(1.2, 1.0)
    f = CouplingSetF(0.5, 1.0)
    assert f.radius == 8.0
    m = load_gallery("two-flow-switch").model
    y = np.array([[5.0], [5.0]])
    assert f.contains(m, y, [1, 1], y, [1, 2]).tolist() == [True, False]


def test_drift_fit_relaxation(relaxation):
    """E V(Y_1) = E Y_1 = y/4 + 0.45 on the relaxation model, so a = 1/4."""
    m = relaxation.model
    ys = np.linspace(0, 12, 13)[:, None]
    a, b, _ = fit_drift(m, ys, np.ones(13, int), 4000, SeedStream(0))
    assert a == pytest.approx(0.25, abs=0.01)
    assert b >= 0.45 - 0.01


def test_B_conditions_two_flow(two_flow):
    m = two_flow.model
    r = np.random.default_rng(0)
    n = 24
    pairs = (r.uniform(0, 4, (n, 1)), r.integers(1, 3, n), r.uniform(0, 4, (n, 1)),
             r.integers(1, 3, n))
    rep = check_B_conditions(m, pairs, 400, SeedStream(1), return_steps=200)
    res = rep.results
    assert res["B1"]["pass"] and res["B2"]["pass"] and res["B3"]["pass"] and res["B4"]["pass"]
    assert res["B5"]["pass"] and res["B5"]["gamma"] < 1
    assert res["B0"]["pass"]
    assert rep.passed


def test_B2_skips_zero_distance(relaxation):
    m = relaxation.model
    y = np.array([[1.0], [2.0]])
    rep = check_B_conditions(m, (y, np.ones(2, int), np.array([[1.0], [3.0]]), np.ones(2, int)),
                             50, SeedStream(2), return_steps=50)
    assert rep.results["B2"]["skipped"] == [{"probe": 0, "reason": "zero distance"}]
    assert rep.results["B2"]["beta"] < 1


def test_increment_gap_geometric(two_flow):
    m = two_flow.model
    g = make_observable("y", m)
    rep = coupled_increment_gap(m, HybridState([8.0], 1), HybridState([0.5], 2), g, 60, 400,
                                SeedStream(3))
    assert rep.fit["q"] < 1 and rep.tail_ratio < 0.05
    assert not rep.to_dict()["cap_exceeded"]
