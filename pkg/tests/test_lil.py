import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdmplil import errors
from pdmplil.lil import (CenteredObservable, center_observable, estimate_sigma_embedded,
                         estimate_sigma_tilde, estimate_sigma_time, increments, lil_checkpoints,
                         lil_diagnostics, lil_norm, martingale_series, moment_bound, s_continuous,
                         s_discrete, sigma_bar, trace_replicas, variance_growth)
from pdmplil.model import HybridState
from pdmplil.observables import make_observable
from pdmplil.operators import G_values
from pdmplil.sampler import SeedStream
from pdmplil.simulate import ContinuousPath, simulate_embedded

# Exact constants of the iid-jump model with g(y) = y (post-jump states are
# theta + h, theta ~ U[0,1], h ~ U(-0.1, 0.1), unit rate, unit relaxation):
#   <g, nu*> = 1/4,  sigma~^2 = E Z^2 = Var(Y)/12 = 1.01/36,
#   sigma(G gb)^2 = Var(Y)/4,  Var of the time integral per unit time = 0.049722...
VAR_Y = 1.0 / 12.0 + 0.01 / 3.0
SIGMA_TILDE_SQ = (VAR_Y + 0.25) / 12.0 - 0.0625 + 0.0625
SIGMA_G_SQ = VAR_Y / 4.0
SIGMA_TIME_SQ = (VAR_Y + 0.25) / 3.0 - 0.1875 + 0.125


@pytest.fixture(scope="module")
def iid_gbar(iid):
    return CenteredObservable.exact(make_observable("y", iid.model), 0.25)


def test_lil_norm_values():
    assert math.isnan(float(lil_norm(2.0)))
    n = 1e6
    assert float(lil_norm(n)) == pytest.approx(math.sqrt(2 * n * math.log(math.log(n))))


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=60))
def test_s_discrete(values):
    n = len(values)
    got = s_discrete(values)
    if n <= 2:
        assert got == 0.0
    else:
        assert got == pytest.approx(sum(values) / math.sqrt(2 * n * math.log(math.log(n))),
                                    abs=1e-12)


def test_s_discrete_rejects_long_n():
    with pytest.raises(errors.PreconditionError):
        s_discrete([1.0, 2.0], 3)


def test_three_term_split_is_exact(two_flow):
    """int_0^t gb = M_{N_t} + (1/lam) sum_{k<N_t} G gb(X_k) + remainder, to rounding."""
    m = two_flow.model
    g = make_observable("cos_y", m)
    path = simulate_embedded(m, HybridState([4.0], 1), 400, SeedStream(8))
    cp = ContinuousPath(m, path)
    mart, z = martingale_series(path, g, m)
    gv = G_values(m, g, path.y, path.i)
    for t in (3.0, 57.3, 201.9):
        n = int(cp.renewal_count(t))
        rem = cp.path_integral(g, path.tau[n], t)
        whole = cp.path_integral(g, 0.0, t)
        assert whole == pytest.approx(mart[n] + gv[:n].sum() / m.jump_rate + rem, abs=1e-9)


def test_trace_replicas_matches_path_integral(two_flow):
    m = two_flow.model
    g = make_observable("tanh_y", m)
    x0 = HybridState([2.0], 2)
    times = np.array([5.0, 17.0, 80.0])
    tr = trace_replicas(m, g, times, 1, SeedStream(4), x0=x0)
    cp = ContinuousPath(m, simulate_embedded(m, x0, 4096, SeedStream(4)))
    for k, t in enumerate(times):
        assert tr.integral[k, 0] == pytest.approx(cp.path_integral(g, 0.0, t), abs=1e-9)
        assert tr.count[k, 0] == cp.renewal_count(t)
        assert s_continuous(cp, g, t) == pytest.approx(
            tr.integral[k, 0] / float(lil_norm(t)), abs=1e-12)


def test_increments_have_zero_conditional_mean(two_flow):
    m = two_flow.model
    g = make_observable("y", m)
    n = 200_000
    y = np.full((n, 1), 7.0)
    i = np.full(n, 2)
    z = increments(m, g, y, i, SeedStream(0).rng.exponential(1.0, n))
    assert abs(z.mean()) < 4 * z.std() / math.sqrt(n)


def test_sigma_tilde_oracle(iid, iid_gbar):
    est = estimate_sigma_tilde(iid.model, iid_gbar, 200_000, SeedStream(1), burn_in=5)
    assert est.value ** 2 == pytest.approx(SIGMA_TILDE_SQ, abs=3 * 2 * est.value * est.se)
    assert est.extra["second_moment"] <= 0.95 * est.extra["second_moment_cap"]
    assert est.extra["moment_2r"] <= est.extra["moment_2r_bound"]


def test_sigma_embedded_oracle(iid, iid_gbar):
    est = estimate_sigma_embedded(iid.model, iid_gbar, 20_000, 40, SeedStream(2), burn_in=5,
                                  n_starts=20_000, k_cap=20)
    assert abs(est.value - math.sqrt(SIGMA_G_SQ)) < 3 * est.se
    assert est.extra["agree"]
    assert est.extra["series"]["K"] == 0


def test_sigma_time_oracle(iid, iid_gbar):
    est = estimate_sigma_time(iid.model, iid_gbar, 20_000, 40, SeedStream(3), burn_in=5)
    assert abs(est.value - math.sqrt(SIGMA_TIME_SQ)) < 3 * est.se


def test_sigma_bar_overstates_iid_variance():
    """With uncorrelated martingale and drift parts the sum of the two
    standard deviations doubles the variance."""
    sb2 = sigma_bar(math.sqrt(SIGMA_G_SQ), math.sqrt(SIGMA_TILDE_SQ), 1.0) ** 2
    assert SIGMA_TIME_SQ == pytest.approx(SIGMA_G_SQ + SIGMA_TILDE_SQ, rel=1e-12)
    assert sb2 / SIGMA_TIME_SQ == pytest.approx(1.9917, abs=1e-3)


def test_sigma_bar_formula_and_degenerate():
    assert sigma_bar(2.0, 0.5, 4.0) == pytest.approx(2.0 * (0.5 + 0.5))
    with pytest.raises(errors.DegenerateSigma):
        sigma_bar(0.0, 0.0, 1.0)
    with pytest.raises(errors.PreconditionError):
        sigma_bar(-1.0, 0.0, 1.0)


def test_moment_bound_value():
    assert moment_bound(1.0, 1.0, 1.0) == pytest.approx(28.0)
    assert moment_bound(2.0, 2.0, 1.0) == pytest.approx(4 * 8 * (6 / 8 + 1 / 8))


def test_zero_observable_gives_zero_sigmas(relaxation):
    z = make_observable("zero", relaxation.model)
    assert estimate_sigma_tilde(relaxation.model, z, 10, SeedStream(0)).value == 0.0
    assert estimate_sigma_embedded(relaxation.model, z, 10, 2, SeedStream(0)).value == 0.0


def test_variance_growth_iid(iid, iid_gbar):
    out = variance_growth(iid.model, iid_gbar, 256, 4000, SeedStream(5), burn_in=5)
    assert out["n"][-1] == 256
    assert abs(out["ratio"][-1] - SIGMA_TILDE_SQ) < 3 * out["ratio_se"][-1]
    assert out["n_bar"] == 1


def test_centering_exact_center(iid):
    c = center_observable(iid.model, make_observable("y", iid.model), SeedStream(6),
                          n_steps=2000, n_chains=16, burn_in=5)
    assert abs(c.center - 0.25) < 3.5 * c.center_se
    assert abs(c.G_center - 0.25) < 3.5 * c.G_center_se
    with pytest.raises(errors.PreconditionError):
        center_observable(iid.model, make_observable("const", iid.model), SeedStream(0))


def test_checkpoints():
    dyadic, times = lil_checkpoints(1000.0, dense=20)
    assert dyadic[-1] == 1000.0 and dyadic[0] > math.e and np.all(np.diff(dyadic) > 0)
    assert set(dyadic) <= set(times) and times.min() <= 100.0 + 1e-9


def test_lil_report_and_thread_invariance(relaxation):
    m = relaxation.model
    g = CenteredObservable.exact(make_observable("y", m), 0.3)

    def streams():
        return [SeedStream(9, 100 + k) for k in range(3)]

    a = lil_diagnostics(m, g, 500.0, 6, streams(), burn_in=10, dense=20, n_threads=1)
    b = lil_diagnostics(m, g, 500.0, 6, streams(), burn_in=10, dense=20, n_threads=3)
    assert a.to_json() == b.to_json()
    d = a.to_dict()
    assert d["remainder"]["bound_holds"]
    assert len(d["envelope"]["sup"]) == 6
    assert "replica,t,N,s,I1,I2,I3,prefactor" in a.traces_csv()
    tr = d["traces"]
    s = np.array(tr["s"])
    parts = (np.array(tr["I1"]) + np.array(tr["I2"]) + np.array(tr["I3"])) * np.array(tr["prefactor"])
    live = np.array(tr["N"]) > math.e
    assert live.sum() > 0.9 * live.size
    assert np.allclose(s[live], parts[live], atol=1e-12)


def test_lil_rejects_constant_and_short_horizon(relaxation):
    m = relaxation.model
    with pytest.raises(errors.PreconditionError):
        lil_diagnostics(m, make_observable("const", m), 100.0, 2, SeedStream(0))
    with pytest.raises(errors.PreconditionError):
        lil_diagnostics(m, make_observable("y", m), 2.0, 2, SeedStream(0))
