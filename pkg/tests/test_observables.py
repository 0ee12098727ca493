import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steindyn import observables as O
from steindyn import systems
from steindyn.errors import ContractError
from steindyn.rng import Stream


def grid1(n=10_000):
    return (np.arange(n) + 0.5)[:, None] / n


def grid2(n=100):
    g = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.stack([X, Y], axis=-1).reshape(-1, 2)


def test_cos_metadata(cos1):
    assert cos1.dim == 1 and cos1.sup_norm == 1.0
    assert cos1.lipschitz == pytest.approx(2 * math.pi)
    assert cos1.mean_zero


def test_vector_cos_metadata(cos2):
    assert cos2.dim == 2 and cos2.phase_dim == 2 and cos2.sup_norm == 1.0


def test_two_term_bounds():
    f = O.trig_observable([{"freq": [1], "amp": 1.0},
                           {"freq": [2], "amp": 0.5, "kind": "sin"}])
    assert f.sup_norm == pytest.approx(1.5)
    assert f.lipschitz == pytest.approx(4 * math.pi)


def test_zero_frequency_rejected():
    with pytest.raises(ContractError):
        O.trig_observable([{"freq": [0], "amp": 1.0}])
    with pytest.raises(ContractError):
        O.trig_observable([{"freq": [0, 0], "amp": 1.0}])
    with pytest.raises(ContractError):
        O.from_spec({"kind": "spline"})


trig_terms = st.lists(st.fixed_dictionaries({
    "component": st.integers(0, 1),
    "freq": st.lists(st.integers(-3, 3), min_size=2, max_size=2).filter(any),
    "amp": st.floats(-2, 2, allow_nan=False),
    "kind": st.sampled_from(["cos", "sin"])}), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(trig_terms)
def test_trig_metadata_bounds(terms):
    f = O.trig_observable(terms, dim=2)
    xy = grid2(100)
    vals = f(xy)
    # componentwise convention: stored sup norm dominates every component
    assert np.max(np.abs(vals)) <= f.sup_norm + 1e-12
    per = [sum(abs(t["amp"]) for t in terms if t["component"] == c) for c in (0, 1)]
    assert f.sup_norm == pytest.approx(max(per))
    rng = np.random.default_rng(0)
    a, b = rng.random((2, 2000, 2))
    lip = np.abs(f(a) - f(b)).max(axis=1) / np.linalg.norm(a - b, axis=1)
    assert np.all(lip <= f.lipschitz + 1e-9)
    assert np.all(np.abs(O.mean(f)) < 1e-12)


def test_sup_norm_grid_cos(cos1):
    assert np.max(np.abs(cos1(grid1()))) <= cos1.sup_norm + 1e-12
    assert np.max(np.abs(cos1(grid1()))) >= cos1.sup_norm - 1e-6


def test_mean_zero_monte_carlo(cos1, cos2):
    for spec, f in ((systems.doubling(), cos1), (systems.toral(), cos2)):
        W = systems.birkhoff_pool(spec, f, [1], 10 ** 6, Stream(9), workers=4)[1]
        m = W.mean(axis=0)
        se = W.std(axis=0, ddof=1) / math.sqrt(W.shape[0])
        assert np.all(np.abs(m) <= 4 * se)


def test_center_shifts():
    assert np.allclose(O.mean(O.trig_observable([{"freq": [3], "amp": 1.0}])), 0.0, atol=1e-15)
    x = O.polynomial_observable([0.0, 1.0])
    assert float(O.mean(x)[0]) == pytest.approx(0.5, abs=1e-14)
    x2 = O.polynomial_observable([0.0, 0.0, 1.0])
    assert float(O.mean(x2)[0]) == pytest.approx(1 / 3, abs=1e-14)
    cx = O.center(x2)
    assert cx.mean_zero
    assert float(cx(np.array([0.5]))[0]) == pytest.approx(0.25 - 1 / 3)
    assert not x2.mean_zero


def test_center_idempotent():
    f = O.polynomial_observable([0.3, -1.0, 2.0, 0.5])
    c1 = O.center(f)
    c2 = O.center(c1)
    g = grid1(1000)
    assert np.max(np.abs(c1(g) - c2(g))) < 1e-12


def test_center_custom_callable():
    f = O.custom_observable(lambda x: np.exp(x), 1, 1, math.e, math.e)
    c = O.center(f)
    assert float(O.mean(c)[0]) == pytest.approx(0.0, abs=1e-12)
    assert float(c(np.array([0.0]))[0]) == pytest.approx(1 - (math.e - 1), abs=1e-12)


def test_zero_observable():
    z = O.zero_observable(dim=3, phase_dim=2)
    assert z.is_zero and z.dim == 3
    assert not np.any(z(grid2(10)))


def test_sawtooth_pair_correlations():
    f = O.sawtooth()
    assert f.lipschitz == 1.0 and f.sup_norm == 0.5
    # oracle: 2^k-periodic quadrature of (x - 1/2)(2^k x mod 1 - 1/2)
    n = 1 << 16
    x = (np.arange(n) + 0.5) / n
    for k in range(5):
        y = (x * 2 ** k) % 1.0
        est = np.mean((x - 0.5) * (y - 0.5))
        assert est == pytest.approx(f.analytic_moments["pair"](k), abs=1e-8)


def test_from_spec_roundtrip(cos2):
    g = O.from_spec(cos2.spec)
    xy = grid2(20)
    assert np.array_equal(g(xy), cos2(xy))
