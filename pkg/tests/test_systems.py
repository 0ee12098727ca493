import math
import os
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from steindyn import observables, systems
from steindyn.errors import ConfigError, ContractError, ResourceError
from steindyn.rng import Stream

from conftest import mean_se


def test_bitpoint_stream_reproducible():
    a = systems.sample_initial(systems.doubling(), Stream(7))
    b = systems.sample_initial(systems.doubling(), Stream(7))
    assert a.digits(300) == b.digits(300)
    c = systems.sample_initial(systems.doubling(), Stream(8))
    assert a.digits(300) != c.digits(300)


def test_torus_point_in_range(cat):
    for s in range(50):
        p = systems.sample_initial(cat, Stream(s))
        for _ in range(5):
            x, y = p.coords()
            assert 0 <= x < 1 and 0 <= y < 1
            p = systems.step(cat, p)


def test_split_streams_independent():
    M = 10_000
    root = Stream(3)
    a = np.array([systems.sample_initial(systems.doubling(), root.split("a", i)).digits(1)[0]
                  for i in range(M)], dtype=float)
    b = np.array([systems.sample_initial(systems.doubling(), root.split("b", i)).digits(1)[0]
                  for i in range(M)], dtype=float)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_doubling_third():
    p = systems.BitPoint.from_fraction(1, 3)
    assert p.digits(6) == [0, 1, 0, 1, 0, 1]
    q = systems.step(systems.doubling(), p)
    assert q.digits(6) == [1, 0, 1, 0, 1, 0]
    assert abs(q.value() - 2 / 3) < 2 ** -52


def test_toral_half_half(cat):
    p = systems.TorusPoint.from_floats(0.5, 0.5)
    q = systems.step(cat, p)
    assert q.coords() == (0.5, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 500))
def test_doubling_step_is_frac_2x(seed, shifts):
    p = systems.sample_initial(systems.doubling(), Stream(seed))
    for _ in range(shifts):
        p = p.step()
    x = p.value_exact()
    y = p.step().value_exact()
    assert abs(y - ((2 * x) % 1)) <= Fraction(1, 2 ** 60)
    assert abs(p.step().value() - float((2 * x) % 1)) <= 2.0 ** -52


def test_orbit_values_zero(dbl, cat):
    z1 = observables.zero_observable()
    z2 = observables.zero_observable(dim=2, phase_dim=2)
    assert not np.any(systems.orbit_values(dbl, z1, 10, Stream(1)))
    assert not np.any(systems.orbit_values(cat, z2, 10, Stream(1)))


def test_orbit_cos_from_third(cos1, dbl):
    p = systems.BitPoint.from_fraction(1, 3)
    vals = []
    for _ in range(2):
        vals.append(float(cos1(p)[0]))
        p = systems.step(dbl, p)
    assert np.allclose(vals, [-0.5, -0.5], atol=1e-15)


def test_orbit_values_match_bulk_engine(cos1, dbl):
    st_ = Stream(11)
    one = systems.orbit_values(dbl, cos1, 100, st_)
    assert one.shape == (100, 1)
    assert np.all(np.abs(one) <= 1)


def test_orbit_values_budget(cos1, dbl):
    with pytest.raises(ResourceError):
        systems.orbit_values(dbl, cos1, 10 ** 6, Stream(0), memory_budget=1000)
    with pytest.raises(ContractError):
        systems.orbit_values(dbl, cos1, 0, Stream(0))


def test_cos_mean_over_million(cos1, dbl):
    W = systems.birkhoff_pool(dbl, cos1, [1], 10 ** 6, Stream(5), workers=4)[1]
    assert abs(W.mean()) < 3e-3


def _first_digits_after(j, M, stream, bits=20):
    spec = systems.doubling()
    out = []
    for c, (lo, hi) in enumerate(systems.chunk_bounds(M)):
        state, _ = systems.chunk_state(spec, stream, c, hi - lo, j + 1)
        x = systems.block_coords(spec, state, j + 1)[:, j, 0]
        out.append(np.floor(x * 2 ** bits).astype(np.int64))
    return np.concatenate(out)


@pytest.mark.parametrize("j", [0, 64, 256])
def test_bitpoint_exact_digits_uniform(j):
    # 2^20 cells with 1e5 samples is sparse, so the chi-square statistic is
    # driven by the collision count; under uniformity it is Poisson(C(M,2)/2^20)
    M, cells = 100_000, 1 << 20
    words = _first_digits_after(j, M, Stream(99).split(j))
    counts = np.bincount(words, minlength=cells)
    collisions = int(np.sum(counts * (counts - 1) // 2))
    lam = M * (M - 1) / 2 / cells
    p = 2 * min(stats.poisson.cdf(collisions, lam), stats.poisson.sf(collisions - 1, lam))
    chi2 = float(np.sum((counts - M / cells) ** 2) / (M / cells))
    assert p > 1e-6, (collisions, lam, chi2)
    # leading and trailing 10-digit blocks with a dense chi-square
    for block in (words >> 10, words & 1023):
        assert stats.chisquare(np.bincount(block, minlength=1024)).pvalue > 1e-6


def test_float_doubling_collapses():
    # the degenerate shadow the digit representation avoids
    x = np.random.default_rng(0).random(1000)
    for _ in range(64):
        x = (2 * x) % 1.0
    assert not np.any(x)


PANEL = [lambda x: np.cos(2 * np.pi * x), lambda x: x, lambda x: x * x,
         lambda x: (x < 0.3).astype(float), lambda x: np.sin(6 * np.pi * x) ** 2]


@pytest.mark.parametrize("k", [1, 7, 32])
def test_measure_preservation_doubling(k, dbl):
    M = 100_000
    state, _ = systems.chunk_state(dbl, Stream(4), 0, M, k + 1)
    x = systems.block_coords(dbl, state, k + 1)[..., 0]
    for g in PANEL:
        a, sa = mean_se(g(x[:, 0]))
        b, sb = mean_se(g(x[:, k]))
        assert abs(a - b) <= 4 * math.hypot(sa, sb)


@pytest.mark.parametrize("k", [1, 7, 32])
def test_measure_preservation_toral(k, cat):
    M = 100_000
    state, _ = systems.chunk_state(cat, Stream(4), 0, M, k + 1)
    xy = systems.block_coords(cat, state, k + 1)
    for g in PANEL:
        for comp in (0, 1):
            a, sa = mean_se(g(xy[:, 0, comp]))
            b, sb = mean_se(g(xy[:, k, comp]))
            assert abs(a - b) <= 4 * math.hypot(sa, sb)


def test_pool_deterministic_across_workers(cos1, cos2, dbl, cat):
    for spec, f in ((dbl, cos1), (cat, cos2)):
        a = systems.birkhoff_pool(spec, f, [4, 64], 10_000, Stream(1), workers=1)
        b = systems.birkhoff_pool(spec, f, [4, 64], 10_000, Stream(1), workers=3)
        for N in a:
            assert a[N].tobytes() == b[N].tobytes()


def test_pool_matches_single_orbits(cos1, dbl):
    # bulk kernel values agree with the exact per-point iteration
    st_ = Stream(2)
    state, _ = systems.chunk_state(dbl, st_, 0, 3, 200)
    vals = systems.block_values(dbl, cos1, state, 200)
    for i in range(3):
        words = [int(w) for w in state[i]]

        class Src:
            def word(self, j):
                return words[j]
        p = systems.BitPoint(Src())
        for k in (0, 1, 63, 64, 65, 199):
            q = p
            for _ in range(k):
                q = q.step()
            assert abs(vals[i, k, 0] - cos1(q)[0]) < 1e-12


def test_backends_agree(tmp_path):
    code = ("import numpy as np, sys\n"
            "from steindyn import systems, observables\n"
            "from steindyn.rng import Stream\n"
            "f = observables.trig_observable([{'component':0,'freq':[1,2],'amp':1.0},"
            "{'component':1,'freq':[0,1],'amp':0.5,'kind':'sin'}])\n"
            "g = observables.center(observables.polynomial_observable([0.0, 1.0, 1.0]))\n"
            "a = systems.birkhoff_pool(systems.toral(), f, [3, 100], 5000, Stream(1))\n"
            "b = systems.birkhoff_pool(systems.doubling(), g, [3, 130], 5000, Stream(1))\n"
            "np.save(sys.argv[1], np.concatenate([a[100].ravel(), b[130].ravel()]))\n")
    outs = []
    for backend in ("numba", "numpy"):
        p = tmp_path / f"{backend}.npy"
        env = {**os.environ, "STEINDYN_BACKEND": backend}
        subprocess.run([sys.executable, "-c", code, str(p)], check=True, env=env)
        outs.append(np.load(p))
    assert np.allclose(outs[0], outs[1], rtol=0, atol=1e-12)


def test_toral_matrix_validation():
    with pytest.raises(ContractError):
        systems.toral(((1, 1), (0, 1)))  # parabolic
    with pytest.raises(ContractError):
        systems.toral(((2, 0), (0, 1)))  # det 2
    with pytest.raises(ContractError):
        systems.from_dict({"kind": "henon"})
    assert systems.toral().expansion_rate == pytest.approx(2 / (3 + math.sqrt(5)))


# ------------------------------------------------------------------ semiflow

def test_semiflow_zero_path(dbl):
    sp = systems.suspension(dbl)
    path = systems.semiflow_path(sp, observables.zero_observable(), 4.0, 0.25, 1000, Stream(0))
    assert not np.any(path.values)
    assert not np.any(path.integrate(0.0, 4.0))


def test_semiflow_constant_F(dbl):
    sp = systems.suspension(dbl)
    c = observables.polynomial_observable([2.5])
    path = systems.semiflow_path(sp, c, 3.0, 0.25, 1000, Stream(0))
    assert np.allclose(path.integrate(0.0, 1.0), 2.5, atol=1e-14)
    assert np.allclose(path.integrate(1.0, 2.0), 2.5, atol=1e-14)


def test_semiflow_dt1_samples_orbit(cos1, dbl):
    sp = systems.suspension(dbl)
    path = systems.semiflow_path(sp, cos1, 8.0, 1.0, 2000, Stream(3))
    # with u in [0,1) the sample at s = j is f(T^j x)
    assert np.array_equal(path.values, path.base_values[:, :8])
    st_ = Stream(3)
    state, _ = systems.chunk_state(sp, st_, 0, 2000, 9)
    assert np.array_equal(path.base_values, systems.block_values(dbl, cos1, state, 9))


def test_semiflow_rejects_nondyadic(cos1, dbl):
    sp = systems.suspension(dbl)
    with pytest.raises(ConfigError):
        systems.semiflow_path(sp, cos1, 4.0, 0.3, 1000, Stream(0))
    with pytest.raises(ContractError):
        systems.semiflow_path(sp, cos1, 0.5, 0.25, 1000, Stream(0))
    with pytest.raises(ContractError):
        systems.semiflow_path(dbl, cos1, 4.0, 0.25, 1000, Stream(0))
    with pytest.raises(ContractError):
        systems.suspension(dbl, roof=2.0)


def test_semiflow_grid_rule_converges_to_exact(cos1, dbl):
    sp = systems.suspension(dbl)
    exact = systems.semiflow_path(sp, cos1, 4.0, 2 ** -10, 1000, Stream(8))
    err = np.max(np.abs(exact.integrate(0.0, 4.0) - exact.integrate_grid(0.0, 4.0)))
    assert err <= 2 * 2 ** -10  # one cell of error per unit-time breakpoint


def test_flow_to_matches_path(cos1, dbl):
    sp = systems.suspension(dbl)
    p = systems.sample_initial(sp, Stream(12))
    q = systems.flow_to(sp, p, 3.75)
    assert 0 <= q.u < 1
    assert q.u == pytest.approx((p.u + 3.75) % 1)
