import math

import numpy as np
import pytest

from steindyn import correlations as C
from steindyn import observables, systems
from steindyn.errors import ContractError, FitError, ResourceError
from steindyn.rng import Stream

M = 100_000


def toral_pair_oracle(f, matrix, k, n=128):
    """mu(f (x) f o A^k) on the n x n grid, exact for trig polynomials of
    frequency below n (the grid is invariant under integer matrices)."""
    g = np.arange(n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    A = np.linalg.matrix_power(np.asarray(matrix, dtype=np.int64), k)
    X2 = (A[0, 0] * X + A[0, 1] * Y) % n
    Y2 = (A[1, 0] * X + A[1, 1] * Y) % n
    a = f(np.stack([X, Y], -1) / n).reshape(-1, f.dim)
    b = f(np.stack([X2, Y2], -1) / n).reshape(-1, f.dim)
    return a.T @ b / (n * n)


def doubling_pair_oracle(f, k, n=1 << 14):
    # midpoint rule: exact for trig polynomials of frequency below n
    x = np.arange(n) / n
    y = (x * 2 ** k) % 1.0
    return float(np.mean(f(x[:, None])[:, 0] * f(y[:, None])[:, 0]))


def test_pair_cos_oracle(cos1, dbl):
    assert doubling_pair_oracle(cos1, 0) == pytest.approx(0.5, abs=1e-14)
    assert doubling_pair_oracle(cos1, 1) == pytest.approx(0.0, abs=1e-14)
    e0, s0 = C.pair_correlation(dbl, cos1, 0, M, Stream(1))
    e1, s1 = C.pair_correlation(dbl, cos1, 1, M, Stream(1))
    assert abs(e0 - 0.5) <= 4 * s0
    assert abs(e1) <= 4 * s1


def test_pair_zero(dbl):
    z = observables.zero_observable()
    assert C.pair_correlation(dbl, z, 3, 1000, Stream(1)) == (0.0, 0.0)
    with pytest.raises(ContractError):
        C.pair_correlation(dbl, z, -1, 1000, Stream(1))
    with pytest.raises(ContractError):
        C.pair_correlation(dbl, z, 1, 999, Stream(1))


def test_pair_sawtooth_geometric(dbl):
    f = observables.sawtooth()
    tab = C.pair_table(dbl, f, 6, 200_000, Stream(2))
    for k in range(7):
        assert abs(tab.est[0, 0, k] - 2.0 ** -k / 12) <= 4 * tab.se[0, 0, k]


def test_fourth_cos(cos1, dbl):
    # oracles: int cos^4 = 3/8, int cos^2(2 pi x) cos^2(4 pi x) = 1/4
    x = (np.arange(1 << 12) + 0.5) / (1 << 12)
    c = np.cos(2 * np.pi * x)
    c2 = np.cos(4 * np.pi * x)
    assert np.mean(c ** 4) == pytest.approx(3 / 8, abs=1e-14)
    assert np.mean(c ** 2 * c2 ** 2) == pytest.approx(1 / 4, abs=1e-14)
    e, s = C.fourth_correlation(dbl, cos1, (0, 0, 0), M, Stream(3))
    assert abs(e - 3 / 8) <= 4 * s
    e, s = C.fourth_correlation(dbl, cos1, (0, 1, 1), M, Stream(3))
    assert abs(e - 1 / 4) <= 4 * s
    z = observables.zero_observable()
    assert C.fourth_correlation(dbl, z, (0, 1, 2), 1000, Stream(3))[0] == 0.0
    with pytest.raises(ContractError):
        C.fourth_correlation(dbl, cos1, (2, 1, 3), 1000, Stream(3))


def test_fourth_table_matches_single(cos1, dbl):
    tab = C.fourth_table(dbl, cos1, 2, 5000, Stream(4))
    e, s = C.fourth_correlation(dbl, cos1, (0, 1, 2), 5000, Stream(4))
    assert tab.moment[((0, 0, 0, 0), (0, 1, 2))][0] == pytest.approx(e, rel=1e-12)


def test_delta_cases():
    assert C.delta_case(0, 1, 4, 5) == 1
    assert C.delta_case(4, 5, 0, 1) == 1
    assert C.delta_case(0, 3, 2, 5) == 2
    assert C.delta_bound(0, 1, 4, 5, 1.0, 1.0, 0.5) == pytest.approx(2 * 0.5 ** 3)


def test_delta_diagnostic_zero(dbl):
    z = observables.zero_observable()
    rows = C.delta_diagnostic(dbl, z, 6, 1, 1000, Stream(5), 1.0, 1.0, 0.5)
    assert all(r.value == 0.0 and r.bound >= 0 for r in rows)
    with pytest.raises(ResourceError):
        C.delta_diagnostic(dbl, z, 33, 1, 1000, Stream(5), 1.0, 1.0, 0.5)


def test_delta_diagnostic_cos(cos1, dbl):
    prof = C.estimate_profile(dbl, cos1, 50_000, Stream(6), k_max=16, safety=2.0)
    rows = C.delta_diagnostic(dbl, cos1, 16, 2, 50_000, Stream(7), prof.C2, prof.C4, prof.lam)
    assert len(rows) > 0
    worst = max(abs(r.value) - r.bound for r in rows)
    assert worst <= 0.0
    # classification matches the definition on every enumerated index
    for r in rows[:500]:
        n, m, k, l = r.indices
        two_small = sorted((n, m, k, l))[:2]
        two_large = sorted((n, m, k, l))[2:]
        expect = 1 if sorted((n, m)) in (two_small, two_large) and \
            (max(n, m) <= min(k, l) or max(k, l) <= min(n, m)) else 2
        assert r.case == expect


def test_fit_synthetic_geometric():
    pair = 0.5 * 0.25 ** np.arange(12)
    C2, C4, lam, src = C.fit_A1(pair, safety=2.0)
    assert src == "fit"
    assert lam == pytest.approx(0.25, rel=1e-12)
    assert C2 == pytest.approx(1.0, rel=1e-12)


def test_fit_cos_defaults(cos1, dbl):
    prof = C.estimate_profile(dbl, cos1, M, Stream(8), k_max=12)
    assert prof.rate_source == "system-default"
    assert prof.lam == 0.5
    assert prof.C2 >= 2 * 2 * math.pi
    assert prof.C2 == pytest.approx(2 * 2 * math.pi, rel=1e-2)


def test_fit_dominates_table(dbl):
    f = observables.sawtooth()
    prof = C.estimate_profile(dbl, f, M, Stream(9), k_max=12)
    est, se = prof.pair.est[0, 0], prof.pair.se[0, 0]
    assert 0 < prof.lam < 1 and prof.C2 > 0 and prof.C4 > 0
    # dominance over resolved lags and the leading ones; the rest are noise
    check = (np.abs(est) > 3 * se) | (np.arange(13) <= 8)
    env = prof.C2 * prof.lam ** np.arange(13)
    assert np.all(env[check] >= (np.abs(est) + 2 * se)[check])
    assert np.all(np.abs(est[~check]) <= 3 * se[~check])


def test_fit_zero_rejected():
    with pytest.raises(FitError):
        C.fit_A1(np.zeros(10), default_rate=0.5)


def test_sigma_cos(cos1, dbl):
    prof = C.estimate_profile(dbl, cos1, M, Stream(10), k_max=40)
    est = C.sigma_matrix(prof)
    assert est.positive_definite
    assert abs(est.sigma[0, 0] - 0.5) <= 2 * est.se[0, 0] + est.tail_bound
    assert C.sigma_scalar(prof) == est.sigma[0, 0]


def test_sigma_toral(cos2, cat):
    oracle = [toral_pair_oracle(cos2, cat.matrix, k) for k in range(5)]
    assert np.allclose(oracle[0], 0.5 * np.eye(2), atol=1e-14)
    for k in range(1, 5):
        assert np.allclose(oracle[k], 0.0, atol=1e-14)
    prof = C.estimate_profile(cat, cos2, M, Stream(11), k_max=12)
    est = C.sigma_matrix(prof)
    assert np.array_equal(est.sigma, est.sigma.T)
    assert np.all(np.abs(est.sigma - 0.5 * np.eye(2)) <= 4 * est.se + est.tail_bound)
    assert est.positive_definite


def test_sigma_analytic_sawtooth():
    # sum of 2^-k/12 over all lags: 1/12 + 2 (1/12) = 1/4
    est = C.sigma_matrix((lambda k: 2.0 ** -k / 12, 1, 1 / 12, 0.5), tol=1e-14)
    assert est.sigma[0, 0] == pytest.approx(0.25, abs=1e-13)


def test_sigma_zero_and_coboundary():
    est = C.sigma_matrix((lambda k: 0.0, 1, 1.0, 0.5))
    assert est.pd_status == "degenerate"
    # f = g - g o T with g = cos 2 pi x: pair(0) = 1, pair(1) = -1/2, else 0
    cob = C.sigma_matrix((lambda k: {0: 1.0, 1: -0.5}.get(k, 0.0), 1, 1.0, 0.5))
    assert abs(cob.sigma[0, 0]) < 1e-15 and cob.pd_status == "degenerate"
    # two-dimensional degeneracy: f = (cos, cos) has direction (1, -1)/sqrt 2
    dup = C.sigma_matrix((lambda k: 0.5 * np.ones((2, 2)) if k == 0 else np.zeros((2, 2)),
                          2, 1.0, 0.5))
    assert dup.pd_status == "degenerate"
    v = dup.direction / np.linalg.norm(dup.direction)
    assert abs(abs(v @ np.array([1, -1]) / math.sqrt(2)) - 1) < 1e-12
    with pytest.raises(ContractError):
        C.sigma_matrix((lambda k: 1.0, 1, 1.0, 1.0))


def test_stationarity(cos1, dbl):
    f = observables.sawtooth()
    for k in (0, 1, 3):
        a, sa = C.pair_correlation(dbl, f, k, M, Stream(12))
        b, sb = C.pair_correlation(dbl, f, k, M, Stream(13), origin=17)
        assert abs(a - b) <= 4 * math.hypot(sa, sb)


def test_variance_consistency(cos1, dbl, cos2, cat):
    for spec, f in ((dbl, cos1), (cat, cos2)):
        W = systems.birkhoff_pool(spec, f, [4096], 20_000, Stream(14), workers=4)[4096]
        V = np.cov(W.T, ddof=1).reshape(f.dim, f.dim)
        # SE of a sample covariance entry from the fourth moments of the pool
        se = np.sqrt(np.var(W[:, :, None] * W[:, None, :], axis=0, ddof=1) / W.shape[0])
        assert np.all(np.abs(V - 0.5 * np.eye(f.dim)) <= 4 * se + 1e-8)


def test_profile_csv_roundtrip(cos1, dbl, tmp_path):
    tab = C.pair_table(dbl, cos1, 5, 2000, Stream(15))
    p = tmp_path / "profile.csv"
    C.write_profile_csv(p, tab)
    back = C.read_profile_csv(p)
    assert np.array_equal(back.est, tab.est) and np.array_equal(back.se, tab.se)
    C.write_sigma_csv(tmp_path / "s.csv", np.eye(2))
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "row,col,value"


def test_truncation_lag():
    K = C.truncation_lag(2.0, 0.5, 1e-8)
    assert 2.0 * 0.5 ** K / 0.5 < 1e-8
    assert 2.0 * 0.5 ** (K - 1) / 0.5 >= 1e-8


def test_workers_do_not_change_tables(cos2, cat):
    a = C.pair_table(cat, cos2, 4, 10_000, Stream(16), workers=1)
    b = C.pair_table(cat, cos2, 4, 10_000, Stream(16), workers=4)
    assert a.est.tobytes() == b.est.tobytes()
