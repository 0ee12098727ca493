"""Correlation estimates, geometric decay fits, the limit covariance and
fourth-order diagnostics.

All Monte Carlo quantities are reduced chunk by chunk in chunk order, so
results depend only on the stream, never on the worker count.
"""
import csv
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np
from scipy.linalg import lapack

from . import systems
from .errors import ContractError, FitError, ResourceError


# ----------------------------------------------------------------- raw tables

@dataclass
class PairTable:
    """``est[a, b, k]`` estimates mu(f_a f_b^k); ``se`` its standard error.

    ``sigma_est[a, b, K]`` / ``sigma_se`` are the partial sums
    mu(f_a f_b) + sum_{k=1..K} (mu(f_a f_b^k) + mu(f_b f_a^k)) estimated as a
    single per-sample statistic, so their standard errors account for the
    correlation between lags.
    """
    est: np.ndarray
    se: np.ndarray
    M: int
    sigma_est: Optional[np.ndarray] = None
    sigma_se: Optional[np.ndarray] = None

    @property
    def k_max(self):
        return self.est.shape[2] - 1

    @property
    def dim(self):
        return self.est.shape[0]


def _moments(acc, M):
    s1, s2 = acc
    mean = s1 / M
    var = np.maximum(s2 / M - mean ** 2, 0.0)
    return mean, np.sqrt(var / max(M - 1, 1))


def _reduce(parts):
    out = None
    for p in parts:
        out = p if out is None else tuple(a + b for a, b in zip(out, p))
    return out


def pair_table(spec, f, k_max, M, stream, origin=0, workers=1):
    """All pair correlations up to lag ``k_max`` from one orbit pool."""
    if M < 1000:
        raise ContractError("M must be >= 1000")
    n_steps = origin + k_max + 1

    def job(c, m):
        state, _ = systems.chunk_state(spec, stream, c, m, n_steps)
        v = systems.block_values(spec, f, state, n_steps)[:, origin:]
        prod = np.einsum("ia,ikb->iabk", v[:, 0], v)
        cum = prod.copy()
        cum[..., 1:] += np.swapaxes(prod, 1, 2)[..., 1:]
        cum = np.cumsum(cum, axis=-1)
        return prod.sum(0), (prod ** 2).sum(0), cum.sum(0), (cum ** 2).sum(0)

    parts = systems.map_chunks(job, M, stream, workers)
    s1, s2, c1, c2 = _reduce(parts)
    est, se = _moments((s1, s2), M)
    sig, sig_se = _moments((c1, c2), M)
    return PairTable(est=est, se=se, M=M, sigma_est=sig, sigma_se=sig_se)


def pair_correlation(spec, f, k, M, stream, alpha=0, beta=0, origin=0, workers=1):
    """``(estimate, SE)`` of mu(f_alpha f_beta^k) from time origin ``origin``."""
    if k < 0:
        raise ContractError("lag must be >= 0")
    tab = pair_table(spec, f, k, M, stream, origin=origin, workers=workers)
    return float(tab.est[alpha, beta, k]), float(tab.se[alpha, beta, k])


def _fourth_lags(n_max):
    return [(l, m, n) for n in range(n_max + 1) for m in range(n + 1) for l in range(m + 1)]


def _component_quads(d):
    """All (a, b, c, e) drawn from a pair {a', b'} of components."""
    quads = set()
    for a1, b1 in product(range(d), repeat=2):
        quads.update(product((a1, b1), repeat=4))
    return sorted(quads)


@dataclass
class FourthTable:
    """Fourth moments mu(f_a f_b^l f_c^m f_e^n) and the matching centered
    quantities mu(...) - mu(f_a f_b^l) mu(f_c^m f_e^n), keyed by
    ``(quad, (l, m, n))`` and holding ``(est, se)`` pairs."""
    moment: dict
    delta: dict
    M: int


def fourth_table(spec, f, n_max, M, stream, workers=1, quads=None):
    if M < 1000:
        raise ContractError("M must be >= 1000")
    lags = _fourth_lags(n_max)
    quads = _component_quads(f.dim) if quads is None else quads
    L = np.asarray(lags)
    Q = np.asarray(quads)

    def job(c, m):
        state, _ = systems.chunk_state(spec, stream, c, m, n_max + 1)
        v = systems.block_values(spec, f, state, n_max + 1)
        a = v[:, 0][:, Q[:, 0]][:, :, None]
        b = v[:, L[:, 0]][:, :, Q[:, 1]].transpose(0, 2, 1)
        cc = v[:, L[:, 1]][:, :, Q[:, 2]].transpose(0, 2, 1)
        e = v[:, L[:, 2]][:, :, Q[:, 3]].transpose(0, 2, 1)
        ab, ce = a * b, cc * e
        four = ab * ce
        return (four.sum(0), (four ** 2).sum(0), ab.sum(0), ce.sum(0),
                (four * ab).sum(0), (four * ce).sum(0), (ab * ce).sum(0),
                (ab ** 2).sum(0), (ce ** 2).sum(0))

    r = _reduce(systems.map_chunks(job, M, stream, workers))
    four_m, four_se = _moments((r[0], r[1]), M)
    mab, mce = r[2] / M, r[3] / M
    delta = four_m - mab * mce
    # delta-method variance of mean(ab ce) - mean(ab) mean(ce)
    e2 = r[1] / M
    var = (e2 + mce ** 2 * r[7] / M + mab ** 2 * r[8] / M
           - 2 * mce * r[4] / M - 2 * mab * r[5] / M + 2 * mab * mce * r[6] / M
           - (four_m - 2 * mab * mce) ** 2)
    delta_se = np.sqrt(np.maximum(var, 0.0) / max(M - 1, 1))
    moment, dl = {}, {}
    for qi, q in enumerate(quads):
        for li, lag in enumerate(lags):
            moment[(tuple(q), lag)] = (float(four_m[qi, li]), float(four_se[qi, li]))
            dl[(tuple(q), lag)] = (float(delta[qi, li]), float(delta_se[qi, li]))
    return FourthTable(moment=moment, delta=dl, M=M)


def fourth_correlation(spec, f, lags, M, stream, comps=(0, 0, 0, 0), workers=1):
    """``(estimate, SE)`` of mu(f_a f_b^l f_c^m f_e^n)."""
    l, m, n = lags
    if not 0 <= l <= m <= n:
        raise ContractError("need 0 <= l <= m <= n")
    if M < 1000:
        raise ContractError("M must be >= 1000")

    def job(c, mm):
        state, _ = systems.chunk_state(spec, stream, c, mm, n + 1)
        v = systems.block_values(spec, f, state, n + 1)
        x = v[:, 0, comps[0]] * v[:, l, comps[1]] * v[:, m, comps[2]] * v[:, n, comps[3]]
        return x.sum(), (x ** 2).sum()

    est, se = _moments(_reduce(systems.map_chunks(job, M, stream, workers)), M)
    return float(est), float(se)


# ----------------------------------------------------------------- fit

@dataclass
class CorrelationProfile:
    pair: PairTable
    fourth: Optional[FourthTable]
    C2: float
    C4: float
    lam: float
    safety: float
    rate_source: str = "fit"
    notes: list = field(default_factory=list)

    def rho(self, i):
        return self.lam ** np.asarray(i)


def _lag_amplitude(est, se):
    amp = np.abs(est).reshape(-1, est.shape[-1])
    err = np.broadcast_to(se, est.shape).reshape(-1, est.shape[-1])
    idx = np.argmax(amp, axis=0)
    return amp.max(axis=0), err[idx, np.arange(amp.shape[1])]


def fit_A1(pair, fourth=None, safety=2.0, default_rate=None, default_C2=None,
           min_significant=3, dominance_lags=8):
    """Fit ``(C2, C4, lam)`` with ``rho(i) = lam**i``.

    ``pair`` is a ``PairTable`` or an array of lag estimates (standard
    errors taken as zero). ``lam`` comes from a log-linear regression on the
    non-increasing envelope of the resolved lags (|est| > 3 SE). When fewer
    than ``min_significant`` lags beyond 0 are resolved, ``lam`` falls back
    to ``default_rate`` and C2 includes ``default_C2`` (an analytic value
    such as ``L * |f|``). C2 and C4 are scaled by ``safety`` after taking
    the max of ``(|est| + 2 SE) / rho`` over resolved lags and all lags up to
    ``dominance_lags``.
    """
    if isinstance(pair, PairTable):
        est, se = pair.est, pair.se
    else:
        est = np.asarray(pair, dtype=float)
        if est.ndim == 1:
            est = est[None, None, :]
        se = np.zeros_like(est)
    amp, err = _lag_amplitude(est, se)
    if not np.isfinite(amp).all() or amp[0] <= 0:
        raise FitError("lag-0 correlation vanishes: observable is degenerate")
    resolved = amp > 3 * err
    resolved[0] = True
    ks = np.flatnonzero(resolved)
    source = "fit"
    if len(ks) - 1 >= min_significant:
        env = np.maximum.accumulate(amp[::-1])[::-1]
        slope, _ = np.polyfit(ks.astype(float), np.log(env[ks]), 1)
        lam = math.exp(slope)
        if not 0 < lam < 1:
            raise FitError("no decaying correlation envelope detected; increase M")
    else:
        if default_rate is None:
            raise FitError("too few resolved lags to fit a decay rate; increase M "
                           "or supply the system rate")
        lam, source = float(default_rate), "system-default"
    check = np.zeros(len(amp), dtype=bool)
    check[: dominance_lags + 1] = True
    check |= resolved
    C2 = float(np.max((amp[check] + 2 * err[check]) / lam ** np.flatnonzero(check)))
    if source != "fit" and default_C2 is not None:
        C2 = max(C2, float(default_C2))
    C4 = 0.0
    if fourth is not None:
        for (q, (l, m, n)), (v, s) in fourth.moment.items():
            C4 = max(C4, (abs(v) + 2 * s) / lam ** max(l, n - m))
        for (q, (l, m, n)), (v, s) in fourth.delta.items():
            C4 = max(C4, (abs(v) + 2 * s) / lam ** (m - l))
    if C4 <= 0:
        C4 = C2 ** 2
    return safety * C2, safety * C4, lam, source


def estimate_profile(spec, f, M, stream, k_max=32, fourth_max=4, safety=2.0, workers=1):
    """Pair and fourth tables plus the fitted constants, with system defaults
    (expansion rate, C2 = L |f|) when correlations are unresolvable."""
    pair = pair_table(spec, f, k_max, M, stream.split("pair"), workers=workers)
    fourth = fourth_table(spec, f, fourth_max, M, stream.split("fourth"), workers=workers)
    default_C2 = f.lipschitz * f.sup_norm if f.lipschitz > 0 else None
    C2, C4, lam, source = fit_A1(pair, fourth, safety=safety,
                                 default_rate=spec.expansion_rate, default_C2=default_C2)
    notes = ["C4 is empirical and safety-factored"]
    return CorrelationProfile(pair, fourth, C2, C4, lam, safety, source, notes)


# ----------------------------------------------------------------- covariance

@dataclass
class CovarianceEstimate:
    sigma: np.ndarray
    truncation_lag: int
    tail_bound: float
    pd_status: str
    direction: Optional[np.ndarray] = None
    se: Optional[np.ndarray] = None

    @property
    def positive_definite(self):
        return self.pd_status == "positive-definite"


def truncation_lag(C2, lam, tol):
    if not 0 < lam < 1:
        raise ContractError(f"decay rate must lie in (0, 1), got {lam}")
    if C2 <= 0:
        return 0
    K = math.ceil(math.log(tol * (1 - lam) / C2) / math.log(lam))
    return max(K, 0)


def pd_check(sigma, pivot_tol=1e-10):
    """Pivoted Cholesky; returns (status, direction or None)."""
    d = sigma.shape[0]
    if not np.any(sigma):
        return "degenerate", np.eye(d)[0]
    _, _, rank, info = lapack.dpstrf(np.array(sigma, dtype=float, order="F"), tol=pivot_tol)
    if info < 0:
        raise ContractError("invalid matrix for pivoted Cholesky")
    if rank == d and np.linalg.eigvalsh(sigma).min() > pivot_tol:
        return "positive-definite", None
    w, V = np.linalg.eigh(sigma)
    return "degenerate", V[:, 0]


def sigma_matrix(source, tol=1e-8, pivot_tol=1e-10):
    """Limit covariance from a ``CorrelationProfile`` or an analytic lag function.

    ``source`` may also be a tuple ``(pair_fn, dim, C2, lam)`` where
    ``pair_fn(k)`` returns the exact d x d matrix mu(f ⊗ f^k).
    """
    if isinstance(source, CorrelationProfile):
        C2, lam = source.C2, source.lam
        Kstar = truncation_lag(C2, lam, tol)
        tab = source.pair
        K = min(Kstar, tab.k_max)
        sig = tab.sigma_est[..., K].copy()
        se = tab.sigma_se[..., K].copy()
    else:
        pair_fn, dim, C2, lam = source
        Kstar = truncation_lag(C2, lam, tol)
        K = Kstar
        sig = np.array(pair_fn(0), dtype=float).reshape(dim, dim)
        for k in range(1, K + 1):
            c = np.array(pair_fn(k), dtype=float).reshape(dim, dim)
            sig += c + c.T
        se = np.zeros_like(sig)
    tail = 2 * C2 * lam ** (K + 1) / (1 - lam)
    sig = 0.5 * (sig + sig.T)
    status, direction = pd_check(sig, pivot_tol)
    return CovarianceEstimate(sig, K, tail, status, direction, se)


def sigma_scalar(source, tol=1e-8):
    est = sigma_matrix(source, tol)
    if est.sigma.shape != (1, 1):
        raise ContractError("sigma_scalar needs a scalar observable")
    return float(est.sigma[0, 0])


# ----------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class FourthOrderDelta:
    indices: tuple
    components: tuple
    value: float
    stderr: float
    case: int
    bound: float


def delta_case(n, m, k, l):
    """1 when n, m are the two smallest or the two largest of the 4-index."""
    if max(n, m) <= min(k, l) or max(k, l) <= min(n, m):
        return 1
    return 2


def delta_bound(n, m, k, l, C2, C4, lam):
    a, b, c, d = sorted((n, m, k, l))
    if delta_case(n, m, k, l) == 1:
        gap = max(b - a, c - b, d - c)
    else:
        gap = max(b - a, d - c)
    return (C4 + C2 ** 2) * lam ** gap


def delta_diagnostic(spec, f, N_small, K, M, stream, C2, C4, lam, workers=1):
    """Every 4-index ``(n, m, k, l)`` with ``m in [n]_K``, ``l in [k]_K``."""
    if N_small > 32:
        raise ResourceError("delta diagnostic is brute force; N_small must be <= 32")
    if not 0 <= K < N_small:
        raise ContractError("need 0 <= K < N_small")
    pairs = [(n, m) for n in range(N_small)
             for m in range(max(0, n - K), min(N_small - 1, n + K) + 1)]
    P = np.asarray(pairs)
    out = []
    for a, b in product(range(f.dim), repeat=2):
        def job(c, mm):
            state, _ = systems.chunk_state(spec, stream, c, mm, N_small)
            v = systems.block_values(spec, f, state, N_small)
            pr = v[:, P[:, 0], a] * v[:, P[:, 1], b]
            return pr.sum(0), pr.T @ pr, (pr ** 2).T @ (pr ** 2)
        s, G, G2 = _reduce(systems.map_chunks(job, M, stream, workers))
        mean = s / M
        G = G / M
        delta = G - np.outer(mean, mean)
        se = np.sqrt(np.maximum(G2 / M - G ** 2, 0.0) / max(M - 1, 1))
        for i, (n, m) in enumerate(pairs):
            for j, (k, l) in enumerate(pairs):
                out.append(FourthOrderDelta((n, m, k, l), (a, b), float(delta[i, j]),
                                            float(se[i, j]), delta_case(n, m, k, l),
                                            delta_bound(n, m, k, l, C2, C4, lam)))
    return out


def estimate_rho_tilde(spec, f, grad_h, lam, N, K_list, M, stream, n_list=None,
                       t_list=(0.0, 0.5, 1.0), v_list=None, safety=2.0, workers=1):
    """Empirical ``C~`` with ``rho~(K) = C~ lam**K``.

    Probes |mu(f^n . grad h(v + t W^n))| over a small grid of (n, t, v) for
    each gap K and returns ``safety * max_K (probe_K + 2 SE) / lam**K``.
    """
    n_list = [0, N // 2, N - 1] if n_list is None else n_list
    v_list = [np.zeros(f.dim)] if v_list is None else v_list
    best = 0.0

    def job(c, m):
        state, _ = systems.chunk_state(spec, stream, c, m, N)
        return systems.block_values(spec, f, state, N)
    vals = np.concatenate(systems.map_chunks(job, M, stream, workers), axis=0)
    csum = np.concatenate([np.zeros((M, 1, f.dim)), np.cumsum(vals, axis=1)], axis=1)
    total = csum[:, N]
    for K in K_list:
        probe = 0.0
        for n in n_list:
            lo, hi = max(0, n - K), min(N - 1, n + K)
            Wn = (total - (csum[:, hi + 1] - csum[:, lo])) / math.sqrt(N)
            for t in t_list:
                for v in v_list:
                    x = np.einsum("ia,ia->i", vals[:, n], grad_h(v + t * Wn))
                    est, se = x.mean(), x.std(ddof=1) / math.sqrt(M)
                    probe = max(probe, abs(est) + 2 * se)
        best = max(best, probe / lam ** K)
    return safety * best


# ----------------------------------------------------------------- csv

def write_profile_csv(path, pair):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "beta", "lag", "estimate", "stderr"])
        d, _, K = pair.est.shape
        for a in range(d):
            for b in range(d):
                for k in range(K):
                    w.writerow([a, b, k, f"{pair.est[a, b, k]:.17g}", f"{pair.se[a, b, k]:.17g}"])


def write_sigma_csv(path, sigma):
    sigma = np.atleast_2d(sigma)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "value"])
        for i in range(sigma.shape[0]):
            for j in range(sigma.shape[1]):
                w.writerow([i, j, f"{sigma[i, j]:.17g}"])


def read_profile_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    d = max(int(r["alpha"]) for r in rows) + 1
    K = max(int(r["lag"]) for r in rows) + 1
    est = np.zeros((d, d, K))
    se = np.zeros((d, d, K))
    for r in rows:
        a, b, k = int(r["alpha"]), int(r["beta"]), int(r["lag"])
        est[a, b, k] = float(r["estimate"])
        se[a, b, k] = float(r["stderr"])
    return PairTable(est=est, se=se, M=0)
