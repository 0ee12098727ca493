"""Conditioning scheme on the doubling map.

Cells of generation n are the dyadic intervals (q 2^-n, (q+1) 2^-n),
q = 0 .. 2^n - 1 (0-based). T^k maps cell q affinely onto the dyadic
interval of length 2^(k-n) whose left end has binary digits equal to the
low n-k bits of q, so conditional means of past sums reduce to interval
averages of f.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import systems
from .errors import ContractError, ResourceError

MAX_GENERATION = 24
MAX_DECORRELATION_J = 24


@dataclass(frozen=True)
class BoundedFunction:
    """Scalar A with sup norms of A and A'."""
    name: str
    f: callable
    df: callable
    sup: float
    dsup: float

    def __call__(self, w):
        return self.f(w)


def sine():
    return BoundedFunction("sin", np.sin, np.cos, 1.0, 1.0)


@dataclass(frozen=True)
class DyadicPartition:
    generation: int

    def __post_init__(self):
        if self.generation < 0:
            raise ContractError("generation must be >= 0")

    @property
    def size(self):
        return 1 << self.generation

    @property
    def weights(self):
        if self.generation > MAX_GENERATION:
            raise ResourceError(f"2^{self.generation} cells exceed the cell limit")
        return np.full(self.size, 2.0 ** -self.generation)

    @property
    def cells(self):
        """(2^n, 2) array of cell end points."""
        q = np.arange(self.size, dtype=float)
        h = 2.0 ** -self.generation
        return np.stack([q * h, (q + 1) * h], axis=1)

    def cell_index(self, words):
        """0-based cell of each digit expansion (leading word of ``words``)."""
        n = self.generation
        if n == 0:
            return np.zeros(words.shape[0], dtype=np.uint64)
        if n > 64:
            raise ResourceError("cell index limited to 64 digits")
        return words[:, 0] >> np.uint64(64 - n)

    def conditional_words(self, q, stream, m, n_digits):
        """``m`` exact samples of nu_q: the cell's n leading digits, then fresh digits."""
        n = self.generation
        if n > 64:
            raise ResourceError("conditional sampling limited to 64 fixed digits")
        words = stream.split("cell", int(q)).words(m * systems.n_words(n_digits + n))
        words = words.reshape(m, -1)
        if n:
            keep = np.uint64((1 << (64 - n)) - 1)
            words[:, 0] = (np.uint64(q) << np.uint64(64 - n)) | (words[:, 0] & keep)
        return words


# ------------------------------------------------------------------ constants

_GL = {}


def _gl(order):
    if order not in _GL:
        t, w = leggauss(order)
        _GL[order] = ((t + 1) / 2, w / 2)
    return _GL[order]


def _scalar(f):
    if f.dim != 1 or f.phase_dim != 1:
        raise ContractError("the scheme needs a scalar observable on [0, 1)")
    return lambda x: f.eval(np.asarray(x, dtype=float)[..., None])[..., 0]


def _interval_mean(fs, a, length, order=16):
    t, w = _gl(order)
    return (fs(a[:, None] + length * t) * w).sum(axis=1)


def _past_range(N, K, n):
    return max(0, n - K)


def cell_constants_for(f, N, K, n, idx, order=16):
    """c_q = nu_q(W^n_-) for the 0-based cells ``idx``."""
    fs = _scalar(f)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(idx.shape[0])
    for k in range(_past_range(N, K, n)):
        r = n - k
        a = (idx & ((1 << r) - 1)).astype(float) * 2.0 ** -r
        out += _interval_mean(fs, a, 2.0 ** -r, order)
    return out / math.sqrt(N)


def conditional_constants(f, N, K, n, generation=None, order=16):
    """c_q for every cell of the generation-n partition, shape (2^n,)."""
    if generation is not None and generation != n:
        raise ContractError("the partition generation must equal n")
    if not (0 <= n < N and 0 <= K < N):
        raise ContractError(f"need 0 <= n, K < N, got N={N}, K={K}, n={n}")
    if n > MAX_GENERATION:
        raise ResourceError(f"2^{n} cells exceed the cell limit (n <= {MAX_GENERATION})")
    return cell_constants_for(f, N, K, n, np.arange(1 << n), order)


def past_oscillation(f, N, K, n, points=33, order=16):
    """max_q sup_{x in cell q} |W^n_-(x) - c_q| on a grid of points per cell."""
    if n > 16:
        raise ResourceError("oscillation grid limited to n <= 16")
    fs = _scalar(f)
    c = conditional_constants(f, N, K, n, order=order)
    q = np.arange(1 << n)
    u = (np.arange(points) + 0.5) / points
    Wm = np.zeros((q.size, points))
    for k in range(_past_range(N, K, n)):
        r = n - k
        Wm += fs(((q & ((1 << r) - 1))[:, None] + u) * 2.0 ** -r)
    Wm /= math.sqrt(N)
    return float(np.max(np.abs(Wm - c[:, None])))


def oscillation_bound(f, N, K):
    return f.lipschitz / (math.sqrt(N) * 2.0 ** K)


# ------------------------------------------------------------------ Monte Carlo

def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _gapped(vals, N, K, n):
    cs = np.concatenate([np.zeros((vals.shape[0], 1)), np.cumsum(vals, axis=1)], axis=1)
    lo = max(0, n - K)
    hi = min(N, n + K + 1)
    s = math.sqrt(N)
    return cs[:, lo] / s, (cs[:, N] - cs[:, hi]) / s


def _orbits_with_words(f, n_steps, M, stream, workers=1):
    spec = systems.doubling()

    def job(c, m):
        state, _ = systems.chunk_state(spec, stream, c, m, n_steps)
        return state[:, 0].copy(), systems.block_values(spec, f, state, n_steps)[..., 0]
    parts = systems.map_chunks(job, M, stream, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts], axis=0)


def prop71_rhs(f, A, N, K):
    """L (|A|/2 + |A'| |f| / sqrt N) 2^-K."""
    return f.lipschitz * (A.sup / 2 + A.dsup * f.sup_norm / math.sqrt(N)) * 2.0 ** -K


def rho_tilde_doubling(f, K):
    """L (1/2 + |f|) 2^-K."""
    return f.lipschitz * (0.5 + f.sup_norm) * 2.0 ** -K


@dataclass(frozen=True)
class Prop71Row:
    N: int
    n: int
    K: int
    lhs: float
    se: float
    rhs: float

    @property
    def passed(self):
        return self.lhs <= self.rhs + 4 * self.se


def prop71_grid(f, A, N, n_list, K_list, M, stream, workers=1):
    """|mu(f^n A(W^n))| for every (n, K) from one pool of M orbits of length N."""
    cells = [(n, K) for n in n_list for K in K_list]
    for n, K in cells:
        if not (0 <= n < N and 0 <= K < N):
            raise ContractError(f"need 0 <= n, K < N, got N={N}, K={K}, n={n}")
    spec = systems.doubling()

    def job(c, m):
        state, _ = systems.chunk_state(spec, stream, c, m, N)
        vals = systems.block_values(spec, f, state, N)[..., 0]
        cs = np.concatenate([np.zeros((m, 1)), np.cumsum(vals, axis=1)], axis=1)
        out = np.empty((m, len(cells)))
        for i, (n, K) in enumerate(cells):
            W = (cs[:, max(0, n - K)] + cs[:, N] - cs[:, min(N, n + K + 1)]) / math.sqrt(N)
            out[:, i] = vals[:, n] * A(W)
        return out
    prod = np.concatenate(systems.map_chunks(job, M, stream, workers), axis=0)
    rows = []
    for i, (n, K) in enumerate(cells):
        m, se = _mean_se(prod[:, i])
        rows.append(Prop71Row(N, n, K, abs(m), se, prop71_rhs(f, A, N, K)))
    return rows


def prop71_check(f, A, N, K, n, M, stream, workers=1):
    """(lhs, rhs, pass) with pass when lhs <= rhs + 4 SE."""
    row = prop71_grid(f, A, N, [n], [K], M, stream, workers)[0]
    return row.lhs, row.rhs, row.passed


def decay_rate(rows, min_ratio=4.0):
    """Per-unit-K decay factor of lhs by log-linear fit over resolved rows.

    Rows with lhs below ``min_ratio`` standard errors are noise dominated
    and excluded; returns (factor, number of rows used).
    """
    pts = [(r.K, math.log(r.lhs)) for r in rows if r.lhs > min_ratio * r.se and r.lhs > 0]
    if len(pts) < 2:
        return float("nan"), len(pts)
    K, y = np.array(pts).T
    slope = np.polyfit(K, y, 1)[0]
    return float(math.exp(slope)), len(pts)


# ------------------------------------------------------------------ error terms

def transfer_power(f, j, z, chunk=1 << 16):
    """(P^j f)(z) = 2^-j sum_b f((z + b) / 2^j) for the doubling map."""
    if j > MAX_DECORRELATION_J:
        raise ResourceError(f"j = {j} exceeds {MAX_DECORRELATION_J}")
    fs = _scalar(f)
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape)
    nb = 1 << j
    for lo in range(0, nb, chunk):
        b = np.arange(lo, min(nb, lo + chunk), dtype=float)
        out += fs((z[..., None] + b) * 2.0 ** -j).sum(axis=-1)
    return out * 2.0 ** -j


@dataclass(frozen=True)
class SchemeReport:
    N: int
    K: int
    n: int
    E1: float
    E1_se: float
    E2: float
    E2_se: float
    E3: float
    E3_se: float
    E3_quad: float
    E3_quad_se: float
    delta: float
    lhs: float
    lhs_se: float
    rhs: float
    E1_bound: float

    @property
    def passed(self):
        return abs(self.lhs) <= self.rhs + 4 * self.lhs_se


def scheme_terms(f, A, N, K, n, M, stream, workers=1, quad_samples=None):
    """Monte Carlo estimates of E1, E2, E3 for the generation-n partition."""
    if not (0 <= n < N and 0 <= K < N):
        raise ContractError(f"need 0 <= n, K < N, got N={N}, K={K}, n={n}")
    if n > MAX_GENERATION:
        raise ResourceError(f"generation {n} exceeds {MAX_GENERATION}")
    part = DyadicPartition(n)
    sx, sy, sq, sz = (stream.split(s) for s in ("x", "y", "q", "z"))

    # lhs and E1 on x ~ mu; the cell of x is read off its leading digits
    lead, vals = _orbits_with_words(f, N, M, sx, workers)
    idx = part.cell_index(lead[:, None])
    uniq, inv = np.unique(idx, return_inverse=True)
    c = cell_constants_for(f, N, K, n, uniq.astype(np.int64))[inv]
    Wm, Wp = _gapped(vals, N, K, n)
    fn = vals[:, n]
    lhs_i = fn * A(Wm + Wp)
    s_i = fn * A(c + Wp)
    lhs, lhs_se = _mean_se(lhs_i)
    E1, E1_se = _mean_se(lhs_i - s_i)
    delta = float(np.mean(np.abs(Wm - c)))

    # E3 on independent y ~ mu and an independent cell q ~ lambda
    j = K + 1
    tail = N - n - K - 1

    def cell_sample(s, m):
        q = part.cell_index(s.words(m)[:, None])
        u, inv_q = np.unique(q, return_inverse=True)
        return cell_constants_for(f, N, K, n, u.astype(np.int64))[inv_q]

    _, yv = _orbits_with_words(f, j + max(tail, 0), M, sy, workers)
    Wt = yv[:, j:].sum(axis=1) / math.sqrt(N) if tail > 0 else np.zeros(M)
    g = yv[:, 0] * A(cell_sample(sq, M) + Wt)
    E3, E3_se = _mean_se(g)
    s_mean, s_se = _mean_se(s_i)
    E2, E2_se = s_mean - E3, math.hypot(s_se, E3_se)

    # E3 again through the transfer operator: mu(f B o T^j) = int (P^j f) B
    E3q, E3q_se = float("nan"), float("nan")
    if j <= 20:
        mz = quad_samples or min(M, max(1024, (1 << 24) >> j))
        zw, zv = _orbits_with_words(f, max(tail, 1), mz, sz, workers)
        z = (zw >> np.uint64(11)).astype(float) * 2.0 ** -53
        Wz = zv[:, :tail].sum(axis=1) / math.sqrt(N) if tail > 0 else np.zeros(mz)
        E3q, E3q_se = _mean_se(transfer_power(f, j, z) * A(cell_sample(sq.split("z"), mz) + Wz))

    return SchemeReport(N, K, n, E1, E1_se, E2, E2_se, E3, E3_se, E3q, E3q_se, delta,
                        lhs, lhs_se, prop71_rhs(f, A, N, K),
                        f.lipschitz * A.dsup * f.sup_norm / (math.sqrt(N) * 2.0 ** K))


# ------------------------------------------------------------------ decorrelation

def decorrelation_check(f, A_tilde, j, A_sup=None, panels=16, order=20):
    """mu(f A~ o T^j) = int_0^1 A~(z) (P^j f)(z) dz, against L |A~| 2^-j.

    Each branch of T^j is affine, so the integral is a sum of smooth
    branch integrals; composite Gauss-Legendre handles it.
    """
    if j < 0:
        raise ContractError("j must be >= 0")
    if j > MAX_DECORRELATION_J:
        raise ResourceError(f"j = {j} exceeds {MAX_DECORRELATION_J}")
    t, w = _gl(order)
    z = ((np.arange(panels)[:, None] + t) / panels).ravel()
    wz = np.tile(w, panels) / panels
    Az = np.asarray(A_tilde(z), dtype=float)
    est = float(wz @ (Az * transfer_power(f, j, z)))
    if A_sup is None:
        grid = np.linspace(0.0, 1.0, 4097)
        A_sup = float(max(np.max(np.abs(A_tilde(grid))), np.max(np.abs(Az))))
    bound = f.lipschitz * A_sup * 2.0 ** -j
    return est, bound, abs(est) <= bound + 1e-9


def write_scheme_csv(path, reports):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["n", "K", "E1", "E2", "E3", "lhs", "rhs", "pass"])
        for r in reports:
            wr.writerow([r.n, r.K] + [format(v, ".17g") for v in (r.E1, r.E2, r.E3, r.lhs, r.rhs)]
                        + [int(r.passed)])
