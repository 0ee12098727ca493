"""Dynamical systems with exact-in-distribution sampling of the invariant measure.

* doubling map ``x -> 2x mod 1``: points are lazily extended binary digit
  streams (``BitPoint``);
* hyperbolic toral automorphisms: 64-bit fixed-point coordinates acted on
  by wrapping integer arithmetic (``TorusPoint``);
* the roof-1 suspension of either, whose time-one map is the base map.

Bulk Monte Carlo is organized in fixed-size chunks of samples. Chunk ``c``
draws its bits from ``stream.split("chunk", c)``, so results never depend on
how chunks are scheduled over worker threads.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, ResourceError

CHUNK = 4096
DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes
MASK64 = (1 << 64) - 1


# ----------------------------------------------------------------- specs

@dataclass(frozen=True)
class SystemSpec:
    kind: str
    matrix: Optional[tuple] = None
    base: Optional["SystemSpec"] = None
    roof: float = 1.0
    seed_policy: str = "Philox counter streams keyed by (master seed, purpose, chunk)"

    @property
    def phase_dim(self):
        if self.kind == "suspension":
            return self.base.phase_dim
        return 1 if self.kind == "doubling" else 2

    @property
    def map_spec(self):
        """The discrete map driving the system (the time-one map for flows)."""
        return self.base if self.kind == "suspension" else self

    @property
    def expansion_rate(self):
        """Geometric decay rate of Lipschitz correlations for the base map."""
        m = self.map_spec
        if m.kind == "doubling":
            return 0.5
        ev = np.abs(np.linalg.eigvals(np.asarray(m.matrix, dtype=float)))
        return float(1.0 / ev.max())

    def to_dict(self):
        if self.kind == "doubling":
            return {"kind": "doubling"}
        if self.kind == "toral":
            return {"kind": "toral", "matrix": [list(r) for r in self.matrix]}
        return {"kind": "suspension", "base": self.base.to_dict(), "roof": self.roof}


def doubling():
    return SystemSpec("doubling")


def toral(matrix=((2, 1), (1, 1))):
    m = tuple(tuple(int(v) for v in row) for row in matrix)
    if len(m) != 2 or any(len(r) != 2 for r in m):
        raise ContractError("toral matrix must be 2x2")
    if np.any(np.asarray(matrix) != np.asarray(m)):
        raise ContractError("toral matrix must be integer")
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
    trace = m[0][0] + m[1][1]
    if abs(det) != 1:
        raise ContractError(f"toral matrix must have det +-1, got {det}")
    if abs(trace) <= 2:
        raise ContractError(f"toral matrix must have |trace| > 2, got {trace}")
    return SystemSpec("toral", matrix=m)


def suspension(base, roof=1.0):
    if roof != 1.0:
        raise ContractError("only the constant roof 1 is supported")
    if base.kind == "suspension":
        raise ContractError("base of a suspension must be a map")
    return SystemSpec("suspension", base=base, roof=1.0)


def from_dict(d):
    kind = d.get("kind")
    if kind == "doubling":
        return doubling()
    if kind == "toral":
        return toral(d.get("matrix", ((2, 1), (1, 1))))
    if kind == "suspension":
        return suspension(from_dict(d["base"]), d.get("roof", 1.0))
    raise ContractError(f"unknown system kind {kind!r}")


# ----------------------------------------------------------------- points

class _RandomDigits:
    """Digit words drawn on demand from a Philox stream."""

    def __init__(self, stream):
        self._bitgen = stream.bit_generator()
        self._words = []

    def word(self, j):
        while len(self._words) <= j:
            self._words.extend(int(w) for w in self._bitgen.random_raw(8))
        return self._words[j]


class _RationalDigits:
    """Binary expansion of p/q in [0, 1), word by word."""

    def __init__(self, p, q):
        self.p, self.q = p % q, q

    def word(self, j):
        rem = (self.p << (64 * j)) % self.q
        return (rem << 64) // self.q


class BitPoint:
    """Point of the doubling map as a binary digit stream.

    ``consumed`` digits have been shifted out; the value uses the next 64.
    """

    __slots__ = ("_src", "consumed")

    def __init__(self, source, consumed=0):
        self._src = source
        self.consumed = consumed

    @classmethod
    def from_fraction(cls, p, q=None):
        fr = Fraction(p) if q is None else Fraction(p, q)
        return cls(_RationalDigits(fr.numerator, fr.denominator))

    def window(self):
        j, r = divmod(self.consumed, 64)
        if r == 0:
            return self._src.word(j)
        return ((self._src.word(j) << r) | (self._src.word(j + 1) >> (64 - r))) & MASK64

    def digits(self, n):
        out = []
        k = self.consumed
        while len(out) < n:
            j, r = divmod(k, 64)
            out.append((self._src.word(j) >> (63 - r)) & 1)
            k += 1
        return out

    def value(self):
        return (self.window() >> 11) * 2.0 ** -53

    def value_exact(self):
        return Fraction(self.window(), 1 << 64)

    def coords(self):
        return (self.value(),)

    def step(self):
        return BitPoint(self._src, self.consumed + 1)


class TorusPoint:
    """Point of the 2-torus on the 2**-64 grid."""

    __slots__ = ("X", "Y")

    def __init__(self, X, Y):
        self.X = int(X) & MASK64
        self.Y = int(Y) & MASK64

    @classmethod
    def from_floats(cls, x, y):
        return cls(round(float(x) * 2.0 ** 64) % (1 << 64), round(float(y) * 2.0 ** 64) % (1 << 64))

    @property
    def x(self):
        return (self.X >> 11) * 2.0 ** -53

    @property
    def y(self):
        return (self.Y >> 11) * 2.0 ** -53

    def coords(self):
        return (self.x, self.y)

    def step(self, matrix):
        (a, b), (c, d) = matrix
        return TorusPoint(a * self.X + b * self.Y, c * self.X + d * self.Y)


@dataclass(frozen=True)
class FlowPoint:
    """Suspension point: base point and height u in [0, 1)."""
    base: object
    u: float

    def coords(self):
        return self.base.coords()


def sample_initial(spec, stream):
    """A point distributed according to the invariant measure."""
    if spec.kind == "doubling":
        return BitPoint(_RandomDigits(stream))
    if spec.kind == "toral":
        w = stream.words(2)
        return TorusPoint(int(w[0]), int(w[1]))
    u = (int(stream.split("height").words(1)[0]) >> 11) * 2.0 ** -53
    return FlowPoint(sample_initial(spec.base, stream.split("base")), u)


def step(spec, p):
    if spec.kind == "doubling":
        return p.step()
    if spec.kind == "toral":
        return p.step(spec.matrix)
    return FlowPoint(step(spec.base, p.base), p.u)


def flow_to(spec, p, s):
    """Flow a suspension point for time ``s >= 0`` (roof 1)."""
    total = p.u + s
    jumps = int(np.floor(total))
    b = p.base
    for _ in range(jumps):
        b = step(spec.base, b)
    return FlowPoint(b, total - jumps)


def orbit_values(spec, f, n_steps, stream, memory_budget=DEFAULT_MEMORY_BUDGET):
    """``(f(x), f(Tx), ..., f(T^{n-1}x))`` for one sampled ``x``; shape (n_steps, d)."""
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    _check_budget(n_steps * f.dim * 8, memory_budget)
    p = sample_initial(spec.map_spec, stream if spec.kind != "suspension" else stream.split("base"))
    out = np.empty((n_steps, f.dim))
    m = spec.map_spec
    for k in range(n_steps):
        out[k] = f(p)
        p = step(m, p)
    return out


def _check_budget(nbytes, budget):
    if nbytes > budget:
        raise ResourceError(f"request needs {nbytes} bytes, budget is {budget}")


# ----------------------------------------------------------------- bulk engine

def n_words(n_steps):
    return (max(n_steps, 1) - 1) // 64 + 2


def chunk_bounds(n_samples, chunk=CHUNK):
    return [(s, min(s + chunk, n_samples)) for s in range(0, n_samples, chunk)]


def chunk_state(spec, stream, c, m, n_steps):
    """Initial states for chunk ``c``: digit words or torus words, plus heights."""
    base = spec.map_spec
    if base.kind == "doubling":
        state = stream.chunk_words(c, m, n_words(n_steps))
    else:
        state = stream.chunk_words(c, m, 2)
    heights = None
    if spec.kind == "suspension":
        heights = _np_unit(stream.split("height").chunk_words(c, m, 1)[:, 0])
    return state, heights


def _np_unit(w):
    return (w >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def block_values(spec, f, state, n_steps):
    """Observable values along orbits from explicit initial states, (m, n, d)."""
    base = spec.map_spec
    if f.terms is not None:
        table = f.terms.arrays()
        if base.kind == "doubling":
            return kernels.doubling_values(state, n_steps, table)
        return kernels.toral_values(state, kernels.toral_matrix_words(base.matrix), n_steps, table)
    return f.eval(block_coords(spec, state, n_steps))


def block_coords(spec, state, n_steps):
    base = spec.map_spec
    if base.kind == "doubling":
        return kernels.doubling_coords(state, n_steps)
    return kernels.toral_coords(state, kernels.toral_matrix_words(base.matrix), n_steps)


def block_sums(spec, f, state, checkpoints):
    """Unnormalized Birkhoff sums S_N for each N in ``checkpoints`` (ascending)."""
    base = spec.map_spec
    if f.terms is not None:
        table = f.terms.arrays()
        if base.kind == "doubling":
            return kernels.doubling_sums(state, checkpoints, table)
        return kernels.toral_sums(state, kernels.toral_matrix_words(base.matrix), checkpoints, table)
    vals = block_values(spec, f, state, int(checkpoints[-1]))
    cs = np.cumsum(vals, axis=1)
    return cs[:, np.asarray(checkpoints) - 1]


def map_chunks(fn, n_samples, stream, workers=1, chunk=CHUNK):
    """Apply ``fn(c, m)`` to every chunk; results are returned in chunk order."""
    bounds = chunk_bounds(n_samples, chunk)
    jobs = [(c, hi - lo) for c, (lo, hi) in enumerate(bounds)]
    if workers <= 1 or len(jobs) <= 1:
        return [fn(c, m) for c, m in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda job: fn(*job), jobs))


def sample_orbits(spec, f, n_steps, n_samples, stream, workers=1,
                  memory_budget=DEFAULT_MEMORY_BUDGET):
    """Values of ``f`` along ``n_samples`` independent orbits, shape (M, n, d).

    For a suspension these are the base (time-one) orbit values.
    """
    _check_budget(n_samples * n_steps * f.dim * 8, memory_budget)

    def job(c, m):
        state, _ = chunk_state(spec, stream, c, m, n_steps)
        return block_values(spec, f, state, n_steps)
    return np.concatenate(map_chunks(job, n_samples, stream, workers), axis=0)


def birkhoff_pool(spec, f, N_list, n_samples, stream, workers=1):
    """Samples of W(N) = N^{-1/2} S_N for every N in ``N_list`` from one orbit pool.

    Returns a dict ``N -> (M, d)`` array.
    """
    Ns = sorted(int(n) for n in N_list)
    if Ns[0] < 1:
        raise ContractError("horizons must be >= 1")

    def job(c, m):
        state, _ = chunk_state(spec, stream, c, m, Ns[-1])
        return block_sums(spec, f, state, Ns)
    sums = np.concatenate(map_chunks(job, n_samples, stream, workers), axis=0)
    return {N: sums[:, i] / np.sqrt(N) for i, N in enumerate(Ns)}


# ----------------------------------------------------------------- semiflow

def check_dyadic(dt):
    m = -np.log2(dt) if dt > 0 else np.nan
    if not (np.isfinite(m) and m == round(m) and m >= 0):
        raise ConfigError("quadrature.dt", f"dt must be 2**-m for integer m >= 0, got {dt!r}")
    return int(round(m))


@dataclass(frozen=True)
class SemiflowPath:
    """Samples ``f^{j dt}`` for ``j = 0 .. n_cells-1`` covering [0, horizon).

    ``values`` has shape (M, n_cells, d); ``heights`` the initial heights u.
    Under the roof-1 suspension with the observable lifted from the base,
    ``f^s(x, u) = f(T^{floor(u+s)} x)``.
    """
    dt: float
    horizon: float
    values: np.ndarray
    heights: np.ndarray
    base_values: np.ndarray

    def integrate(self, a, b):
        """Exact integral of the piecewise-constant ``f^s`` over [a, b], per sample.

        With r = u + s, ``f^s = f^{floor r}``, so the integral is
        ``C(u + b) - C(u + a)`` for ``C(r) = sum_{k < floor r} f^k + frac(r) f^{floor r}``.
        """
        if not 0 <= a <= b <= self.horizon:
            raise ContractError(f"need 0 <= a <= b <= {self.horizon}, got [{a}, {b}]")
        return self._C(self.heights + b) - self._C(self.heights + a)

    def _C(self, r):
        M, nb, d = self.base_values.shape
        k = np.minimum(np.floor(r).astype(np.int64), nb - 1)
        cs = self._cumsum()
        rows = np.arange(M)
        return cs[rows, k] + (r - k)[:, None] * self.base_values[rows, k]

    def _cumsum(self):
        cs = self.__dict__.get("_cs")
        if cs is None:
            M, nb, d = self.base_values.shape
            cs = np.concatenate([np.zeros((M, 1, d)), np.cumsum(self.base_values, axis=1)], axis=1)
            object.__setattr__(self, "_cs", cs)
        return cs

    def integrate_grid(self, a, b):
        """Left-point rule on the dt grid (exact when the heights lie on the grid)."""
        if b <= a:
            return np.zeros((self.values.shape[0], self.values.shape[2]))
        ia, ib = a / self.dt, b / self.dt
        if ia != round(ia) or ib != round(ib):
            raise ContractError("integration limits must lie on the dt grid")
        ia, ib = int(round(ia)), int(round(ib))
        if ib > self.values.shape[1]:
            raise ContractError("integration limit beyond path horizon")
        return self.dt * _compensated_sum(self.values[:, ia:ib], axis=1)


def _compensated_sum(x, axis):
    # pairwise summation in numpy's sum already bounds error by O(log n) ulps
    return np.sum(x, axis=axis, dtype=np.float64)


def semiflow_path(spec, f, T_horizon, dt, n_samples, stream, workers=1,
                  memory_budget=DEFAULT_MEMORY_BUDGET):
    """Sampled paths of ``f^s`` on [0, T_horizon] for ``n_samples`` initial points."""
    if spec.kind != "suspension":
        raise ContractError("semiflow_path needs a suspension system")
    check_dyadic(dt)
    if T_horizon < 1:
        raise ContractError("T_horizon must be >= 1")
    n_cells = int(np.ceil(T_horizon / dt))
    n_base = int(np.ceil(T_horizon)) + 1
    _check_budget(n_samples * (n_cells + n_base) * f.dim * 8, memory_budget)

    def job(c, m):
        state, u = chunk_state(spec, stream, c, m, n_base)
        base_vals = block_values(spec, f, state, n_base)
        return base_vals, u
    parts = map_chunks(job, n_samples, stream, workers)
    base_vals = np.concatenate([p[0] for p in parts], axis=0)
    heights = np.concatenate([p[1] for p in parts], axis=0)
    s = np.arange(n_cells) * dt
    idx = np.floor(heights[:, None] + s[None, :]).astype(np.int64)
    values = np.take_along_axis(base_vals, idx[..., None], axis=1)
    return SemiflowPath(dt, float(T_horizon), values, heights, base_vals)
