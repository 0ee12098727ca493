"""Scaled Birkhoff sums, gapped sums and their continuous-time versions."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class GapWindow:
    N: int
    K: int
    n: int

    @property
    def lo(self):
        return max(0, self.n - self.K)

    @property
    def hi(self):
        """Inclusive upper end."""
        return min(self.N - 1, self.n + self.K)

    @property
    def indices(self):
        return range(self.lo, self.hi + 1)

    def __len__(self):
        return self.hi - self.lo + 1


def window(N, K, n):
    """The set ``[n]_K = {k in [0, N-1] : |k - n| <= K}``."""
    if not (0 <= K < N and 0 <= n < N):
        raise ContractError(f"need 0 <= K < N and 0 <= n < N, got N={N}, K={K}, n={n}")
    return GapWindow(int(N), int(K), int(n))


@dataclass(frozen=True)
class GappedSums:
    W: np.ndarray
    Wn: np.ndarray
    Wn_minus: np.ndarray
    Wn_plus: np.ndarray


def _fsum(x):
    # exactly rounded column sums
    x = np.asarray(x, dtype=float)
    return np.array([math.fsum(col) for col in x.reshape(x.shape[0], -1).T]).reshape(x.shape[1:])


def gapped_sums(orbit, win):
    """Gapped sums of one orbit ``(f^0, ..., f^{N-1})`` (shape (N,) or (N, d))."""
    orbit = np.asarray(orbit, dtype=float)
    if orbit.ndim == 1:
        orbit = orbit[:, None]
    if orbit.shape[0] != win.N:
        raise ContractError(f"orbit length {orbit.shape[0]} != N = {win.N}")
    scale = 1.0 / math.sqrt(win.N)
    W = _fsum(orbit) * scale
    minus = _fsum(orbit[:win.lo]) * scale if win.lo > 0 else np.zeros(orbit.shape[1])
    plus = _fsum(orbit[win.hi + 1:]) * scale if win.hi + 1 < win.N else np.zeros(orbit.shape[1])
    return GappedSums(W=W, Wn=minus + plus, Wn_minus=minus, Wn_plus=plus)


def gapped_sums_batch(values, N, K, n):
    """Vectorized gapped sums over a pool of orbits ``values`` (M, >=N, d).

    Returns arrays of shape (M, d) for W, Wn_minus, Wn_plus.
    """
    win = window(N, K, n)
    v = values[:, :N]
    scale = 1.0 / math.sqrt(N)
    minus = v[:, :win.lo].sum(axis=1) * scale
    plus = v[:, win.hi + 1:].sum(axis=1) * scale
    W = v.sum(axis=1) * scale
    return W, minus, plus


def a_factor(T):
    """``a(T) = sqrt(1 - (T - floor T)/T)``."""
    return math.sqrt(1.0 - (T - math.floor(T)) / T)


def continuous_sums(path, T, K, t):
    """``(V, V^t)`` per sample of a ``SemiflowPath``.

    ``V = T^{-1/2} int_0^T f^s ds`` and ``V^t`` removes the window
    ``[floor t - K, floor t + K + 1]`` from ``[0, floor T]`` with the
    normalization ``floor(T)^{-1/2}``.
    """
    if not (1 <= T and 0 < K < T):
        raise ContractError(f"need T >= 1 and 0 < K < T, got T={T}, K={K}")
    NT = math.floor(T)
    if not 0 <= t < NT:
        raise ContractError(f"need 0 <= t < floor(T) = {NT}, got t={t}")
    n = math.floor(t)
    V = path.integrate(0.0, T) / math.sqrt(T)
    left = path.integrate(0.0, max(0, n - K))
    right = path.integrate(min(NT, n + K + 1), NT)
    Vt = (left + right) / math.sqrt(NT)
    return V, Vt


def flow_values(path, t):
    """Samples of ``f^t`` (M, d): the base value at index floor(u + t)."""
    if not 0 <= t <= path.horizon:
        raise ContractError(f"t = {t} outside [0, {path.horizon}]")
    k = np.floor(path.heights + t).astype(np.int64)
    return path.base_values[np.arange(k.size), k]


def time_one_values(path, n):
    """Samples of ``F^n = int_n^{n+1} f^s ds`` (M, d)."""
    return path.integrate(float(n), float(n + 1))
