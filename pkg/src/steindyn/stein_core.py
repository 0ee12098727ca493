"""Numerical solutions of the normal Stein equations and other Stein operators.

1D: ``sigma^2 A'(w) - w A(w) = h(w) - Phi(h)`` with the upper-tail integral
solution, written for ``w >= 0`` as

    A(w) = sigma^-2 int_0^inf exp(-(w r + r^2/2)/sigma^2) (Phi(h) - h(w + r)) dr

and mirrored for ``w < 0``. ``A'`` comes from an independent quadrature of
the differentiated integrand (it uses ``h'``), so the residual of the Stein
equation is a genuine accuracy check; ``A''`` comes from the differentiated
equation.

Multivariate: the smoothing representation with ``u = e^{-s}``,

    A(w)    = -int_0^1 (E h(u w + sqrt(1-u^2) Z) - Phi(h)) du / u
    dA(w)   = -int_0^1     E Dh (u w + sqrt(1-u^2) Z) du
    D^k A(w) = -int_0^1 u^{k-1} E D^k h(...) du,

inner expectations by tensor Gauss-Hermite after Cholesky whitening.
"""
import csv
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from .errors import ContractError, NumericalError, ResourceError

_GL_ORDER = 20


def composite_gl(fun, a, b, panels, order=_GL_ORDER):
    """Composite Gauss-Legendre integral of ``fun`` over rows ``[a_i, b_i]``.

    ``fun`` maps an (n, q) array of nodes to (n, q[, ...]) values; ``a``, ``b``
    are (n,) arrays (or scalars) of limits.
    """
    x, w = leggauss(order)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    t = (np.arange(panels)[:, None] + (x[None, :] + 1) / 2).ravel() / panels
    wt = np.tile(w / (2 * panels), panels)
    width = (b - a)[:, None]
    nodes = a[:, None] + width * t[None, :]
    vals = fun(nodes)
    extra = vals.ndim - 2
    wts = (width * wt[None, :]).reshape(width.shape[0], -1, *([1] * extra))
    return np.sum(vals * wts, axis=1)


def adaptive_gl(fun, a, b, tol, panels=4, max_panels=4096, order=_GL_ORDER):
    """Double the panel count until successive composite rules agree to ``tol``
    (absolute, or relative to the largest value). Returns (value, error)."""
    prev = composite_gl(fun, a, b, panels, order)
    while True:
        panels *= 2
        cur = composite_gl(fun, a, b, panels, order)
        err = float(np.max(np.abs(cur - prev))) if cur.size else 0.0
        scale = max(1.0, float(np.max(np.abs(cur))) if cur.size else 0.0)
        if err <= tol * scale:
            return cur, err
        if panels >= max_panels:
            raise NumericalError("composite quadrature did not converge", achieved=err)
        prev = cur


# ----------------------------------------------------------------- 1D test functions

@dataclass(frozen=True)
class TestFunction1D:
    """Absolutely continuous ``h`` with derivative ``dh`` and ``|h'|_inf``.

    ``kinks`` lists points where ``h'`` is not differentiable; quadratures
    split there.
    """
    name: str
    f: Callable
    df: Callable
    lip: float
    kinks: tuple = ()

    def __call__(self, w):
        return self.f(np.asarray(w, dtype=float))

    def scaled(self, s):
        """``w -> h(s w)``."""
        f, df = self.f, self.df
        return TestFunction1D(f"{self.name}(x{s:g})", lambda w: f(s * w),
                              lambda w: s * df(s * w), abs(s) * self.lip,
                              tuple(k / s for k in self.kinks))

    def reflected(self):
        f, df = self.f, self.df
        return TestFunction1D(self.name + "(-w)", lambda w: f(-w), lambda w: -df(-w),
                              self.lip, tuple(sorted(-k for k in self.kinks)))


def huber(delta=1.0):
    """Huber-smoothed |w|: quadratic on |w| <= delta, then linear; |h'| <= 1."""
    def f(w):
        a = np.abs(w)
        return np.where(a <= delta, 0.5 * w * w / delta, a - 0.5 * delta)

    def df(w):
        return np.clip(w / delta, -1.0, 1.0)
    return TestFunction1D(f"huber{delta:g}", f, df, 1.0, (-delta, delta))


def panel_1d():
    """1-Lipschitz test functions used by the residual and bound suites."""
    return [
        TestFunction1D("linear", lambda w: w, lambda w: np.ones_like(w), 1.0),
        TestFunction1D("sin", np.sin, np.cos, 1.0),
        TestFunction1D("tanh", np.tanh, lambda w: 1.0 / np.cosh(w) ** 2, 1.0),
        TestFunction1D("softabs", lambda w: np.sqrt(1.0 + w * w) - 1.0,
                       lambda w: w / np.sqrt(1.0 + w * w), 1.0),
        huber(1.0),
    ]


def normal_expectation_1d(h, sigma2, tol=1e-13):
    """``Phi_{sigma^2}(h)`` by adaptive quadrature split at kinks."""
    s = math.sqrt(sigma2)
    pts = sorted(set([-12 * s, 12 * s, 0.0] + [k for k in h.kinks if abs(k) < 12 * s]))

    def g(x):
        return float(h.f(np.asarray(x))) * math.exp(-0.5 * x * x / sigma2)
    total, err = 0.0, 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        v, e = integrate.quad(g, lo, hi, epsabs=tol, epsrel=tol, limit=200)
        total += v
        err += e
    return total / math.sqrt(2 * math.pi * sigma2), err


# ----------------------------------------------------------------- 1D solver

class SteinSolution1D:
    """Solution of the univariate Stein equation for test function ``h``."""

    def __init__(self, h, sigma2, tol=1e-12):
        if sigma2 <= 0:
            raise ContractError("sigma2 must be positive")
        self.h = h
        self.sigma2 = float(sigma2)
        self.tol = tol
        self.phi, self.phi_err = normal_expectation_1d(h, sigma2)
        self._mirror = h.reflected()
        self.quad_error = 0.0

    def _half(self, h, w):
        """(A, A') at w >= 0 for the function h."""
        s2 = self.sigma2
        R = 12.5 * math.sqrt(s2)
        w = np.asarray(w, dtype=float)
        n = w.shape[0]
        cuts = [np.clip(k - w, 0.0, R) for k in h.kinks]
        bounds = np.sort(np.stack([np.zeros(n)] + cuts + [np.full(n, R)], axis=1), axis=1)
        phi = self.phi
        A = np.zeros(n)
        dA = np.zeros(n)
        for j in range(bounds.shape[1] - 1):
            a, b = bounds[:, j], bounds[:, j + 1]

            def integrand(r):
                x = w[:, None] + r
                e = np.exp(-(w[:, None] * r + 0.5 * r * r) / s2)
                g = phi - h.f(x)
                return np.stack([e * g, e * (-(r / s2) * g - h.df(x))], axis=-1)
            val, err = adaptive_gl(integrand, a, b, self.tol)
            self.quad_error = max(self.quad_error, err / s2)
            A += val[:, 0]
            dA += val[:, 1]
        return A / s2, dA / s2

    def evaluate(self, w):
        """``(A, A', A'')`` at the points ``w``."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        A = np.empty_like(w)
        dA = np.empty_like(w)
        pos = w >= 0
        if pos.any():
            A[pos], dA[pos] = self._half(self.h, w[pos])
        if (~pos).any():
            a, da = self._half(self._mirror, -w[~pos])
            A[~pos], dA[~pos] = -a, da
        d2A = (A + w * dA + self.h.df(w)) / self.sigma2
        return A, dA, d2A

    def A(self, w):
        return self.evaluate(w)[0]

    def dA(self, w):
        return self.evaluate(w)[1]

    def d2A(self, w):
        return self.evaluate(w)[2]


def solve_1d(h, sigma2, tol=1e-12):
    return SteinSolution1D(h, sigma2, tol)


def residual_1d(sol, w):
    """``sigma^2 A'(w) - w A(w) - (h(w) - Phi(h))``."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    A, dA, _ = sol.evaluate(w)
    return sol.sigma2 * dA - w * A - (sol.h.f(w) - sol.phi)


def lemma32_bounds(sigma2, lip=1.0):
    """Sup-norm bounds on (A, A', A'')."""
    s = math.sqrt(sigma2)
    return 2 * lip, math.sqrt(2 / math.pi) / s * lip, 2 / sigma2 * lip


# ----------------------------------------------------------------- multivariate

@dataclass(frozen=True)
class TestFunctionMV:
    """``h: R^d -> R`` with derivatives up to order 3.

    Callables act on (..., d) arrays and return (...), (..., d), (..., d, d)
    and (..., d, d, d). ``norms[k]`` is the max over order-k partials of the
    sup norm; ``partial_sup(t)`` the sup norm of one partial (``inf`` when
    unbounded).
    """
    name: str
    dim: int
    f: Callable
    grad: Callable
    hess: Callable
    third: Callable
    norms: dict
    partial_sup: Callable

    def __call__(self, w):
        return self.f(np.asarray(w, dtype=float))


def linear_h(v):
    v = np.asarray(v, dtype=float)
    d = v.shape[0]

    def partial(t):
        return abs(v[int(np.argmax(t))]) if sum(t) == 1 else 0.0
    return TestFunctionMV("linear[" + ",".join(f"{x:.3g}" for x in v) + "]", d, lambda w: w @ v,
                          lambda w: np.broadcast_to(v, np.shape(w)).copy(),
                          lambda w: np.zeros(np.shape(w) + (d,)),
                          lambda w: np.zeros(np.shape(w) + (d, d)),
                          {1: float(np.abs(v).max()), 2: 0.0, 3: 0.0}, partial)


def quadratic_h(M):
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    d = M.shape[0]

    def partial(t):
        k = sum(t)
        if k == 1:
            return math.inf
        if k == 2:
            idx = [i for i, ti in enumerate(t) for _ in range(ti)]
            return 2 * abs(M[idx[0], idx[1]])
        return 0.0
    return TestFunctionMV("quadratic", d, lambda w: np.einsum("...i,ij,...j->...", w, M, w),
                          lambda w: 2 * w @ M,
                          lambda w: np.broadcast_to(2 * M, np.shape(w) + (d,)).copy(),
                          lambda w: np.zeros(np.shape(w) + (d, d)),
                          {1: math.inf, 2: float(2 * np.abs(M).max()), 3: 0.0}, partial)


def trig_h(a, phase=0.0, amp=1.0):
    """``amp * cos(a . w + phase)``."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]

    def f(w):
        return amp * np.cos(w @ a + phase)

    def grad(w):
        return -amp * np.sin(w @ a + phase)[..., None] * a

    def hess(w):
        return -amp * np.cos(w @ a + phase)[..., None, None] * np.outer(a, a)

    def third(w):
        return amp * np.sin(w @ a + phase)[..., None, None, None] * np.einsum("i,j,k->ijk", a, a, a)

    def partial(t):
        return abs(amp) * float(np.prod(np.abs(a) ** np.asarray(t)))
    norms = {k: abs(amp) * float(np.abs(a).max()) ** k for k in (1, 2, 3)}
    return TestFunctionMV("trig[" + ",".join(f"{x:.3g}" for x in a) + "]", d, f, grad, hess, third, norms, partial)


def coordinate_h(name, i, d, g, sups):
    """``h(w) = g(w_i)`` for the tuple ``(g, g1, g2, g3)`` with sup norms ``sups[k]``."""
    g0, g1, g2, g3 = g

    def grad(w):
        out = np.zeros(np.shape(w))
        out[..., i] = g1(w[..., i])
        return out

    def hess(w):
        out = np.zeros(np.shape(w) + (d,))
        out[..., i, i] = g2(w[..., i])
        return out

    def third(w):
        out = np.zeros(np.shape(w) + (d, d))
        out[..., i, i, i] = g3(w[..., i])
        return out

    def partial(t):
        k = sum(t)
        return sups[k] if t[i] == k else 0.0
    return TestFunctionMV(name, d, lambda w: g0(w[..., i]), grad, hess, third,
                          {k: sups[k] for k in (1, 2, 3)}, partial)


def tanh_h(i, d, a=1.0):
    """Smoothed indicator ``tanh(a w_i)``; sups a, 4a^2/(3 sqrt 3), 2a^3."""
    def g1(x):
        return a / np.cosh(a * x) ** 2

    def g2(x):
        t = np.tanh(a * x)
        return -2 * a * a * t * (1 - t * t)

    def g3(x):
        t2 = np.tanh(a * x) ** 2
        return -2 * a ** 3 * (1 - t2) * (1 - 3 * t2)
    sups = {1: a, 2: 4 * a * a / (3 * math.sqrt(3)), 3: 2 * a ** 3}
    return coordinate_h(f"tanh[{i},{a:g}]", i, d, (lambda x: np.tanh(a * x), g1, g2, g3), sups)


def saturating_quadratic_h(i, d, c=1.0):
    """``c (1 - exp(-w_i^2 / (2c)))``: quadratic near 0, bounded by c."""
    def g0(x):
        return c * -np.expm1(-x * x / (2 * c))

    def g1(x):
        return x * np.exp(-x * x / (2 * c))

    def g2(x):
        return (1 - x * x / c) * np.exp(-x * x / (2 * c))

    def g3(x):
        return (x ** 3 / c - 3 * x) / c * np.exp(-x * x / (2 * c))
    # |g'''| peaks at x^2 = (3 - sqrt 6) c
    x3 = math.sqrt((3 - math.sqrt(6)) * c)
    sups = {1: math.sqrt(c) * math.exp(-0.5), 2: 1.0, 3: abs(float(g3(x3)))}
    return coordinate_h(f"satquad[{i},{c:g}]", i, d, (g0, g1, g2, g3), sups)


def multi_indices(d, k):
    return [t for t in product(range(k + 1), repeat=d) if sum(t) == k]


def _partial_index(t):
    return tuple(i for i, ti in enumerate(t) for _ in range(ti))


def gauss_hermite_rule(Sigma, order):
    """Nodes (G, d) and weights (G,) integrating against N(0, Sigma)."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = Sigma.shape[0]
    if d > 3:
        raise ResourceError("tensor Gauss-Hermite is limited to d <= 3")
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise ContractError("Sigma must be positive definite") from None
    x, w = hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    nodes = np.array(list(product(x, repeat=d)))
    weights = np.prod(np.array(list(product(w, repeat=d))), axis=1)
    return nodes @ L.T, weights


class SteinSolutionMV:
    """Smoothing-representation solution of the multivariate Stein equation."""

    def __init__(self, h, Sigma, gh_order=40, tol=1e-13, batch=8):
        Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        if not np.allclose(Sigma, Sigma.T):
            raise ContractError("Sigma must be symmetric")
        if Sigma.shape != (h.dim, h.dim):
            raise ContractError("Sigma shape does not match h")
        self.h = h
        self.Sigma = Sigma
        self.gh_order = gh_order
        self.z, self.wz = gauss_hermite_rule(Sigma, gh_order)
        self.phi = float(self.wz @ h.f(self.z))
        self.tol = tol
        self.batch = batch
        self.quad_error = 0.0

    def _expect(self, fn, u, W):
        """E fn(u W + sqrt(1-u^2) Z) for nodes u (n, q) and points W (n, d)."""
        c = np.sqrt(np.clip(1.0 - u * u, 0.0, None))
        pts = u[..., None, None] * W[:, None, None, :] + c[..., None, None] * self.z
        vals = fn(pts)
        return np.tensordot(vals, self.wz, axes=([2], [0])) if vals.ndim == 3 else \
            np.einsum("nqg...,g->nq...", vals, self.wz)

    def derivatives(self, W, order=2):
        """``(A, grad A, D^2 A[, D^3 A])`` at points ``W`` of shape (n, d)."""
        W = np.atleast_2d(np.asarray(W, dtype=float))
        n, d = W.shape
        outs = [np.empty(n), np.empty((n, d)), np.empty((n, d, d))]
        if order >= 3:
            outs.append(np.empty((n, d, d, d)))
        h = self.h
        for lo in range(0, n, self.batch):
            Wb = W[lo:lo + self.batch]
            nb = Wb.shape[0]
            sizes = [1, d, d * d, d ** 3][: order + 1]

            def integrand(u):
                parts = [((self._expect(h.f, u, Wb) - self.phi) / u)[..., None],
                         self._expect(h.grad, u, Wb)]
                if order >= 2:
                    parts.append((u[..., None, None] * self._expect(h.hess, u, Wb)).reshape(nb, -1, d * d))
                if order >= 3:
                    parts.append((u[..., None, None, None] ** 2 *
                                  self._expect(h.third, u, Wb)).reshape(nb, -1, d ** 3))
                return np.concatenate(parts, axis=-1)
            val, err = adaptive_gl(integrand, np.zeros(nb), np.ones(nb), self.tol, panels=1)
            self.quad_error = max(self.quad_error, err)
            val = -val
            off = 0
            for k, size in enumerate(sizes):
                block = val[:, off:off + size]
                outs[k][lo:lo + nb] = block.reshape((nb,) + (d,) * k) if k else block[:, 0]
                off += size
        return tuple(outs)

    def A(self, W):
        return self.derivatives(W, order=1)[0]


def solve_mv(h, Sigma, gh_order=40, tol=1e-13):
    return SteinSolutionMV(h, Sigma, gh_order=gh_order, tol=tol)


def residual_mv(sol, W):
    """``tr(Sigma D^2 A) - w . grad A - (h(w) - Phi(h))`` at points (n, d)."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    _, g, H = sol.derivatives(W, order=2)
    return (np.einsum("ij,nji->n", sol.Sigma, H) - np.einsum("ni,ni->n", W, g)
            - (sol.h.f(W) - sol.phi))


def lemma33_check(sol, W, slack=1e-8):
    """Grid max of each partial of A of order 1..3 against ``|partial h| / k``.

    Returns a list of (multi-index, max |partial A|, bound, ok); partials
    whose ``h`` counterpart is unbounded are skipped.
    """
    A, g, H, T = sol.derivatives(W, order=3)
    tensors = {1: g, 2: H, 3: T}
    rows = []
    for k in (1, 2, 3):
        for t in multi_indices(sol.h.dim, k):
            bound = sol.h.partial_sup(t)
            if not math.isfinite(bound):
                continue
            got = float(np.max(np.abs(tensors[k][(slice(None),) + _partial_index(t)])))
            rows.append((t, got, bound / k, got <= bound / k + slack))
    return rows


# ----------------------------------------------------------------- other targets

@dataclass(frozen=True)
class PanelFunction:
    """Function with two derivatives, used as the argument of Stein operators."""
    name: str
    f: Callable
    df: Callable
    d2f: Callable


def operator_panel():
    return [
        PanelFunction("zero", np.zeros_like, np.zeros_like, np.zeros_like),
        PanelFunction("sin", np.sin, np.cos, lambda w: -np.sin(w)),
        PanelFunction("cos", np.cos, lambda w: -np.sin(w), lambda w: -np.cos(w)),
        PanelFunction("tanh", np.tanh, lambda w: 1 / np.cosh(w) ** 2,
                      lambda w: -2 * np.tanh(w) / np.cosh(w) ** 2),
        PanelFunction("bump", lambda w: np.exp(-0.5 * (w - 1) ** 2),
                      lambda w: -(w - 1) * np.exp(-0.5 * (w - 1) ** 2),
                      lambda w: ((w - 1) ** 2 - 1) * np.exp(-0.5 * (w - 1) ** 2)),
        PanelFunction("lorentz", lambda w: 1 / (1 + w * w), lambda w: -2 * w / (1 + w * w) ** 2,
                      lambda w: (6 * w * w - 2) / (1 + w * w) ** 3),
    ]


@dataclass(frozen=True)
class TargetOperator:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.kind == "poisson" and not p.get("lam", 0) > 0:
            raise ContractError("poisson needs lam > 0")
        if self.kind == "binomial":
            if not (int(p.get("n", 0)) >= 1 and 0 < p.get("p", 0) < 1):
                raise ContractError("binomial needs n >= 1 and 0 < p < 1")
        if self.kind == "gamma" and not (p.get("r", 0) > 0 and p.get("lam", 0) > 0):
            raise ContractError("gamma needs r > 0 and lam > 0")
        if self.kind == "normal" and not p.get("sigma2", 1.0) > 0:
            raise ContractError("normal needs sigma2 > 0")
        if self.kind not in ("poisson", "exponential", "binomial", "gamma", "normal"):
            raise ContractError(f"unknown target {self.kind!r}")

    def sample(self, M, gen):
        p = self.params
        if self.kind == "poisson":
            return gen.poisson(p["lam"], M).astype(float)
        if self.kind == "exponential":
            return gen.exponential(1.0, M)
        if self.kind == "binomial":
            return gen.binomial(int(p["n"]), p["p"], M).astype(float)
        if self.kind == "gamma":
            return gen.gamma(p["r"], 1.0 / p["lam"], M)
        return gen.normal(0.0, math.sqrt(p.get("sigma2", 1.0)), M)


def poisson(lam):
    return TargetOperator("poisson", {"lam": float(lam)})


def exponential():
    return TargetOperator("exponential")


def binomial(n, p):
    return TargetOperator("binomial", {"n": int(n), "p": float(p)})


def gamma(r, lam):
    return TargetOperator("gamma", {"r": float(r), "lam": float(lam)})


def normal(sigma2=1.0):
    return TargetOperator("normal", {"sigma2": float(sigma2)})


def stein_operator_apply(target, A, w):
    """Apply the Stein operator of ``target`` to ``A`` at ``w``."""
    w = np.asarray(w, dtype=float)
    p = target.params
    if target.kind in ("poisson", "gamma") and np.any(w < 0):
        raise ContractError(f"{target.kind} operator is defined for w >= 0")
    if target.kind == "poisson":
        return p["lam"] * A.f(w + 1) - w * A.f(w)
    if target.kind == "exponential":
        return w * A.df(w) - (w - 1) * A.f(w)
    if target.kind == "binomial":
        return p["p"] * (p["n"] - w) * A.f(w + 1) - (1 - p["p"]) * w * A.f(w)
    if target.kind == "gamma":
        return w * A.d2f(w) + (p["r"] - p["lam"] * w) * A.df(w)
    return p.get("sigma2", 1.0) * A.df(w) - w * A.f(w)


@dataclass(frozen=True)
class CharacterizationRow:
    name: str
    mean: float
    se: float

    @property
    def rejects(self):
        return abs(self.mean) > 4 * self.se


def characterization_test(target, M, panel, stream, samples=None):
    """Mean and SE of the Stein operator over samples (default: drawn from ``target``)."""
    if samples is None:
        samples = target.sample(M, stream.generator())
    rows = []
    for A in panel:
        v = stein_operator_apply(target, A, samples)
        n = v.shape[0]
        rows.append(CharacterizationRow(A.name, float(v.mean()),
                                        float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0))
    return rows


def write_residual_csv(path, w, residual):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["w", "residual"])
        for a, r in zip(np.ravel(w), np.ravel(residual)):
            wr.writerow([f"{a:.17g}", f"{r:.17g}"])
