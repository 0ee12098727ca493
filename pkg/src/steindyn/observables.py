"""Vector-valued observables with the regularity metadata the bounds consume.

An observable acts on phase-space coordinates given as an array of shape
``(..., p)`` (``p = 1`` for the doubling map, ``p = 2`` on the torus) and
returns shape ``(..., d)``. Observables built from trigonometric and
polynomial terms also carry a flat term table that the compiled orbit
kernels evaluate directly.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ContractError, NumericalError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TermTable:
    """Flat term representation: trig terms, monomials and a constant offset."""
    trig_comp: np.ndarray   # (T,) int64
    trig_freq: np.ndarray   # (T, 2) int64, second column unused when p = 1
    trig_amp: np.ndarray    # (T,) float64
    trig_sin: np.ndarray    # (T,) int64, 0 for cos and 1 for sin
    poly_comp: np.ndarray   # (P,) int64
    poly_coord: np.ndarray  # (P,) int64
    poly_pow: np.ndarray    # (P,) int64
    poly_coef: np.ndarray   # (P,) float64
    const: np.ndarray       # (d,) float64

    def arrays(self):
        return (self.trig_comp, self.trig_freq, self.trig_amp, self.trig_sin,
                self.poly_comp, self.poly_coord, self.poly_pow, self.poly_coef,
                self.const)

    def evaluate(self, coords):
        coords = np.asarray(coords, dtype=float)
        out = np.broadcast_to(self.const, coords.shape[:-1] + self.const.shape).copy()
        p = coords.shape[-1]
        for c, fr, a, s in zip(self.trig_comp, self.trig_freq, self.trig_amp, self.trig_sin):
            arg = TWO_PI * sum(int(fr[i]) * coords[..., i] for i in range(p))
            out[..., c] += a * (np.sin(arg) if s else np.cos(arg))
        for c, i, k, a in zip(self.poly_comp, self.poly_coord, self.poly_pow, self.poly_coef):
            out[..., c] += a * coords[..., i] ** k
        return out

    def shifted(self, shift):
        return replace(self, const=self.const - np.asarray(shift, dtype=float))

    @property
    def is_zero(self):
        return (not np.any(self.trig_amp) and not np.any(self.poly_coef)
                and not np.any(self.const))


def _empty_table(d):
    i = np.zeros(0, dtype=np.int64)
    return TermTable(i, np.zeros((0, 2), dtype=np.int64), np.zeros(0), i.copy(),
                     i.copy(), i.copy(), i.copy(), np.zeros(0), np.zeros(d))


@dataclass(frozen=True)
class Observable:
    """Bounded observable ``f: X -> R^d``.

    ``sup_norm`` is max over components of the per-component sup norm (an
    upper bound); ``lipschitz`` is an upper Lipschitz bound. ``holder``
    optionally carries dynamical Hölder data ``(H, theta)``; nothing in
    the bounds consumes it.
    """
    dim: int
    phase_dim: int
    eval: Callable
    sup_norm: float
    lipschitz: float
    mean_zero: bool
    terms: Optional[TermTable] = None
    analytic_moments: Optional[dict] = None
    holder: Optional[tuple] = None
    label: str = ""
    spec: Optional[dict] = field(default=None, compare=False)

    def __call__(self, point):
        """Evaluate at a phase point object or a coordinate array."""
        if hasattr(point, "coords"):
            return self.eval(np.asarray(point.coords(), dtype=float))
        coords = np.asarray(point, dtype=float)
        if self.phase_dim == 1 and (coords.ndim == 0 or coords.shape[-1] != 1):
            coords = coords[..., None]
        return self.eval(coords)

    @property
    def is_zero(self):
        return self.terms is not None and self.terms.is_zero


def _from_table(table, phase_dim, sup, lip, mean_zero, label, spec=None, **kw):
    return Observable(dim=len(table.const), phase_dim=phase_dim, eval=table.evaluate,
                      sup_norm=float(sup), lipschitz=float(lip), mean_zero=mean_zero,
                      terms=table, label=label, spec=spec, **kw)


def trig_observable(terms, dim=None, phase_dim=None):
    """Trigonometric polynomial observable.

    ``terms`` is a list of records ``{component, freq, amp[, kind]}`` with
    ``kind`` in {"cos", "sin"} (default cos) and ``freq`` an integer vector
    of length ``phase_dim``. An empty list gives the zero observable.
    """
    terms = [dict(t) for t in terms]
    if phase_dim is None:
        phase_dim = max((len(np.atleast_1d(t["freq"])) for t in terms), default=1)
    if dim is None:
        dim = max((int(t.get("component", 0)) for t in terms), default=0) + 1
    if phase_dim not in (1, 2):
        raise ContractError("phase_dim must be 1 or 2")
    comp, freq, amp, sin = [], [], [], []
    for t in terms:
        fr = np.atleast_1d(np.asarray(t["freq"]))
        if fr.shape != (phase_dim,) or np.any(fr != np.round(fr)):
            raise ContractError(f"frequency {t['freq']!r} must be an integer vector of length {phase_dim}")
        if not np.any(fr):
            raise ContractError("zero-frequency term would break the mean-zero property")
        kind = t.get("kind", "cos")
        if kind not in ("cos", "sin"):
            raise ContractError(f"unknown trig kind {kind!r}")
        c = int(t.get("component", 0))
        if not 0 <= c < dim:
            raise ContractError(f"component {c} out of range for dim {dim}")
        comp.append(c)
        freq.append(list(fr.astype(np.int64)) + [0] * (2 - phase_dim))
        amp.append(float(t["amp"]))
        sin.append(int(kind == "sin"))
    table = replace(_empty_table(dim),
                    trig_comp=np.asarray(comp, dtype=np.int64),
                    trig_freq=np.asarray(freq, dtype=np.int64).reshape(-1, 2),
                    trig_amp=np.asarray(amp, dtype=float),
                    trig_sin=np.asarray(sin, dtype=np.int64))
    sup = np.zeros(dim)
    lip = np.zeros(dim)
    for c, fr, a in zip(comp, freq, amp):
        sup[c] += abs(a)
        lip[c] += TWO_PI * abs(a) * float(np.hypot(*fr))
    spec = {"kind": "trig", "terms": [
        {"component": int(c), "freq": [int(v) for v in fr[:phase_dim]], "amp": a,
         "kind": "sin" if s else "cos"} for c, fr, a, s in zip(comp, freq, amp, sin)]}
    return _from_table(table, phase_dim, sup.max(), lip.max(), True,
                       label="trig", spec=spec)


def polynomial_observable(coeffs, dim=1):
    """Polynomial in the doubling-map coordinate: ``coeffs[c][k]`` multiplies x**k
    in component c (a flat list means ``dim = 1``)."""
    if coeffs and np.ndim(coeffs[0]) == 0:
        coeffs = [coeffs]
    if len(coeffs) != dim:
        dim = len(coeffs)
    table = _empty_table(dim)
    pc, pk, pa, const = [], [], [], np.zeros(dim)
    sup = np.zeros(dim)
    lip = np.zeros(dim)
    means = np.zeros(dim)
    for c, row in enumerate(coeffs):
        for k, a in enumerate(row):
            a = float(a)
            if a == 0.0:
                continue
            if k == 0:
                const[c] += a
            else:
                pc.append(c)
                pk.append(k)
                pa.append(a)
                lip[c] += k * abs(a)
            sup[c] += abs(a)
            means[c] += a / (k + 1)
    table = replace(table, poly_comp=np.asarray(pc, dtype=np.int64),
                    poly_coord=np.zeros(len(pc), dtype=np.int64),
                    poly_pow=np.asarray(pk, dtype=np.int64),
                    poly_coef=np.asarray(pa, dtype=float), const=const)
    spec = {"kind": "poly", "coeffs": [[float(a) for a in row] for row in coeffs]}
    return _from_table(table, 1, sup.max(), lip.max(), bool(np.all(np.abs(means) < 1e-15)),
                       label="poly", spec=spec)


def zero_observable(dim=1, phase_dim=1):
    return _from_table(_empty_table(dim), phase_dim, 0.0, 0.0, True, label="zero",
                       spec={"kind": "trig", "terms": []})


def custom_observable(fn, dim, phase_dim, sup_norm, lipschitz, mean_zero=False, label="custom"):
    """Wrap a vectorized callable ``coords (..., p) -> (..., d)``."""
    return Observable(dim=dim, phase_dim=phase_dim, eval=fn, sup_norm=float(sup_norm),
                      lipschitz=float(lipschitz), mean_zero=mean_zero, label=label)


def gauss_legendre_mean(fn, phase_dim, panels, order=20):
    """Mean of ``fn`` over [0,1]^p by a composite tensor Gauss-Legendre rule."""
    x, w = leggauss(order)
    edges = np.arange(panels) / panels
    nodes = (edges[:, None] + (x[None, :] + 1) / (2 * panels)).ravel()
    weights = np.tile(w / (2 * panels), panels)
    if phase_dim == 1:
        return np.tensordot(weights, fn(nodes[:, None]), axes=(0, 0))
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    vals = fn(np.stack([X, Y], axis=-1))
    return np.einsum("i,j,ij...->...", weights, weights, vals)


def mean(f, tol=1e-10, panels=8, max_panels=1024):
    """Integral of ``f`` against Lebesgue measure, refined until two
    successive composite rules agree to ``tol``."""
    prev = gauss_legendre_mean(f.eval, f.phase_dim, panels)
    while panels < max_panels:
        panels *= 2
        cur = gauss_legendre_mean(f.eval, f.phase_dim, panels)
        err = float(np.max(np.abs(cur - prev)))
        if err <= tol:
            return np.asarray(cur, dtype=float)
        prev = cur
    raise NumericalError("mean quadrature did not converge", achieved=err)


def center(f, tol=1e-10):
    """Return ``f - mean(f)`` flagged mean-zero."""
    shift = mean(f, tol=tol)
    if f.terms is not None:
        table = f.terms.shifted(shift)
        ev = table.evaluate
    else:
        table = None
        base = f.eval

        def ev(coords):
            return base(coords) - shift
    sup = f.sup_norm + float(np.max(np.abs(shift)))
    return replace(f, eval=ev, terms=table, sup_norm=sup, mean_zero=True,
                   label=f.label + "-centered",
                   spec=None if f.spec is None else {**f.spec, "center": True})


def from_spec(spec):
    """Build an observable from its config dictionary."""
    kind = spec.get("kind", "trig")
    if kind == "trig":
        f = trig_observable(spec.get("terms", []), dim=spec.get("dim"),
                            phase_dim=spec.get("phase_dim"))
    elif kind == "poly":
        f = polynomial_observable(spec["coeffs"])
    else:
        raise ContractError(f"unknown observable kind {kind!r}")
    if spec.get("center"):
        f = center(f)
    return f


def sawtooth():
    """``x - 1/2`` on the circle: Lipschitz constant 1, sup norm 1/2.

    Pair correlations under doubling are ``2**-k / 12``.
    """
    f = center(polynomial_observable([0.0, 1.0]))
    moments = {"pair": lambda k: 2.0 ** -k / 12.0}
    return replace(f, sup_norm=0.5, analytic_moments=moments, label="sawtooth",
                   spec={"kind": "poly", "coeffs": [[0.0, 1.0]], "center": True})
