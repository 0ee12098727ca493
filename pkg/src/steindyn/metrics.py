"""Empirical distances between a sample pool and a centered normal law."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ContractError
from .rng import Stream
from .stein_core import (gauss_hermite_rule, linear_h, saturating_quadratic_h, tanh_h,
                         trig_h)

MIN_POOL = 1000
N_BOOT = 200


@dataclass(frozen=True)
class SamplePool:
    samples: np.ndarray  # (M, d)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < MIN_POOL:
            raise ContractError(f"pool needs M >= {MIN_POOL}, got {s.shape[0]}")
        if not np.all(np.isfinite(s)):
            raise ContractError("pool contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def M(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]


def _column(pool):
    x = pool.samples if isinstance(pool, SamplePool) else np.asarray(pool, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ContractError("one-dimensional metric needs d = 1")
        x = x[:, 0]
    return x


def normal_quantiles(M, sigma2):
    """Quantiles of N(0, sigma2) at the midpoints (i - 1/2)/M."""
    return math.sqrt(sigma2) * ndtri((np.arange(M) + 0.5) / M)


@dataclass(frozen=True)
class Estimate:
    estimate: float
    ci_lo: float
    ci_hi: float
    se: float = float("nan")
    degenerate: bool = False


def _w1_sorted(xs, q):
    return float(np.mean(np.abs(xs - q)))


def wasserstein_1d(pool, sigma2, stream=None, n_boot=N_BOOT, level=0.95):
    """Quantile-coupling W1 estimate against N(0, sigma2) with a bootstrap CI."""
    if sigma2 <= 0:
        raise ContractError(f"sigma2 must be positive, got {sigma2}")
    x = _column(pool)
    M = x.shape[0]
    q = normal_quantiles(M, sigma2)
    est = _w1_sorted(np.sort(x), q)
    degenerate = bool(np.all(x == x[0]))
    if n_boot <= 0:
        return Estimate(est, est, est, degenerate=degenerate)
    gen = (stream or Stream(0)).split("bootstrap").generator()
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = _w1_sorted(np.sort(x[gen.integers(0, M, M)]), q)
    a = (1.0 - level) / 2
    lo, hi = np.quantile(boots, [a, 1 - a])
    return Estimate(est, float(lo), float(hi), float(boots.std(ddof=1)), degenerate)


def kolmogorov_1d(pool, sigma2):
    """sup_x |F_M(x) - Phi_sigma(x)| with both one-sided limits at each jump."""
    if sigma2 <= 0:
        raise ContractError(f"sigma2 must be positive, got {sigma2}")
    x = np.sort(_column(pool))
    M = x.shape[0]
    F = ndtr(x / math.sqrt(sigma2))
    # ties: the empirical CDF jumps once per distinct value
    hi = np.searchsorted(x, x, side="right") / M
    lo = np.searchsorted(x, x, side="left") / M
    return float(max(np.max(hi - F), np.max(F - lo)))


# ------------------------------------------------------------------- h-panel

@dataclass(frozen=True)
class HPanel:
    members: list

    @property
    def dim(self):
        return self.members[0].dim

    def verify_norms(self, radius=8.0, n=2001, slack=1e-9):
        """Grid check of the stored sup norms along each coordinate axis and the diagonal."""
        d = self.dim
        t = np.linspace(-radius, radius, n)
        lines = [np.outer(t, e) for e in np.eye(d)] + [np.outer(t, np.ones(d) / math.sqrt(d))]
        out = []
        for h in self.members:
            ok = True
            for w in lines:
                for k, fn in ((1, h.grad), (2, h.hess), (3, h.third)):
                    got = float(np.max(np.abs(fn(w))))
                    ok &= got <= h.norms[k] + slack
            out.append((h.name, ok))
        return out


def default_panel(d, stream=None):
    """Linear probes, smoothed indicators, saturating quadratics and trig bumps."""
    gen = (stream or Stream(0)).split("panel").generator()
    members = []
    for _ in range(3):
        v = gen.standard_normal(d)
        members.append(linear_h(v / np.linalg.norm(v)))
    for i in range(d):
        members.append(tanh_h(i, d, 1.0))
        members.append(saturating_quadratic_h(i, d, 1.0))
    members.append(trig_h(np.ones(d)))
    members.append(trig_h(np.arange(1, d + 1, dtype=float) / d, phase=0.5 * math.pi))
    return HPanel(members)


@dataclass(frozen=True)
class SmoothRow:
    name: str
    mean: float
    phi: float
    gap: float
    se: float


@dataclass(frozen=True)
class SmoothMetric:
    rows: list

    @property
    def max_gap(self):
        return max(r.gap for r in self.rows)

    def argmax(self):
        return max(self.rows, key=lambda r: r.gap)


def smooth_metric(pool, Sigma, panel, gh_order=40):
    """Per-member |mean h(W) - Phi_Sigma(h)| with the sample standard error."""
    x = pool.samples if isinstance(pool, SamplePool) else np.asarray(pool, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if Sigma.shape != (x.shape[1], x.shape[1]):
        raise ContractError("Sigma shape does not match pool dimension")
    nodes, weights = gauss_hermite_rule(Sigma, gh_order)
    M = x.shape[0]
    rows = []
    for h in panel.members:
        vals = h.f(x)
        phi = float(weights @ h.f(nodes))
        m = float(np.mean(vals))
        rows.append(SmoothRow(h.name, m, phi, abs(m - phi), float(np.std(vals, ddof=1) / math.sqrt(M))))
    return SmoothMetric(rows)


def write_metrics_csv(path, rows):
    """rows: iterable of (N, M, metric, estimate, ci_lo, ci_hi)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "M", "metric", "estimate", "ci_lo", "ci_hi"])
        for N, M, metric, est, lo, hi in rows:
            w.writerow([N, M, metric, format(est, ".17g"), format(lo, ".17g"), format(hi, ".17g")])
