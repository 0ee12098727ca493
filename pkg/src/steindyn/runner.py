"""Experiment pipeline: simulate, estimate correlations, bound, measure, fit."""
import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import bounds as B
from . import correlations as C
from . import metrics, scheme, stein_core, systems
from .errors import ContractError, FitError, NumericalError
from .rng import Stream

log = logging.getLogger("steindyn")


def fmt(x):
    return format(float(x), ".17g")


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


# ------------------------------------------------------------------ rate fits

@dataclass(frozen=True)
class RateFit:
    model: str
    parameter: float  # beta for pure_power, c for log_over_sqrt
    residual: float   # RMS residual in the fitted space
    r2: float
    n_points: int


def fit_rate(N, dist, min_points=4):
    """Fit ``d ~ N^-beta`` (log-log) and ``d ~ c log N / sqrt N`` (least squares on c)."""
    N = np.asarray(N, dtype=float)
    dist = np.asarray(dist, dtype=float)
    keep = dist > 0
    if not keep.all():
        log.warning("dropping %d non-positive distances from the rate fit", int((~keep).sum()))
    N, dist = N[keep], dist[keep]
    if N.size < min_points:
        raise FitError(f"rate fit needs >= {min_points} positive points, got {N.size}")

    def r2(y, yhat):
        ss = float(np.sum((y - y.mean()) ** 2))
        return 1.0 if ss == 0 else float(min(1.0, max(0.0, 1 - np.sum((y - yhat) ** 2) / ss)))

    x, y = np.log(N), np.log(dist)
    slope, icpt = np.polyfit(x, y, 1)
    yhat = slope * x + icpt
    power = RateFit("pure_power", float(-slope), float(np.sqrt(np.mean((y - yhat) ** 2))),
                    r2(y, yhat), int(N.size))
    g = np.log(N) / np.sqrt(N)
    c = float(g @ dist / (g @ g))
    los = RateFit("log_over_sqrt", c, float(np.sqrt(np.mean((dist - c * g) ** 2))),
                  r2(dist, c * g), int(N.size))
    return {"pure_power": power, "log_over_sqrt": los}


# ------------------------------------------------------------------ pieces

def _stream(cfg):
    return Stream(cfg.seed)


def _profile(cfg, spec, f, workers):
    M = cfg.profile_M or cfg.M
    return C.estimate_profile(spec, f, M, _stream(cfg).split("profile"), k_max=cfg.k_max,
                              fourth_max=cfg.fourth_max, safety=cfg.safety, workers=workers)


def _sigma(cfg, profile):
    if cfg.sigma is not None:
        return np.asarray(cfg.sigma, dtype=float)
    est = C.sigma_matrix(profile, tol=cfg.quadrature.get("tol", 1e-8))
    if est.pd_status != "positive-definite":
        raise NumericalError(f"estimated limit covariance is {est.pd_status}")
    return est.sigma


def _K(cfg, inputs, N, kind):
    if cfg.K_policy == "fixed":
        return cfg.K
    if cfg.K_policy == "corollary":
        return min(B.corollary_K(N, inputs.lam), N - 1)
    return B.optimize_K(inputs, N, kind)[0]


def _rho_tilde(cfg, spec, f, profile, panel, workers):
    """(C~, lam~, source) for the gap term."""
    if spec.kind == "doubling" and f.dim == 1:
        return f.lipschitz * (0.5 + f.sup_norm), 0.5, "doubling-decorrelation"
    N = min(cfg.N_list[-1], 256)
    Ct = 0.0
    for i, h in enumerate(panel.members):
        Ct = max(Ct, C.estimate_rho_tilde(spec, f, h.grad, profile.lam, N, range(0, 9),
                                          min(cfg.M, 20000), _stream(cfg).split("rho_tilde", i),
                                          safety=cfg.safety, workers=workers))
    return Ct, profile.lam, "empirical-probe"


def simulate(cfg, out, workers=1):
    spec, f = cfg.system_spec(), cfg.build_observable()
    pools = systems.birkhoff_pool(spec, f, cfg.N_list, cfg.M, _stream(cfg).split("pool"), workers)
    rows = []
    for N in cfg.N_list:
        P = pools[N]
        for i in range(P.shape[0]):
            rows.append([N, i] + [fmt(v) for v in P[i]])
    _write(os.path.join(out, "pools.csv"), ["N", "index"] + [f"W{a}" for a in range(f.dim)], rows)
    return pools


def correlations(cfg, out, workers=1):
    spec, f = cfg.system_spec(), cfg.build_observable()
    prof = _profile(cfg, spec, f, workers)
    Sigma = _sigma(cfg, prof)
    C.write_profile_csv(os.path.join(out, "profile.csv"), prof.pair)
    C.write_sigma_csv(os.path.join(out, "sigma.csv"), Sigma)
    _write(os.path.join(out, "constants.csv"), ["name", "value"],
           [["C2", prof.C2], ["C4", prof.C4], ["lambda", prof.lam], ["safety", prof.safety],
            ["rate_source", prof.rate_source]])
    return prof, Sigma


def bound(cfg, out, workers=1):
    """Bound reports per N with fitted constants; one ``term_label,value`` file per N."""
    spec, f = cfg.system_spec(), cfg.build_observable()
    prof, Sigma = correlations(cfg, out, workers)
    panel = metrics.default_panel(f.dim, _stream(cfg).split("panel")) if f.dim > 1 else None
    Ct, lt, _ = _rho_tilde(cfg, spec, f, prof, panel, workers)
    reps = {}
    for N in cfg.N_list:
        inp = B.BoundInputs(d=f.dim, N=N, C2=prof.C2, C4=prof.C4, lam=prof.lam,
                            rho_tilde=(Ct, lt), f_sup=f.sup_norm)
        if f.dim == 1:
            inp = B.BoundInputs(**{**inp.__dict__, "sigma2": float(Sigma[0, 0])})
            rep = B.wasserstein_bound_1d(inp.with_K(_K(cfg, inp, N, "1d")))
        else:
            # unit smoothness norms; scale by the h-norms of interest
            inp = B.BoundInputs(**{**inp.__dict__, "d2h": 1.0, "d3h": 1.0})
            rep = B.main_bound_mv(inp.with_K(_K(cfg, inp, N, "mv")))
        B.write_report_csv(rep, os.path.join(out, f"bound_N{N}.csv"))
        reps[N] = rep
    return reps


def distance(cfg, out, workers=1):
    """Empirical distances of W(N) to the fitted (or configured) normal law."""
    spec, f = cfg.system_spec(), cfg.build_observable()
    st = _stream(cfg)
    if cfg.sigma is not None:
        Sigma = np.asarray(cfg.sigma, dtype=float)
    else:
        Sigma = _sigma(cfg, _profile(cfg, spec, f, workers))
    pools = systems.birkhoff_pool(spec, f, cfg.N_list, cfg.M, st.split("pool"), workers)
    rows = []
    panel = metrics.default_panel(f.dim, st.split("panel")) if f.dim > 1 else None
    for N in cfg.N_list:
        if f.dim == 1:
            s2 = float(Sigma[0, 0])
            w = metrics.wasserstein_1d(pools[N], s2, st.split("bootstrap", N), n_boot=cfg.n_boot)
            k = metrics.kolmogorov_1d(pools[N], s2)
            rows += [[N, cfg.M, "wasserstein", w.estimate, w.ci_lo, w.ci_hi],
                     [N, cfg.M, "kolmogorov", k, k, k]]
        else:
            sm = metrics.smooth_metric(pools[N], Sigma, panel)
            for r in sm.rows:
                rows.append([N, cfg.M, f"smooth:{r.name}", r.gap,
                             max(0.0, r.gap - 1.96 * r.se), r.gap + 1.96 * r.se])
    metrics.write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    return rows


def stein_check(cfg, out, sigmas=(0.5, 1.0, 2.0), step=1e-2):
    """Residual sweep of the 1D Stein solutions over [-6 sigma, 6 sigma]."""
    worst = 0.0
    summary = []
    for h in stein_core.panel_1d():
        for s in sigmas:
            sol = stein_core.solve_1d(h, s * s)
            w = np.arange(-6 * s, 6 * s + step / 2, step)
            r = stein_core.residual_1d(sol, w)
            m = float(np.max(np.abs(r)))
            worst = max(worst, m)
            summary.append([h.name, s, m])
            stein_core.write_residual_csv(os.path.join(out, f"residual_{h.name}_s{s:g}.csv"), w, r)
    _write(os.path.join(out, "stein_check.csv"), ["h", "sigma", "max_abs_residual"], summary)
    return worst


def scheme_run(cfg, out, workers=1):
    spec, f = cfg.system_spec(), cfg.build_observable()
    if spec.kind != "doubling" or f.dim != 1:
        raise ContractError("the conditioning scheme runs on the doubling map with scalar f")
    sc = cfg.scheme
    A = scheme.sine()
    reps = []
    st = _stream(cfg).split("scheme")
    for n in sc["n_list"]:
        for K in sc["K_list"]:
            reps.append(scheme.scheme_terms(f, A, sc["N"], K, n, sc["M"], st.split(n, K),
                                            workers=workers))
    scheme.write_scheme_csv(os.path.join(out, "scheme.csv"), reps)
    return reps


def rate_fit_file(path, out, metric=None):
    Ns, ds = [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if metric is not None and row.get("metric") != metric:
                continue
            Ns.append(float(row["N"]))
            ds.append(float(row["estimate"]))
    fits = fit_rate(Ns, ds)
    _write_fits(os.path.join(out, "ratefit.csv"), fits)
    return fits


def _write_fits(path, fits):
    _write(path, ["model", "parameter", "residual", "r2", "points"],
           [[r.model, r.parameter, r.residual, r.r2, r.n_points] for r in fits.values()])


# ------------------------------------------------------------------ pipeline

@dataclass
class NResult:
    N: int
    K: int
    estimate: float
    se: float
    bound: float
    passed: bool
    extra: dict = field(default_factory=dict)


@dataclass
class RunBundle:
    results: list
    fits: dict
    Sigma: np.ndarray
    profile: object
    rho_tilde: tuple
    files: list

    @property
    def all_pass(self):
        return all(r.passed for r in self.results)


def run(cfg, out=None, workers=1):
    """Full pipeline; writes CSVs into ``out`` (default ``cfg.outputs``)."""
    cfg.validate()
    out = out or cfg.outputs
    os.makedirs(out, exist_ok=True)
    spec, f = cfg.system_spec(), cfg.build_observable()
    d = f.dim
    st = _stream(cfg)
    files = []

    def path(name):
        files.append(name)
        return os.path.join(out, name)

    cfg.save(path("config.ini"))
    prof = _profile(cfg, spec, f, workers)
    Sigma = _sigma(cfg, prof)
    log.info("C2=%.4g C4=%.4g lam=%.4g (%s)", prof.C2, prof.C4, prof.lam, prof.rate_source)
    C.write_profile_csv(path("profile.csv"), prof.pair)
    C.write_sigma_csv(path("sigma.csv"), Sigma)
    panel = metrics.default_panel(d, st.split("panel")) if d > 1 else None
    Ct, lt, rt_source = _rho_tilde(cfg, spec, f, prof, panel, workers)
    _write(path("constants.csv"), ["name", "value"],
           [["C2", prof.C2], ["C4", prof.C4], ["lambda", prof.lam], ["safety", prof.safety],
            ["rate_source", prof.rate_source], ["rho_tilde_C", Ct], ["rho_tilde_lambda", lt],
            ["rho_tilde_source", rt_source]])

    pools = systems.birkhoff_pool(spec, f, cfg.N_list, cfg.M, st.split("pool"), workers)
    results, metric_rows, bound_rows = [], [], []
    base = B.BoundInputs(d=d, C2=prof.C2, C4=prof.C4, lam=prof.lam, rho_tilde=(Ct, lt),
                         f_sup=f.sup_norm)
    for N in cfg.N_list:
        pool = pools[N]
        if d == 1:
            s2 = float(Sigma[0, 0])
            inp = B.BoundInputs(**{**base.__dict__, "N": N, "sigma2": s2})
            K = _K(cfg, inp, N, "1d")
            rep = B.wasserstein_bound_1d(inp.with_K(K))
            w = metrics.wasserstein_1d(pool, s2, st.split("bootstrap", N), n_boot=cfg.n_boot)
            k = metrics.kolmogorov_1d(pool, s2)
            metric_rows += [[N, cfg.M, "wasserstein", w.estimate, w.ci_lo, w.ci_hi],
                            [N, cfg.M, "kolmogorov", k, k, k]]
            se = w.se if math.isfinite(w.se) else 0.0
            kw = B.kolmogorov_from_wasserstein(w.estimate, math.sqrt(s2))
            results.append(NResult(N, K, w.estimate, se, rep.total,
                                   rep.total >= w.estimate + 4 * se,
                                   {"kolmogorov": k, "kolmogorov_envelope": kw}))
            bound_rows += [[N, K, lab, v] for lab, _, v in rep.terms] + [[N, K, "total", rep.total]]
        else:
            sm = metrics.smooth_metric(pool, Sigma, panel, cfg.quadrature.get("gh_order", 40))
            ok, worst_K, totals = True, 0, []
            for h, row in zip(panel.members, sm.rows):
                inp = B.BoundInputs(**{**base.__dict__, "N": N, "d2h": h.norms[2], "d3h": h.norms[3]})
                K = _K(cfg, inp, N, "mv")
                rep = B.main_bound_mv(inp.with_K(K))
                ok &= rep.total >= row.gap + 4 * row.se
                totals.append(rep.total)
                worst_K = K
                metric_rows.append([N, cfg.M, f"smooth:{h.name}", row.gap,
                                    max(0.0, row.gap - 1.96 * row.se), row.gap + 1.96 * row.se])
                bound_rows += [[N, K, f"{h.name}:{lab}", v] for lab, _, v in rep.terms]
                bound_rows.append([N, K, f"{h.name}:total", rep.total])
            top = sm.argmax()
            metric_rows.append([N, cfg.M, "smooth_max", top.gap, top.gap, top.gap])
            results.append(NResult(N, worst_K, top.gap, top.se, min(totals), ok))
    metrics.write_metrics_csv(path("metrics.csv"), metric_rows)
    _write(path("bounds.csv"), ["N", "K", "term_label", "value"], bound_rows)
    _write(path("summary.csv"), ["N", "K", "estimate", "se", "bound", "pass"],
           [[r.N, r.K, r.estimate, r.se, r.bound, int(r.passed)] for r in results])
    fits = {}
    if len(cfg.N_list) >= 4:
        fits = fit_rate([r.N for r in results], [r.estimate for r in results])
        _write_fits(path("ratefit.csv"), fits)
    return RunBundle(results, fits, Sigma, prof, (Ct, lt, rt_source), files)
