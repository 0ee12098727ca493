"""Explicit normal-approximation error bounds for geometric correlation decay.

Correlations decay as rho(i) = lam**i and the gap term as
rho_tilde(K) = Ct * lam_t**K. Infinite series are summed in closed form,
finite sums by explicit loops.
"""
import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import ContractError


@dataclass(frozen=True)
class BoundInputs:
    d: int = 1
    N: Optional[int] = None
    K: int = 0
    C2: float = 1.0
    C4: float = 1.0
    lam: float = 0.5
    rho_tilde: tuple = (0.0, 0.5)
    f_sup: float = 1.0
    d2h: float = 0.0
    d3h: float = 0.0
    grad_h: float = 0.0
    sigma2: Optional[float] = None
    T: Optional[float] = None

    def with_K(self, K):
        return replace(self, K=int(K))


@dataclass(frozen=True)
class BoundReport:
    terms: list = field(default_factory=list)  # (label, expression, value)
    total: float = 0.0
    K_used: int = 0
    constant_names: dict = field(default_factory=dict)

    def term(self, label):
        for lab, _, v in self.terms:
            if lab == label:
                return v
        raise KeyError(label)


def _check(inp, horizon):
    if inp.d < 1:
        raise ContractError(f"d must be >= 1, got {inp.d}")
    if not 0.0 < inp.lam < 1.0:
        raise ContractError(f"need 0 < lam < 1, got {inp.lam}")
    Ct, lt = inp.rho_tilde
    if Ct < 0 or not 0.0 < lt < 1.0:
        raise ContractError(f"need rho_tilde = (C >= 0, 0 < lam < 1), got {inp.rho_tilde}")
    for name in ("C2", "C4", "f_sup", "d2h", "d3h", "grad_h"):
        if getattr(inp, name) < 0:
            raise ContractError(f"{name} must be non-negative")
    if horizon is None or horizon <= 0:
        raise ContractError("horizon (N or T) must be positive")
    if not 0 <= inp.K < horizon:
        raise ContractError(f"need 0 <= K < {horizon}, got K={inp.K}")


def _report(terms, K, names):
    terms = [(lab, expr, float(v)) for lab, expr, v in terms]
    return BoundReport(terms=terms, total=math.fsum(v for *_, v in terms), K_used=int(K),
                       constant_names=names)


def geometric_tail(lam, start):
    """sum_{i >= start} lam**i."""
    return lam ** start / (1.0 - lam)


def weighted_geometric(lam):
    """sum_{i >= 0} (i + 1) lam**i."""
    return 1.0 / (1.0 - lam) ** 2


def rho_tilde(inp, K):
    Ct, lt = inp.rho_tilde
    return Ct * lt ** K


def c_star(inp):
    """12 d^3 max(C2, sqrt C4) (|D^2 h| + |f| |D^3 h|) sum (i+1) rho(i)."""
    if not 0.0 < inp.lam < 1.0:
        raise ContractError(f"need 0 < lam < 1, got {inp.lam}")
    return (12.0 * inp.d ** 3 * max(inp.C2, math.sqrt(inp.C4))
            * (inp.d2h + inp.f_sup * inp.d3h) * weighted_geometric(inp.lam))


def main_bound_mv(inp):
    _check(inp, inp.N)
    N, K, lam = inp.N, inp.K, inp.lam
    cs = c_star(inp)
    terms = [
        ("window", "C_star*(K+1)/sqrt(N)", cs * (K + 1) / math.sqrt(N)),
        ("tail", "C_star*sum_{i>=K+1} rho(i)", cs * geometric_tail(lam, K + 1)),
        ("gap", "sqrt(N)*rho_tilde(K)", math.sqrt(N) * rho_tilde(inp, K)),
    ]
    return _report(terms, K, {"C_star": cs})


def c_hash(inp):
    if inp.sigma2 is None or inp.sigma2 <= 0:
        raise ContractError(f"sigma2 must be positive, got {inp.sigma2}")
    s = math.sqrt(inp.sigma2)
    return (11.0 * max(1.0 / s, 1.0 / inp.sigma2) * max(inp.C2, math.sqrt(inp.C4))
            * (1.0 + inp.f_sup) * weighted_geometric(inp.lam))


def c_hash_prime(inp):
    if inp.sigma2 is None or inp.sigma2 <= 0:
        raise ContractError(f"sigma2 must be positive, got {inp.sigma2}")
    return 2.0 * max(1.0, 1.0 / inp.sigma2)


def wasserstein_bound_1d(inp):
    _check(inp, inp.N)
    ch, chp = c_hash(inp), c_hash_prime(inp)
    N, K, lam = inp.N, inp.K, inp.lam
    terms = [
        ("window", "C_hash*(K+1)/sqrt(N)", ch * (K + 1) / math.sqrt(N)),
        ("tail", "C_hash*sum_{i>=K+1} rho(i)", ch * geometric_tail(lam, K + 1)),
        ("gap", "C_hash_prime*sqrt(N)*rho_tilde(K)", chp * math.sqrt(N) * rho_tilde(inp, K)),
    ]
    return _report(terms, K, {"C_hash": ch, "C_hash_prime": chp})


def kolmogorov_from_wasserstein(d_w, sigma):
    """(2/pi)^{1/4} sigma^{-1/2} sqrt(d_w)."""
    return (2.0 / math.pi) ** 0.25 * math.sqrt(d_w / sigma)


def _preliminary(inp, coef, names, a_hi, a_lo, eta):
    # coef = (local, covariance, variance) prefactors; names = (hi, lo) norm labels
    _check(inp, inp.N)
    if a_hi < 0 or a_lo < 0 or eta < 0:
        raise ContractError("derivative norms and eta must be non-negative")
    N, K, lam = inp.N, inp.K, inp.lam
    c1, c2, c3 = coef
    hi, lo = names
    rho = [lam ** i for i in range(max(2 * K, N) + 1)]
    s_2K = math.fsum(rho[1:2 * K + 1])
    s_iK = math.fsum(i * rho[i] for i in range(1, K + 1))
    s_N = math.fsum((i + 1) * rho[i] for i in range(N))
    mx = max(inp.C2, math.sqrt(inp.C4))
    return [
        ("local", f"c1*C2*|f|*|{hi}|*(2K+1)/sqrt(N)*(rho(0)+2*sum_1^2K rho)",
         c1 * inp.C2 * inp.f_sup * a_hi * (2 * K + 1) / math.sqrt(N) * (rho[0] + 2.0 * s_2K)),
        ("covariance", f"c2*C2*|{lo}|*(sum_(i>=K+1) rho + sum_1^K i*rho/N)",
         c2 * inp.C2 * a_lo * (geometric_tail(lam, K + 1) + s_iK / N)),
        ("variance", f"c3*max(C2,sqrt C4)*|{lo}|*sqrt(K+1)/sqrt(N)*sqrt(sum_0^(N-1) (i+1)*rho)",
         c3 * mx * a_lo * math.sqrt(K + 1) / math.sqrt(N) * math.sqrt(s_N)),
        ("eta", "eta(N,K)", eta),
    ]


def preliminary_bound_mv(inp, d2A, d3A, eta):
    """Four-term bound on |mu(tr Sigma D^2A(W) - W . grad A(W))|."""
    d = inp.d
    coef = (d ** 3, 2.0 * d ** 2, 11.0 * d ** 2)
    terms = _preliminary(inp, coef, ("D3A", "D2A"), float(d3A), float(d2A), float(eta))
    return _report(terms, inp.K, {"c1": coef[0], "c2": coef[1], "c3": coef[2]})


def preliminary_bound_1d(inp, dA, d2A, eta):
    """Four-term bound on |mu(sigma^2 A'(W) - W A(W))|."""
    if inp.d != 1:
        raise ContractError("preliminary_bound_1d needs d = 1")
    coef = (0.5, 2.0, 11.0)
    terms = _preliminary(inp, coef, ("A''", "A'"), float(d2A), float(dA), float(eta))
    return _report(terms, inp.K, {"c1": coef[0], "c2": coef[1], "c3": coef[2]})


def flow_bound(inp):
    """Bound on |mu(h(V)) - Phi_Sigma(h)| for the roof-1 suspension at real time T."""
    T = inp.T
    if T is None or T < 1:
        raise ContractError(f"flow bound needs T >= 1, got {T}")
    if not 0 < inp.K < T:
        raise ContractError(f"need 0 < K < T, got K={inp.K}, T={T}")
    _check(inp, T)
    cs = c_star(inp)
    K, lam = inp.K, inp.lam
    terms = [
        ("window", "6*C_star*(K+1)/sqrt(T)", 6.0 * cs * (K + 1) / math.sqrt(T)),
        ("tail", "6*C_star*sum_{i>=K} rho(i)", 6.0 * cs * geometric_tail(lam, K)),
        ("gap", "sqrt(T)*rho_tilde(K)", math.sqrt(T) * rho_tilde(inp, K)),
        ("fractional", "2d*|grad h|*|f|/sqrt(T)", 2.0 * inp.d * inp.grad_h * inp.f_sup / math.sqrt(T)),
    ]
    return _report(terms, K, {"C_star": cs, "flow": 6.0 * cs})


def corollary_K(N, lam):
    """K = ceil(log N / |log lam|)."""
    if not 0.0 < lam < 1.0:
        raise ContractError(f"need 0 < lam < 1, got {lam}")
    return int(math.ceil(math.log(N) / abs(math.log(lam))))


def corollary_const(inp):
    """C_star (2/|log lam| + lam/(sqrt 3 (1 - lam))) + Ct."""
    lam = inp.lam
    return (c_star(inp) * (2.0 / abs(math.log(lam)) + lam / (math.sqrt(3.0) * (1.0 - lam)))
            + inp.rho_tilde[0])


_EVALUATORS = {"mv": main_bound_mv, "1d": wasserstein_bound_1d}


def optimize_K(inp, N=None, kind="mv"):
    """Exhaustive scan of K in [0, N-1]; smallest minimizer on ties."""
    N = inp.N if N is None else int(N)
    inp = replace(inp, N=N)
    ev = _EVALUATORS[kind]
    best = None
    for K in range(N):
        rep = ev(inp.with_K(K))
        if best is None or rep.total < best.total:
            best = rep
    return best.K_used, best


def write_report_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term_label", "value"])
        for lab, _, v in report.terms:
            w.writerow([lab, format(v, ".17g")])
        w.writerow(["total", format(report.total, ".17g")])
