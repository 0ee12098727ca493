"""Experiment configuration: INI sections whose values are JSON literals.

    [system]
    kind = "doubling"
    seed = 20240101

    [observable]
    kind = "trig"
    terms = [{"component": 0, "freq": [1], "amp": 1.0}]

    [experiment]
    N_list = [16, 32, 64]
    M = 100000
    K_policy = "corollary"
"""
import configparser
import io
import json
from dataclasses import dataclass, field, fields

from . import observables, systems
from .errors import ConfigError, ContractError

K_POLICIES = ("corollary", "optimize", "fixed")


@dataclass
class ExperimentConfig:
    system: dict = field(default_factory=lambda: {"kind": "doubling"})
    observable: dict = field(default_factory=dict)
    N_list: list = field(default_factory=lambda: [16, 64, 256, 1024])
    M: int = 100000
    seed: int = 0
    K_policy: str = "corollary"
    K: int = 0
    outputs: str = "out"
    safety: float = 2.0
    k_max: int = 32
    fourth_max: int = 4
    profile_M: int = 0  # 0: use M
    n_boot: int = 200
    sigma: list = None  # optional known limit covariance (d x d)
    quadrature: dict = field(default_factory=lambda: {"dt": 0.25, "gh_order": 40, "tol": 1e-8})
    scheme: dict = field(default_factory=lambda: {"N": 64, "n_list": [0, 4, 8],
                                                  "K_list": [0, 1, 2, 3, 4], "M": 100000})

    # ------------------------------------------------------------- building

    def system_spec(self):
        try:
            return systems.from_dict(self.system)
        except ContractError as e:
            raise ConfigError("system", str(e)) from None

    def build_observable(self):
        try:
            return observables.from_spec(self.observable)
        except (ContractError, KeyError, TypeError, ValueError) as e:
            raise ConfigError("observable", str(e)) from None

    # ------------------------------------------------------------- checks

    def validate(self):
        spec = self.system_spec()
        if spec.kind == "suspension":
            raise ConfigError("system.kind", "the experiment pipeline runs maps; "
                              "use the semiflow API for suspensions")
        if not self.observable:
            raise ConfigError("observable", "missing observable block")
        f = self.build_observable()
        if f.phase_dim != spec.phase_dim:
            raise ConfigError("observable.terms", f"phase dimension {f.phase_dim} does not match "
                              f"the system ({spec.phase_dim})")
        if f.is_zero:
            raise ConfigError("observable", "f is identically zero: the limit variance "
                              "is degenerate")
        if not f.mean_zero:
            raise ConfigError("observable.center", "observable is not mean-zero; set center = true")
        Ns = self.N_list
        if not isinstance(Ns, list) or len(Ns) == 0:
            raise ConfigError("experiment.N_list", "must be a non-empty list")
        for i, N in enumerate(Ns):
            if not isinstance(N, int) or N < 2 or N & (N - 1):
                raise ConfigError(f"experiment.N_list[{i}]", f"{N!r} is not a power of two >= 2")
        if Ns != sorted(set(Ns)):
            raise ConfigError("experiment.N_list", "must be strictly ascending")
        if not isinstance(self.M, int) or self.M < 1000:
            raise ConfigError("experiment.M", f"must be an integer >= 1000, got {self.M!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 1 << 64:
            raise ConfigError("system.seed", "must be an unsigned 64-bit integer")
        if self.K_policy not in K_POLICIES:
            raise ConfigError("experiment.K_policy", f"must be one of {K_POLICIES}")
        if self.K_policy == "fixed":
            for N in Ns:
                if not 0 <= self.K < N:
                    raise ConfigError("experiment.K", f"K = {self.K} is invalid for N = {N}")
        if not self.safety >= 1:
            raise ConfigError("experiment.safety", "must be >= 1")
        if self.sigma is not None:
            if len(self.sigma) != f.dim or any(len(r) != f.dim for r in self.sigma):
                raise ConfigError("experiment.sigma", f"must be a {f.dim}x{f.dim} matrix")
        dt = self.quadrature.get("dt", 0.25)
        if not isinstance(dt, (int, float)):
            raise ConfigError("quadrature.dt", f"must be a number, got {dt!r}")
        systems.check_dyadic(dt)
        return self

    # ------------------------------------------------------------- text form

    _EXPERIMENT = ("N_list", "M", "K_policy", "K", "outputs", "safety", "k_max", "fourth_max",
                   "profile_M", "n_boot", "sigma")

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["system"] = {k: json.dumps(v) for k, v in {**self.system, "seed": self.seed}.items()}
        cp["observable"] = {k: json.dumps(v) for k, v in self.observable.items()}
        cp["experiment"] = {k: json.dumps(getattr(self, k)) for k in self._EXPERIMENT}
        cp["quadrature"] = {k: json.dumps(v) for k, v in self.quadrature.items()}
        cp["scheme"] = {k: json.dumps(v) for k, v in self.scheme.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError("<file>", str(e).splitlines()[0]) from None
        known = {"system", "observable", "experiment", "quadrature", "scheme"}
        for sec in cp.sections():
            if sec not in known:
                raise ConfigError(sec, "unknown section")

        def section(name):
            out = {}
            if cp.has_section(name):
                for k, v in cp[name].items():
                    try:
                        out[k] = json.loads(v)
                    except json.JSONDecodeError as e:
                        raise ConfigError(f"{name}.{k}", f"invalid JSON value ({e.msg})") from None
            return out
        cfg = cls()
        system = section("system")
        if "seed" in system:
            cfg.seed = system.pop("seed")
        if system:
            cfg.system = system
        cfg.observable = section("observable")
        names = {f.name for f in fields(cls)}
        for k, v in section("experiment").items():
            if k not in names or k not in cls._EXPERIMENT:
                raise ConfigError(f"experiment.{k}", "unknown key")
            setattr(cfg, k, v)
        cfg.quadrature = {**cfg.quadrature, **section("quadrature")}
        cfg.scheme = {**cfg.scheme, **section("scheme")}
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_ini(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_ini())
