"""Plain-text run configuration: one ``dotted.key = value`` per line.

Blank lines and ``#`` comments are ignored. The canonical form lists keys
in sorted order with normalized values, so parse -> serialize -> parse is
the identity on canonical text.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from .errors import ConfigError

ARTIFACT_VERSION = "0.1.0"

_KNOWN_KEYS = {
    "run.id", "run.output", "run.cache_dir",
    "exponents.p", "exponents.q", "exponents.N",
    "metric.kind", "metric.L", "metric.grid", "metric.N",
    "metric.params.amplitude", "metric.params.mode", "metric.params.center",
    "metric.params.sharpness",
    "eps.list", "eps.schedule", "eps.start_divisor", "eps.count", "eps.nodes_per_eps",
    "solver.tol", "solver.min_nodes", "solver.eps_ratio", "solver.positivity_slack",
    "solver.cutoff_fraction",
    "entire.R_max", "entire.M", "entire.tol",
    "seeds.centers",
    "checks.duality", "checks.limit_energy", "checks.decay", "checks.concentration",
    "checks.expansion", "checks.profile", "checks.maxima",
}


def parse_text(text):
    """Dotted key-value text -> dict of raw string values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _float(key, s):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {s!r}") from None


def _int(key, s):
    try:
        v = float(s)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {s!r}") from None
    if v != int(v):
        raise ConfigError(f"{key}: expected an integer, got {s!r}")
    return int(v)


def _floats(key, s):
    return [_float(key, x) for x in s.split(",") if x.strip()]


def _bool(key, s):
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {s!r}")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass
class RunConfig:
    run_id: str = "run"
    output: str = "runs/run"
    cache_dir: str = ".spikelab_cache"
    p: float = 2.0
    q: float = 3.0
    N: int = 3
    metric_kind: str = "flat"
    L: float = 10.0
    grid: int = 32
    amplitude: float | None = None
    mode: list | None = None
    center: list | None = None
    sharpness: float | None = None
    eps_list: list | None = None
    eps_schedule: str = "geometric"
    eps_start_divisor: float = 10.0
    eps_count: int = 7
    nodes_per_eps: float | None = None
    tol: float = 1e-9
    min_nodes: int = 8
    eps_ratio: float = 10.0
    positivity_slack: float = 1e-4
    cutoff_fraction: float = 0.45
    R_max: float = 20.0
    M: int = 2000
    entire_tol: float = 1e-10
    seeds: list = field(default_factory=lambda: ["argmax"])
    checks: dict = field(default_factory=lambda: {
        "duality": True, "limit_energy": True, "decay": True, "concentration": True,
        "expansion": True, "profile": True, "maxima": True})

    # ---- conversion -------------------------------------------------------

    @classmethod
    def from_mapping(cls, m):
        c = cls()
        g = m.get
        if "run.id" in m:
            c.run_id = m["run.id"]
        c.output = g("run.output", f"runs/{c.run_id}")
        c.cache_dir = g("run.cache_dir", c.cache_dir)
        c.p = _float("exponents.p", g("exponents.p", c.p))
        c.q = _float("exponents.q", g("exponents.q", c.q))
        c.N = _int("exponents.N", g("exponents.N", c.N))
        if "metric.N" in m and _int("metric.N", m["metric.N"]) != c.N:
            raise ConfigError("metric.N differs from exponents.N")
        c.metric_kind = g("metric.kind", c.metric_kind)
        c.L = _float("metric.L", g("metric.L", c.L))
        c.grid = _int("metric.grid", g("metric.grid", c.grid))
        if "metric.params.amplitude" in m:
            c.amplitude = _float("metric.params.amplitude", m["metric.params.amplitude"])
        if "metric.params.mode" in m:
            c.mode = [_int("metric.params.mode", x) for x in m["metric.params.mode"].split(",")]
        if "metric.params.center" in m:
            c.center = _floats("metric.params.center", m["metric.params.center"])
        if "metric.params.sharpness" in m:
            c.sharpness = _float("metric.params.sharpness", m["metric.params.sharpness"])
        if "eps.list" in m:
            c.eps_list = _floats("eps.list", m["eps.list"])
        c.eps_schedule = g("eps.schedule", "list" if c.eps_list else c.eps_schedule)
        c.eps_start_divisor = _float("eps.start_divisor", g("eps.start_divisor", c.eps_start_divisor))
        c.eps_count = _int("eps.count", g("eps.count", c.eps_count))
        if "eps.nodes_per_eps" in m:
            c.nodes_per_eps = _float("eps.nodes_per_eps", m["eps.nodes_per_eps"])
        c.tol = _float("solver.tol", g("solver.tol", c.tol))
        c.min_nodes = _int("solver.min_nodes", g("solver.min_nodes", c.min_nodes))
        c.eps_ratio = _float("solver.eps_ratio", g("solver.eps_ratio", c.eps_ratio))
        c.positivity_slack = _float("solver.positivity_slack", g("solver.positivity_slack", c.positivity_slack))
        c.cutoff_fraction = _float("solver.cutoff_fraction", g("solver.cutoff_fraction", c.cutoff_fraction))
        c.R_max = _float("entire.R_max", g("entire.R_max", c.R_max))
        c.M = _int("entire.M", g("entire.M", c.M))
        c.entire_tol = _float("entire.tol", g("entire.tol", c.entire_tol))
        if "seeds.centers" in m:
            c.seeds = [s.strip() for s in m["seeds.centers"].split(";") if s.strip()]
        for k in list(c.checks):
            key = f"checks.{k}"
            if key in m:
                c.checks[k] = _bool(key, m[key])
        return c

    def to_mapping(self):
        m = {
            "run.id": self.run_id, "run.output": self.output, "run.cache_dir": self.cache_dir,
            "exponents.p": float(self.p), "exponents.q": float(self.q), "exponents.N": int(self.N),
            "metric.kind": self.metric_kind, "metric.L": float(self.L), "metric.grid": int(self.grid),
            "eps.schedule": self.eps_schedule,
            "solver.tol": float(self.tol), "solver.min_nodes": int(self.min_nodes),
            "solver.eps_ratio": float(self.eps_ratio),
            "solver.positivity_slack": float(self.positivity_slack),
            "solver.cutoff_fraction": float(self.cutoff_fraction),
            "entire.R_max": float(self.R_max), "entire.M": int(self.M),
            "entire.tol": float(self.entire_tol),
            "seeds.centers": "; ".join(self.seeds),
        }
        if self.eps_schedule == "list":
            m["eps.list"] = [float(e) for e in self.eps_list]
        else:
            m["eps.start_divisor"] = float(self.eps_start_divisor)
            m["eps.count"] = int(self.eps_count)
        if self.nodes_per_eps is not None:
            m["eps.nodes_per_eps"] = float(self.nodes_per_eps)
        for k, v in (("amplitude", self.amplitude), ("sharpness", self.sharpness)):
            if v is not None:
                m[f"metric.params.{k}"] = float(v)
        if self.mode is not None:
            m["metric.params.mode"] = ", ".join(str(int(x)) for x in self.mode)
        if self.center is not None:
            m["metric.params.center"] = [float(x) for x in self.center]
        for k, v in self.checks.items():
            m[f"checks.{k}"] = bool(v)
        return m

    def canonical_text(self):
        m = self.to_mapping()
        return "".join(f"{k} = {_fmt(m[k])}\n" for k in sorted(m))

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    # ---- derived objects --------------------------------------------------

    def exponent_pair(self):
        from .entire import ExponentPair

        return ExponentPair(self.p, self.q, self.N)

    def metric_params(self):
        p = {}
        if self.amplitude is not None:
            p["amplitude"] = self.amplitude
        if self.mode is not None:
            p["mode"] = list(self.mode)
        if self.center is not None:
            p["center"] = list(self.center)
        if self.sharpness is not None:
            p["sharpness"] = self.sharpness
        return p

    def grid_for(self, eps):
        if self.nodes_per_eps is None:
            return self.grid
        n = int(round(self.nodes_per_eps * self.L / eps))
        return n + (n % 2)

    def metric(self, eps=None):
        from .geometry import ConformalMetric

        n = self.grid if eps is None else self.grid_for(eps)
        return ConformalMetric(self.N, self.L, (n,) * self.N, self.metric_kind, self.metric_params())

    def eps_values(self):
        if self.eps_schedule == "list":
            return list(self.eps_list)
        if self.eps_schedule == "geometric":
            # eps_k = L / (start * 2^{k/2})
            return [self.L / (self.eps_start_divisor * 2.0 ** (k / 2.0)) for k in range(self.eps_count)]
        raise ConfigError(f"unknown eps.schedule {self.eps_schedule!r}")

    def entire_key(self):
        text = f"{self.p!r}|{self.q!r}|{self.N}|{self.R_max!r}|{self.M}|{self.entire_tol!r}"
        return hashlib.sha256(text.encode()).hexdigest()[:20]


def parse_config(text):
    return RunConfig.from_mapping(parse_text(text))


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    ok: bool
    errors: list
    warnings: list
    derived: dict

    def text(self):
        lines = [f"{k}: {v}" for k, v in self.derived.items()]
        lines += [f"warning: {w}" for w in self.warnings]
        lines += [f"error: {e}" for e in self.errors]
        lines.append("valid" if self.ok else "invalid")
        return "\n".join(lines)


def validate(config):
    """Check exponents, metric parameters and grid resolution; report derived quantities."""
    from .dual import check_resolution
    from .entire import ExponentPair, bootstrap_exponents
    from .errors import InvalidExponents, SpikeUnresolved
    from .geometry import METRIC_KINDS

    errors, warnings, derived = [], [], {}
    try:
        ex = ExponentPair(config.p, config.q, config.N)
    except InvalidExponents as exc:
        return ValidationReport(False, [str(exc)], [], {})
    lhs = 1.0 / (ex.p + 1.0) + 1.0 / (ex.q + 1.0)
    rhs = (ex.N - 2.0) / ex.N
    derived.update({
        "alpha": ex.alpha, "beta": ex.beta, "beta_star": ex.beta_star, "alpha_star": ex.alpha_star,
        "hc_holds": ex.hc_holds, "hc_lhs": lhs, "hc_rhs": rhs,
    })
    try:
        boot = bootstrap_exponents(ex)
        derived["bootstrap_tag"] = boot.tag
        derived["bootstrap_steps"] = len(boot.sequence)
    except InvalidExponents as exc:
        derived["bootstrap_tag"] = exc.tag
    if not ex.hc_holds:
        errors.append(f"(HC) violated: 1/(p+1) + 1/(q+1) = {lhs:.6g} is not > (N-2)/N = {rhs:.6g}")
    if config.metric_kind not in METRIC_KINDS or config.metric_kind == "samples":
        errors.append(f"metric.kind {config.metric_kind!r} is not a catalog entry")
    if config.grid < 8 or config.grid % 2:
        errors.append(f"metric.grid must be even and >= 8, got {config.grid}")
    if not config.L > 0:
        errors.append("metric.L must be positive")
    if config.metric_kind == "bump" and config.sharpness is not None:
        sl2 = config.sharpness * config.L**2
        derived["sharpness_L2"] = sl2
        if sl2 < 4.0:
            warnings.append(f"bump sharpness*L^2 = {sl2:.3g}; periodized images are not negligible")
    try:
        eps = config.eps_values()
    except ConfigError as exc:
        errors.append(str(exc))
        eps = []
    if eps:
        if any(b >= a for a, b in zip(eps, eps[1:])):
            errors.append("eps values must be strictly decreasing")
        if min(eps) <= 0:
            errors.append("eps values must be positive")
        derived["eps"] = eps
        if not errors:
            try:
                m = config.metric(min(eps))
                check_resolution(m, min(eps), config.min_nodes)
            except SpikeUnresolved as exc:
                errors.append(f"resolution: {exc}")
            except ValueError as exc:
                errors.append(str(exc))
            R = config.cutoff_fraction * config.L
            if max(eps) > R / config.eps_ratio * (1 + 1e-12):
                errors.append(f"largest eps {max(eps):.4g} exceeds cutoff R/{config.eps_ratio:g} = "
                              f"{R / config.eps_ratio:.4g}")
    for s in config.seeds:
        if s not in ("argmax", "opposite"):
            try:
                c = [float(x) for x in s.split(",")]
            except ValueError:
                errors.append(f"seed {s!r} is neither argmax/opposite nor coordinates")
                continue
            if len(c) != config.N:
                errors.append(f"seed {s!r} does not have N={config.N} coordinates")
    return ValidationReport(not errors, errors, warnings, derived)


def is_finite(x):
    return isinstance(x, (int, float)) and math.isfinite(x)
