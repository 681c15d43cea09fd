"""Command-line front end.

Configuration is line-oriented ``key = value`` text; flags ``--key value``
override the file.  Every run writes its CSV tables and a ``manifest.json``
into the output directory.  ``treespectra rerun --manifest path`` replays a
run from its manifest.

Exit codes: 0 success, 1 hard error, 2 bound violation in a verify suite.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .disorder import (
    RealizationSeed,
    cauchy,
    gaussian,
    no_disorder,
    piecewise_constant,
    uniform,
)

SUBCOMMANDS = ("spectrum", "lyapunov", "free-energy", "rate-function", "dos", "phase-scan", "edge",
               "resonance", "verify")
SUITES = ("greens-identities", "weak-l1", "ldp", "lifshitz", "ray-sum", "fekete")

# key -> (default, kind); kinds: int, float, str, grid, bool
DEFAULTS = {
    "dist": ("cauchy", "str"),
    "dist.location": (0.0, "float"),
    "dist.scale": (1.0, "float"),
    "dist.mean": (0.0, "float"),
    "dist.std": (1.0, "float"),
    "dist.breakpoints": ("-1,0,1", "grid"),
    "dist.heights": ("1,1", "grid"),
    "lambda": ("0.3", "grid"),
    "K": (2, "int"),
    "R": (5, "int"),
    "E": ("0", "grid"),
    "eta": ("1e-2,1e-3,1e-4", "grid"),
    "s": ("0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "grid"),
    "n": (100, "int"),
    "pool": (20000, "int"),
    "sweeps": (100, "int"),
    "warm_sweeps": (40, "int"),
    "chains": (2000, "int"),
    "trials": (1000, "int"),
    "phi1": (False, "bool"),
    "alpha": (0.5, "float"),
    "beta": (0.9, "float"),
    "tilt": (0.5, "float"),
    "eps": (0.05, "float"),
    "t": ("2,5,10,20", "grid"),
    "ldp.n": ("50,100,200", "grid"),
    "lifshitz.delta": ("0.35:1.2:12", "grid"),
    "ray.alpha": (1 / 64, "float"),
    "resonance.n": (6, "int"),
    "resonance.mode": ("lyapunov", "str"),
    "resonance.delta": (float("nan"), "float"),
    "resonance.tau": (float("nan"), "float"),
    "resonance.ell": (float("nan"), "float"),
    "ld.phi1": (float("nan"), "float"),
    "ld.kappa": (float("nan"), "float"),
    "ld.gamma": (float("nan"), "float"),
    "ld.eps": (float("nan"), "float"),
    "ld.b": (float("nan"), "float"),
    "seed": (0, "int"),
    "workers": (1, "int"),
    "out": ("out", "str"),
}
DISTS = ("gaussian", "cauchy", "uniform", "piecewise", "none")


class ConfigError(ValueError):
    def __init__(self, key, message, line=None):
        where = f" (line {line[0]}: {line[1]!r})" if line else ""
        super().__init__(f"{key}: {message}{where}")
        self.key = key


@dataclass
class RunConfig:
    subcommand: str
    suite: str | None
    raw: dict
    values: dict
    sources: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def effective(self) -> dict:
        return {"subcommand": self.subcommand, "suite": self.suite, **self.raw}


def parse_grid(text: str) -> np.ndarray:
    """``a,b,c`` or ``lo:hi:num`` (inclusive linspace)."""
    text = text.strip()
    if ":" in text:
        lo, hi, num = text.split(":")
        return np.linspace(float(lo), float(hi), int(num))
    return np.array([float(t) for t in text.split(",") if t.strip()])


def _convert(key, text, kind, line=None):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "grid":
            g = parse_grid(str(text))
            if g.size == 0:
                raise ValueError("empty grid")
            return g
        if kind == "bool":
            low = str(text).strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return low in ("true", "1", "yes")
        return str(text).strip()
    except ValueError as exc:
        raise ConfigError(key, str(exc), line) from None


def parse_config(text: str = "", overrides: dict | None = None, subcommand: str = "lyapunov",
                 suite: str | None = None) -> RunConfig:
    """Defaults, then file lines, then flag overrides; validated."""
    raw = {k: (str(v) if not isinstance(v, str) else v) for k, (v, _) in DEFAULTS.items()}
    lines = {}
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError("<syntax>", "expected 'key = value'", (no, line))
        key, val = (p.strip() for p in stripped.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown key", (no, line))
        raw[key] = val
        lines[key] = (no, line)
    sources = {k: "file" for k in lines}
    for key, val in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown key")
        raw[key] = str(val)
        lines.pop(key, None)
        sources[key] = "flag"
    values = {k: _convert(k, raw[k], DEFAULTS[k][1], lines.get(k)) for k in DEFAULTS}
    if subcommand not in SUBCOMMANDS:
        raise ConfigError("subcommand", f"unknown subcommand {subcommand!r}")
    if subcommand == "verify" and suite not in SUITES:
        raise ConfigError("suite", f"unknown verify suite {suite!r}")
    _validate(values, lines)
    return RunConfig(subcommand, suite, raw, values, sources)


def _validate(v, lines):
    def bad(key, msg):
        raise ConfigError(key, msg, lines.get(key))

    if v["dist"] not in DISTS:
        bad("dist", f"must be one of {', '.join(DISTS)}")
    if np.any(v["eta"] <= 0):
        bad("eta", "must be positive")
    if np.any(v["lambda"] < 0):
        bad("lambda", "must be nonnegative")
    for key in ("alpha", "beta"):
        if not 0 < v[key] < 1:
            bad(key, "must lie in (0, 1)")
    if np.any(v["s"] >= 1):
        bad("s", "must be below 1")
    if v["tilt"] >= 1:
        bad("tilt", "must be below 1")
    if v["K"] < 2:
        bad("K", "must be at least 2")
    for key in ("R", "n", "pool", "sweeps", "chains", "trials", "workers", "resonance.n"):
        if v[key] < 1:
            bad(key, "must be positive")
    if v["resonance.mode"] not in ("lyapunov", "ld"):
        bad("resonance.mode", "must be 'lyapunov' or 'ld'")
    if v["resonance.mode"] == "ld":
        from .resonance import ldp_constraints

        for key in ("ld.phi1", "ld.kappa", "ld.gamma", "ld.eps", "ld.b", "resonance.ell"):
            if not math.isfinite(v[key]):
                bad(key, "required in ld mode")
        Delta = math.log(v["K"]) + v["ld.phi1"]
        c = ldp_constraints(v["K"], Delta, v["resonance.ell"], v["ld.kappa"], v["ld.eps"])
        if not c["kappa_window"]:
            bad("ld.kappa", "outside (0, min(Delta / (16 ell), 1/4))")


def build_model(values, lam: float | None = None):
    lam = float(values["lambda"][0]) if lam is None else float(lam)
    return no_disorder() if values["dist"] == "none" else _family(values, lam)


def _family(values, lam):
    d = values["dist"]
    if d == "gaussian":
        return gaussian(lam, values["dist.mean"], values["dist.std"])
    if d == "cauchy":
        return cauchy(lam, values["dist.location"], values["dist.scale"])
    if d == "uniform":
        return uniform(lam)
    if d == "piecewise":
        return piecewise_constant(lam, values["dist.breakpoints"], values["dist.heights"])
    return no_disorder()


# -- output --------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_outputs(tables: dict, config: RunConfig, manifest: dict) -> list[str]:
    """Write every ``name -> (header, rows)`` table, then the manifest."""
    out = config.values["out"]
    written = []
    for name, (header, rows) in tables.items():
        path = os.path.join(out, f"{name}.csv")
        atomic_write(path, csv_text(header, rows))
        written.append(path)
    manifest = dict(manifest, outputs=[os.path.basename(p) for p in written])
    atomic_write(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return written


# -- subcommands ---------------------------------------------------------

@dataclass
class Result:
    tables: dict
    flags: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    violation: bool = False
    summary: dict = field(default_factory=dict)


def _seed(v) -> RealizationSeed:
    return RealizationSeed(v["seed"])


def _budgets(v):
    from .phase import Budgets

    return Budgets(pool=v["pool"], sweeps=v["sweeps"], warm_sweeps=v["warm_sweeps"], chains=v["chains"],
                   n=v["n"], eta_sequence=tuple(float(e) for e in v["eta"]), phi1=v["phi1"])


def run_spectrum(v) -> Result:
    from .greens import free_gamma
    from .phase import free_lyapunov, spectrum_interval

    rows = []
    for lam in v["lambda"]:
        m = build_model(v, lam)
        lo, hi = spectrum_interval(m, v["K"])
        for E in v["E"]:
            g = free_gamma(v["K"], complex(E, 0.0))
            rows.append((float(E), float(lam), lo, hi, bool(lo <= E <= hi), g.real, g.imag,
                         free_lyapunov(v["K"], float(E))))
    return Result({"spectrum": (("E", "lambda", "sigma_lo", "sigma_hi", "in_spectrum", "free_gamma_re",
                                 "free_gamma_im", "free_L"), rows)})


def run_lyapunov(v) -> Result:
    from .population import lyapunov_boundary

    seed, rows, flags, seeds = _seed(v), [], [], []
    for i, lam in enumerate(v["lambda"]):
        m = build_model(v, lam)
        for j, E in enumerate(v["E"]):
            s = seed.child(i, j)
            r = lyapunov_boundary(m, v["K"], float(E), v["pool"], v["sweeps"], s, tuple(v["eta"]),
                                  v["warm_sweeps"])
            rows.append((float(E), float(lam), r.L, r.stderr, r.eta, r.converged))
            flags += [f"E={E:g},lambda={lam:g}: {f}" for f in r.flags]
            seeds.append(list(s.stream_path))
    return Result({"lyapunov": (("E", "lambda", "L", "stderr", "eta", "converged"), rows)}, flags, seeds)


def _curve(v, lam, E, seed):
    from .population import estimate_free_energy

    m = build_model(v, lam)
    z = complex(E, float(v["eta"][-1]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        c = estimate_free_energy(m, z, v["s"], v["n"], v["chains"], seed, K=v["K"], P=v["pool"],
                                 sweeps=v["sweeps"])
    return c, [str(w.message) for w in caught]


def run_free_energy(v) -> Result:
    seed, rows, flags = _seed(v), [], []
    for i, lam in enumerate(v["lambda"]):
        for j, E in enumerate(v["E"]):
            c, f = _curve(v, lam, E, seed.child(i, j))
            flags += f
            rows += [(float(E), float(lam)) + r for r in c.rows()]
    return Result({"free_energy": (("E", "lambda", "s", "phi", "stderr", "n", "eta", "flagged"), rows)}, flags)


def run_rate_function(v) -> Result:
    from .population import legendre_rate

    seed, rows, flags = _seed(v), [], []
    for i, lam in enumerate(v["lambda"]):
        for j, E in enumerate(v["E"]):
            c, f = _curve(v, lam, E, seed.child(i, j))
            flags += f
            rf = legendre_rate(c)
            rows += [(float(E), float(lam), float(g), float(I), float(s))
                     for g, I, s in zip(rf.gamma_grid, rf.I, rf.s_of_gamma)]
    return Result({"rate_function": (("E", "lambda", "gamma", "I", "s_star"), rows)}, flags)


def run_dos(v) -> Result:
    from .population import estimate_dos

    m = build_model(v)
    d = estimate_dos(m, v["K"], v["E"], tuple(v["eta"]), v["pool"], v["sweeps"], _seed(v))
    flags = [f"E={E:g}: not converged" for E, c in zip(d.E_grid, d.converged) if not c]
    return Result({"dos": (("E", "eta", "rooted_D", "full_D", "stderr", "converged"), d.rows())}, flags)


PHASE_HEADER = ("E", "lambda", "L", "L_stderr", "phi1", "phi1_spread", "label", "margins")


def run_phase_scan(v) -> Result:
    from .phase import scan_phase_diagram

    m = build_model(v, 1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pd = scan_phase_diagram(m, v["K"], v["E"], v["lambda"], _budgets(v), _seed(v), v["workers"])
    flags = [str(w.message) for w in caught]
    for p in pd.points:
        flags += [f"E={p.E:g},lambda={p.lam:g}: {f}" for f in p.flags]
    seeds = [[i, j] for i in range(v["lambda"].size) for j in range(v["E"].size)]
    return Result({"phase": (PHASE_HEADER, [p.row() for p in pd.points])}, flags, seeds)


def run_edge(v) -> Result:
    from .phase import edge_analysis, edge_energy

    m = build_model(v)
    E_grid = None
    if v["E"].size > 1:
        E_grid = v["E"]
    ea = edge_analysis(m, v["K"], E_grid, _budgets(v), _seed(v), v["workers"])
    rows = [(float(E), float(L), float(se), ea.bound, bool(w))
            for E, L, se, w in zip(ea.E_grid, ea.L, ea.stderr, ea.within_bound)]
    summ = {"E_lambda": edge_energy(v["K"], m.lam), "lambda_star": ea.lambda_star, "classified_ac": ea.classified_ac}
    return Result({"edge": (("E", "L", "stderr", "bound", "within_bound"), rows)}, summary=summ)


def run_resonance(v) -> Result:
    from .population import estimate_lyapunov, pool_equilibrate
    from .resonance import ResonanceConfig, count_resonances

    m = build_model(v)
    E, eta = float(v["E"][0]), float(v["eta"][-1])
    seed = _seed(v)
    pool = pool_equilibrate(m, complex(E, eta), v["pool"], v["sweeps"], seed.child(0), v["K"])
    L, _ = estimate_lyapunov(pool)

    def opt(key):
        x = v[key]
        return None if not math.isfinite(x) else x

    cfg = ResonanceConfig(K=v["K"], n=v["resonance.n"], E=E, eta=eta, mode=v["resonance.mode"],
                          alpha=v["alpha"], L=L, delta=opt("resonance.delta"), tau=opt("resonance.tau"),
                          ell=opt("resonance.ell"), phi1=opt("ld.phi1"), kappa=opt("ld.kappa"),
                          s=v["tilt"], gamma=opt("ld.gamma"), eps=opt("ld.eps"), b=opt("ld.b"))
    st = count_resonances(cfg, m, v["trials"], seed.child(1), pool)
    flags = [f"constraint {k} not satisfied" for k, ok in cfg.constraints().items() if not ok]
    if st.zero_events:
        flags.append("zero events: no trial produced a resonance")
    summ = {"L": L, "mean": st.mean, "mean_stderr": st.mean_stderr, "second": st.second,
            "second_ratio": st.second_ratio, "p_any": st.p_any, "symmetry_mean": st.symmetry_mean,
            "symmetry_agree": st.symmetry_agree, "sampled": st.sampled}
    if st.sampled:
        flags.append("sampled-site mode: N is a scaled estimate, second moments unavailable")
    rows = [(t, float(N) if st.sampled else int(N)) for t, N in enumerate(st.N)]
    return Result({"resonance": (("trial", "N"), rows)}, flags, summary=summ)


# -- verification suites -------------------------------------------------

CHECK_HEADER = ("check", "parameter", "empirical", "stderr", "bound", "passed")


def verify_greens(v) -> Result:
    from .greens import (TreeGeometry, dense_green_oracle, krein_offdiag, path_green, realize,
                         sum_rule_residual, truncated_gamma)

    seed = _seed(v)
    rows = []
    rng = seed.child(0).generator()
    for t in range(20):
        K = int(rng.integers(2, 4))
        R = int(rng.integers(2, 6))
        geo = TreeGeometry(K, R, rooted=bool(t % 2))
        m = (cauchy if t % 3 else uniform)(float(rng.uniform(0.2, 2.0)))
        real = realize(geo, m, seed.child(1, t))
        z = complex(rng.uniform(-3, 3), 10 ** rng.uniform(-3, 0))
        x = geo.node_count - 1
        tab = dense_green_oracle(geo, real, z, [(0, 0), (0, x)])
        r1 = abs(truncated_gamma(geo, real, z) - tab[0, 0]) / abs(tab[0, 0])
        r2 = abs(path_green(geo, real, z, x) - tab[0, x]) / abs(tab[0, x])
        r3 = sum_rule_residual(geo, real, z) * z.imag ** 2
        y = geo.offsets[1]
        k = krein_offdiag(geo, real, z, y, x) if x != y else None
        r4 = 0.0 if k is None else abs(k.value - k.punctured) / max(abs(k.value), 1e-300)
        for name, r in (("root_gamma", r1), ("path_green", r2), ("sum_rule", r3), ("krein_paths", r4)):
            rows.append((name, t, r, 0.0, 1e-9, r <= 1e-9))
    return Result({"greens_identities": (CHECK_HEADER, rows)}, violation=not all(r[-1] for r in rows))


def verify_weak_l1(v) -> Result:
    from .greens import TreeGeometry
    from .resonance import weak_l1_suite

    m = build_model(v)
    geo = TreeGeometry(v["K"], min(v["R"], 5), rooted=True)
    z = complex(float(v["E"][0]), float(v["eta"][-1]))
    rep = weak_l1_suite(m, geo, z, max(v["trials"], 10_000), _seed(v), x=geo.node_count - 1, y=geo.node_count - 2,
                        t_grid=tuple(v["t"]))
    rows = [(c, p, e, se, b, ok) for c, p, e, se, b, ok in rep.rows]
    return Result({"weak_l1": (CHECK_HEADER, rows)}, violation=not rep.passed, summary={"A_abs": abs(rep.A)})


def verify_ldp(v) -> Result:
    from .population import estimate_free_energy, pool_equilibrate
    from .resonance import ldp_bounds_check

    m = build_model(v)
    seed = _seed(v)
    z = complex(float(v["E"][0]), float(v["eta"][-1]))
    pool = pool_equilibrate(m, z, v["pool"], v["sweeps"], seed.child(0), v["K"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = estimate_free_energy(m, z, v["s"], v["n"], v["chains"], seed.child(1), K=v["K"], pool=pool)
    rep = ldp_bounds_check(curve, pool, m, v["tilt"], v["eps"], [int(n) for n in v["ldp.n"]], v["chains"],
                           seed.child(2))
    rows = [("upper_bound", n, p, se, b, ok) for n, p, se, b, ok in rep.upper_rows]
    rows.append(("kappa_hat", v["eps"], rep.kappa, 0.0, 0.0, rep.kappa > 0))
    rows.append(("band_exit_slope", v["tilt"], rep.exit_slope, rep.exit_slope_stderr, -rep.kappa / 3,
                 rep.exit_ok))
    rows.append(("psi_overlay", 0, float(rep.psi_ok), 0.0, 1.0, rep.psi_ok))
    flags = ["insufficient decay in band-exit fit"] if rep.insufficient_decay else []
    ok = rep.upper_ok and rep.kappa > 0 and rep.exit_ok
    return Result({"ldp": (CHECK_HEADER, rows)}, flags, violation=not ok,
                  summary={"gamma": rep.gamma, "I": rep.I})


def verify_lifshitz(v) -> Result:
    from .phase import lifshitz_check

    m = build_model(v)
    tab = lifshitz_check(m, v["K"], v["R"], v["lifshitz.delta"], max(v["trials"], 1000), _seed(v))
    rows = [(float(d), float(p), float(se), int(c), bool(f))
            for d, p, se, c, f in zip(tab.delta, tab.prob, tab.stderr, tab.counts, tab.fit_mask)]
    ok = tab.exponent >= 1.2 and tab.holdout_ok
    return Result({"lifshitz": (("delta", "prob", "stderr", "count", "in_fit"), rows)}, violation=not ok,
                  summary={"exponent": tab.exponent, "exponent_stderr": tab.exponent_stderr, "C_hat": tab.C_hat,
                           "holdout_ok": tab.holdout_ok})


def verify_ray_sum(v) -> Result:
    from .phase import ray_sum_check

    m = build_model(v)
    rep = ray_sum_check(m, v["K"], v["R"], v["ray.alpha"], max(v["trials"], 1000), _seed(v))
    rows = [("ray_sum", rep.alpha, rep.prob, rep.stderr, rep.bound, rep.passed)]
    return Result({"ray_sum": (CHECK_HEADER, rows)}, violation=not rep.passed)


def verify_fekete(v) -> Result:
    from .population import fekete_check, log_products, pool_equilibrate, sample_gamma_chain

    m = build_model(v)
    seed = _seed(v)
    z = complex(float(v["E"][0]), float(v["eta"][-1]))
    pool = pool_equilibrate(m, z, v["pool"], v["sweeps"], seed.child(0), v["K"])
    ch = sample_gamma_chain(pool, m, z, 48, seed.child(1), v["chains"])
    rep = fekete_check(log_products(ch), v["tilt"], seed.child(2))
    rows = [(f"{n}+{m}", n + m + 1, r, sig, rep.log_C, good) for n, m, r, sig, good in rep.residuals]
    return Result({"fekete": (CHECK_HEADER, rows)}, violation=not rep.passed, summary={"log_C": rep.log_C})


RUNNERS = {
    "spectrum": run_spectrum,
    "lyapunov": run_lyapunov,
    "free-energy": run_free_energy,
    "rate-function": run_rate_function,
    "dos": run_dos,
    "phase-scan": run_phase_scan,
    "edge": run_edge,
    "resonance": run_resonance,
}
SUITE_RUNNERS = {
    "greens-identities": verify_greens,
    "weak-l1": verify_weak_l1,
    "ldp": verify_ldp,
    "lifshitz": verify_lifshitz,
    "ray-sum": verify_ray_sum,
    "fekete": verify_fekete,
}


def _json_safe(obj):
    # strict JSON has no NaN or infinity
    if isinstance(obj, dict):
        return {k: _json_safe(x) for k, x in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(x) for x in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return None
    return obj


def dispatch(config: RunConfig) -> int:
    v = config.values
    fn = SUITE_RUNNERS[config.suite] if config.subcommand == "verify" else RUNNERS[config.subcommand]
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = fn(v)
    flags = list(dict.fromkeys(res.flags + [str(w.message) for w in caught]))
    manifest = {
        "config": config.effective(),
        "sources": config.sources,
        "version": __version__,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "master_seed": v["seed"],
        "task_seeds": res.seeds,
        "flags": flags,
        "summary": _json_safe(res.summary),
        "bound_violation": res.violation,
    }
    write_outputs(res.tables, config, manifest)
    for f in flags[:5]:
        print(f"warning: {f}", file=sys.stderr)
    if len(flags) > 5:
        print(f"warning: {len(flags) - 5} more flags recorded in the manifest", file=sys.stderr)
    if res.violation:
        print("bound violation beyond slack", file=sys.stderr)
        return 2
    return 0


_OWN_FLAGS = ("--config", "--manifest", "-h", "--help")


def _split_flags(argv: list[str]) -> tuple[list[str], dict]:
    """Separate ``--key value`` config overrides from the parser's own arguments.

    Done by hand so that values such as ``-1`` are never mistaken for options.
    """
    own, out, i = [], {}, 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and tok.split("=", 1)[0] not in _OWN_FLAGS:
            if "=" in tok:
                key, val = tok[2:].split("=", 1)
                i += 1
            elif i + 1 < len(argv):
                key, val = tok[2:], argv[i + 1]
                i += 2
            else:
                raise ConfigError(tok, "expected '--key value'")
            out[key] = val
            continue
        own.append(tok)
        if tok in ("--config", "--manifest") and i + 1 < len(argv):
            own.append(argv[i + 1])
            i += 1
        i += 1
    return own, out


def _parser():
    p = argparse.ArgumentParser(prog="treespectra", description="Disordered tree spectra toolkit.")
    p.add_argument("subcommand", choices=SUBCOMMANDS + ("rerun",))
    p.add_argument("suite", nargs="?", help="verification suite (verify only)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--manifest", help="manifest to replay (rerun only)")
    return p


def config_from_argv(argv) -> RunConfig:
    own, overrides = _split_flags(list(argv))
    args = _parser().parse_args(own)
    if args.subcommand == "rerun":
        if not args.manifest:
            raise ConfigError("manifest", "rerun needs --manifest")
        with open(args.manifest) as fh:
            eff = json.load(fh)["config"]
        sub, suite = eff.pop("subcommand"), eff.pop("suite")
        eff.update(overrides)
        return parse_config("", eff, sub, suite)
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    return parse_config(text, overrides, args.subcommand, args.suite)


def main(argv=None) -> int:
    try:
        try:
            cfg = config_from_argv(sys.argv[1:] if argv is None else argv)
        except SystemExit as exc:
            # argparse usage errors exit 2, which is reserved for bound violations
            return 0 if exc.code in (0, None) else 1
        return dispatch(cfg)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # hard error, reported on stderr
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
