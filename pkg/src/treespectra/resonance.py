"""Resonance events, counting statistics, tilted sampling and bound checks.

Events live on the sphere ``S_n`` of a rooted ball ``B_{n+2}``.  Forward
Green functions below the ball come from an equilibrated pool, so the
finite core sees an infinite-tree boundary.

All per-site quantities are computed from two sweeps of the tree
recursion plus one recursion along each root-to-site path, vectorized
over sites.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .disorder import RealizationSeed
from .greens import (
    FiniteTreeRealization,
    TreeGeometry,
    backward_gammas,
    dense_green_oracle,
    diagonal_green,
    forward_gammas,
    krein_offdiag,
    root_row,
)
from .population import (
    FreeEnergyCurve,
    GammaPool,
    log_products,
    percentile_xi,
    pool_equilibrate,
    rate_at,
    sample_gamma_chain,
)

__all__ = [
    "ResonanceConfig",
    "EventTable",
    "EventRecord",
    "CountStatistics",
    "MicroOracle",
    "TiltedSampler",
    "TiltedEstimate",
    "LowESSWarning",
    "ldp_constraints",
    "pool_boundary",
    "evaluate_events",
    "recompute_indicators",
    "blowup_holds",
    "count_resonances",
    "enumerate_counts",
    "im_lower_bound",
    "pool_chain_source",
    "tilted_expectation",
    "kappa_hat",
    "derivative_at",
    "ldp_bounds_check",
    "LdpReport",
    "weak_l1_suite",
    "WeakL1Report",
    "tightness_diagnostic",
    "thinned_sphere",
]


MAX_SPHERE = 16384
MAX_BALL_NODES = 1 << 22


class LowESSWarning(UserWarning):
    pass


# -- configuration -------------------------------------------------------

@dataclass(frozen=True)
class ResonanceConfig:
    """Parameters of the resonance events.

    ``mode='lyapunov'``: ``4 delta = log K - L``, ``tau = e^{(L + 2 delta) n}``
    and ``ell = L + delta`` unless given explicitly.

    ``mode='ld'``: needs ``phi1`` (for ``Delta = log K + phi1``), ``kappa``,
    ``gamma``, ``eps``, ``b`` and ``ell``; ``tau = e^{(gamma + 3 Delta / 4) N_kappa}``.
    """

    K: int
    n: int
    E: float
    eta: float
    mode: str = "lyapunov"
    alpha: float = 0.5
    L: float | None = None
    delta: float | None = None
    tau: float | None = None
    ell: float | None = None
    phi1: float | None = None
    kappa: float | None = None
    s: float | None = None
    gamma: float | None = None
    eps: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.mode not in ("lyapunov", "ld"):
            raise ValueError("mode must be 'lyapunov' or 'ld'")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.mode == "lyapunov":
            if self.L is None and (self.tau is None or self.ell is None):
                raise ValueError("lyapunov mode needs L, or explicit tau and ell")
        else:
            for name in ("phi1", "kappa", "gamma", "eps", "b", "ell"):
                if getattr(self, name) is None:
                    raise ValueError(f"ld mode needs {name}")
            if self.n < 4 * math.ceil(1 / self.kappa):
                raise ValueError("ld mode needs n >= 4 * ceil(1 / kappa)")

    @property
    def zeta(self) -> complex:
        return complex(self.E, self.eta)

    @property
    def delta_eff(self) -> float:
        if self.delta is not None:
            return self.delta
        if self.L is None:
            return float("nan")
        return (math.log(self.K) - self.L) / 4

    @property
    def Delta(self) -> float:
        return math.log(self.K) + self.phi1 if self.phi1 is not None else float("nan")

    @property
    def n_kappa(self) -> int:
        return 2 * int(math.floor(self.kappa * self.n / 2)) if self.mode == "ld" else 0

    @property
    def N_kappa(self) -> int:
        return self.n - self.n_kappa

    @property
    def ell_eff(self) -> float:
        if self.ell is not None:
            return self.ell
        return self.L + self.delta_eff

    @property
    def log_tau(self) -> float:
        if self.tau is not None:
            return math.log(self.tau)
        if self.mode == "lyapunov":
            return (self.L + 2 * self.delta_eff) * self.n
        return (self.gamma + 0.75 * self.Delta) * self.N_kappa

    def constraints(self) -> dict:
        """Which of the parameter conditions this configuration satisfies."""
        logK = math.log(self.K)
        if self.mode == "lyapunov":
            d4 = 4 * self.delta_eff
            return {"delta_window": bool(0 < d4 < 0.5 * logK)}
        return ldp_constraints(self.K, self.Delta, self.ell_eff, self.kappa, self.eps, self.s)


def ldp_constraints(K, Delta, ell, kappa, eps, s=None) -> dict:
    logK = math.log(K)
    out = {
        "Delta_window": bool(0 < Delta < 0.5 * logK),
        "kappa_window": bool(0 < kappa < min(Delta / (16 * ell), 0.25)) if ell > 0 else False,
        "eps_window": bool(0 < 2 * eps < min(Delta / 24, kappa * Delta / 4)),
    }
    if s is not None:
        out["s_near_one"] = bool(1 - s < 1 / 16)
    return out


def thinned_sphere(geometry: TreeGeometry, n: int, n_kappa: int) -> np.ndarray:
    """Depth-``n`` sites whose last ``n_kappa`` steps take the first child."""
    sites = np.arange(geometry.offsets[n - n_kappa], geometry.offsets[n - n_kappa + 1])
    for d in range(n - n_kappa, n):
        sites = geometry.offsets[d + 1] + (sites - geometry.offsets[d]) * geometry.branching(d)
    return sites


# -- events --------------------------------------------------------------

@dataclass
class EventTable:
    """Green quantities and indicators for a set of sphere sites (arrays over sites)."""

    sites: np.ndarray
    G_xx: np.ndarray
    G_0x: np.ndarray
    G_cut: np.ndarray  # |G^{T_x}(0, x_-)|
    im_forward: np.ndarray  # shape (sites, K)
    xi: float
    E: np.ndarray
    R: np.ndarray
    I: np.ndarray
    ld: dict = field(default_factory=dict)

    @property
    def joint(self) -> np.ndarray:
        if self.ld:
            return self.E & self.ld["L"] & self.R & self.I
        return self.E & self.R & self.I

    def records(self) -> list:
        out = []
        for k, x in enumerate(self.sites):
            extra = {key: (val[k] if isinstance(val, np.ndarray) else val) for key, val in self.ld.items()}
            out.append(EventRecord(int(x), complex(self.G_xx[k]), complex(self.G_0x[k]), float(self.G_cut[k]),
                                   self.im_forward[k].copy(), bool(self.E[k]), bool(self.R[k]),
                                   bool(self.I[k]), extra))
        return out


@dataclass
class EventRecord:
    site: int
    G_xx: complex
    G_0x: complex
    G_cut: float
    im_forward: np.ndarray
    E: bool
    R: bool
    I: bool
    ld: dict


def pool_boundary(geometry: TreeGeometry, pool: GammaPool, rng: np.random.Generator) -> np.ndarray:
    """Summed pool draws hanging below each leaf."""
    n_leaf = int(geometry.level_counts[-1])
    return pool.draw(rng, (n_leaf, geometry.K)).sum(axis=1)


def _paths(geometry: TreeGeometry, sites: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((sites.size, n + 1), dtype=np.int64)
    out[:, n] = sites
    for j in range(n - 1, -1, -1):
        out[:, j] = geometry.parent[out[:, j + 1]]
    return out


def evaluate_events(config: ResonanceConfig, realization: FiniteTreeRealization, xi: float,
                    leaf_sigma=None, sites=None) -> EventTable:
    """All event indicators at the sphere sites of ``realization``.

    The realization must live on the rooted ball ``B_{n+2}``.  ``xi`` is the
    percentile threshold for the marginality event.
    """
    geo = realization.geometry
    n, K = config.n, config.K
    if geo.R != n + 2 or geo.K != K or not geo.rooted:
        raise ValueError("realization must live on the rooted ball B_{n+2}")
    z = config.zeta
    pot = realization.potentials
    gam = forward_gammas(geo, realization, z, leaf_sigma)
    up = backward_gammas(geo, realization, z, gam, leaf_sigma)
    diag = diagonal_green(geo, realization, z, leaf_sigma)
    row = root_row(geo, realization, z, gammas=gam)
    csum = np.zeros(geo.node_count, dtype=complex)
    np.add.at(csum, geo.parent[1:], gam[1:])
    if sites is None:
        sites = np.arange(geo.offsets[n], geo.offsets[n + 1])
        if config.mode == "ld":
            sites = thinned_sphere(geo, n, config.n_kappa)
    sites = np.asarray(sites, dtype=np.int64)
    path = _paths(geo, sites, n)

    # forward Green functions along the path with x deleted
    gx = np.empty((sites.size, n), dtype=complex)
    p = path[:, n - 1]
    gx[:, n - 1] = 1.0 / (pot[p] - z - (csum[p] - gam[path[:, n]]))
    for j in range(n - 2, -1, -1):
        p = path[:, j]
        gx[:, j] = 1.0 / (pot[p] - z - (csum[p] - gam[path[:, j + 1]] + gx[:, j + 1]))
    G_cut = np.exp(np.log(np.abs(gx)).sum(axis=1))

    kids = np.stack([geo.offsets[n + 1] + (sites - geo.offsets[n]) * K + c for c in range(K)], axis=1)
    im_fwd = gam[kids].imag
    G_xx = diag[sites]
    logtau = config.log_tau
    Ev = np.log(np.abs(G_xx)) >= logtau
    Iv = (im_fwd >= xi).any(axis=1)
    ld = {}
    if config.mode == "lyapunov":
        Rv = np.log(G_cut) >= -config.ell_eff * n
    else:
        nk, Nk = config.n_kappa, config.N_kappa
        ymk = path[:, nk - 1]
        # G^{T_x}(0, x_{nk-1}) and G^{T_x}(x_{nk-1}, x_{nk-1})
        g_seg = np.exp(np.log(np.abs(gx[:, :nk])).sum(axis=1))
        g_bc = 1.0 / (pot[ymk] - z - (csum[ymk] - gam[path[:, nk]] + gx[:, nk]) - up[ymk])
        plus = gx[:, n - 1:nk - 1:-1]
        minus = np.empty((sites.size, Nk), dtype=complex)
        prev = np.zeros(sites.size, dtype=complex)
        for j in range(1, Nk + 1):
            v = path[:, nk - 1 + j]
            minus[:, j - 1] = 1.0 / (pot[v] - z - (csum[v] - gam[path[:, nk + j]]) - prev)
            prev = minus[:, j - 1]
        ld = _ld_indicators(config, g_seg, g_bc, plus, minus)
        Rv = ld["R"]
    return EventTable(sites, G_xx, row[sites], G_cut, im_fwd, float(xi), Ev, Rv, Iv, ld)


def _band(logs: np.ndarray, gamma: float, eps: float, k0: int) -> np.ndarray:
    k = np.arange(1, logs.shape[1] + 1)
    cum = np.cumsum(logs, axis=1)
    inside = np.abs(cum + gamma * k) <= eps * k
    return inside[:, k0 - 1:].all(axis=1)


def _ld_indicators(config, g_seg, g_bc, plus, minus) -> dict:
    nk, Nk, ell = config.n_kappa, config.N_kappa, config.ell_eff
    k0 = max(1, nk // 2)
    lp, lm = np.log(np.abs(plus)), np.log(np.abs(minus))
    L_plus = _band(lp, config.gamma, config.eps, k0)
    L_minus = _band(lm, config.gamma, config.eps, k0)
    L_bc = (np.abs(plus[:, -1]) <= config.b / 2) & (np.abs(minus[:, -1]) <= config.b / 2)
    R_bc = np.abs(g_bc) <= config.b / 2
    seg_ok = (g_seg >= math.exp(-nk * ell)) & (g_seg <= 1.0)
    return {
        "L": L_plus & L_minus & L_bc,
        "L_plus": L_plus,
        "L_minus": L_minus,
        "L_bc": L_bc,
        "R": R_bc & seg_ok,
        "R_bc": R_bc,
        "G_seg": g_seg,
        "G_bc": np.abs(g_bc),
        "log_prod_plus": lp.sum(axis=1),
        "log_prod_minus": lm.sum(axis=1),
    }


def blowup_holds(table: EventTable, config: ResonanceConfig) -> np.ndarray:
    """Whether ``|G(0,x)|`` reaches the guaranteed size at each jointly resonant site.

    Lyapunov mode: ``e^{delta n}``; LD mode: ``e^{3 Delta n / 8}``.
    """
    rate = config.delta_eff if config.mode == "lyapunov" else 0.375 * config.Delta
    ok = np.log(np.abs(table.G_0x)) >= rate * config.n - 1e-9
    return ok[table.joint]


def recompute_indicators(table: EventTable, config: ResonanceConfig) -> dict:
    """Lyapunov-mode indicators from the stored Green quantities alone."""
    return {
        "E": np.log(np.abs(table.G_xx)) >= config.log_tau,
        "R": np.log(table.G_cut) >= -config.ell_eff * config.n,
        "I": (table.im_forward >= table.xi).any(axis=1),
    }


def im_lower_bound(geometry, realization, zeta, n: int, leaf_sigma=None) -> tuple[float, float]:
    """Both sides of ``Im Gamma(0) >= sum_{x in S_n} |G(0,x)|^2 sum_{y fwd of x} Im Gamma(y)``."""
    gam = forward_gammas(geometry, realization, zeta, leaf_sigma)
    row = root_row(geometry, realization, zeta, gammas=gam)
    sphere = geometry.level(n)
    if n + 1 < geometry.R:
        fwd = gam[geometry.level(n + 1)].imag.reshape(-1, geometry.branching(n)).sum(axis=1)
    else:
        fwd = np.broadcast_to(np.asarray(leaf_sigma if leaf_sigma is not None else 0.0), (sphere.stop - sphere.start,)).imag
    rhs = float(np.sum(np.abs(row[sphere]) ** 2 * fwd))
    return float(gam[0].imag), rhs


# -- counting ------------------------------------------------------------

@dataclass
class CountStatistics:
    N: np.ndarray
    trials: int
    mean: float
    mean_stderr: float
    fact2: float
    second: float
    second_ratio: float
    p_any: float
    p_site: float
    symmetry_mean: float
    symmetry_stderr: float
    symmetry_agree: bool
    zero_events: bool
    sampled: bool = False


def count_resonances(config: ResonanceConfig, model, trials: int, seed: RealizationSeed,
                     pool: GammaPool | None = None, xi: float | None = None,
                     sample_sites: int = 1024) -> CountStatistics:
    """Per-trial resonance counts on the sphere.

    With a pool the leaves get pool-fed boundaries and ``xi`` defaults to
    the pool percentile; without one the ball is cut off and ``xi`` is
    required.

    Spheres above ``MAX_SPHERE`` sites switch to sampled-site mode: each
    trial evaluates ``sample_sites`` uniformly drawn sites and ``N`` is the
    scaled hit count.  That estimate is unbiased for the mean only, so the
    second moments and ``P(N >= 1)`` are reported as NaN.
    """
    if trials < 1000:
        raise ValueError("count_resonances needs at least 1000 trials")
    geo = TreeGeometry(config.K, config.n + 2, rooted=True)
    sites = evaluate_sites(config, geo)
    sampled = sites.size > MAX_SPHERE
    if sampled:
        if geo.node_count > MAX_BALL_NODES:
            raise ValueError(f"ball of {geo.node_count} sites exceeds the cap of {MAX_BALL_NODES}")
        if not 1 <= sample_sites <= sites.size:
            raise ValueError("sample_sites must lie in [1, sphere size]")
    if xi is None:
        if pool is None:
            raise ValueError("xi is required without a pool")
        xi = percentile_xi(pool.values.imag, config.alpha)
    N = np.empty(trials)
    site_hit = np.empty(trials, dtype=bool)
    for t in range(trials):
        rng = seed.child(t).generator()
        pot = model.sample_scaled(rng, geo.node_count)
        real = FiniteTreeRealization(geo, pot)
        leaf = pool_boundary(geo, pool, rng) if pool is not None else None
        pick = rng.choice(sites, size=sample_sites, replace=False) if sampled else None
        j = evaluate_events(config, real, xi, leaf, pick).joint
        N[t] = sites.size * j.mean() if sampled else j.sum()
        site_hit[t] = j[0]
    return _count_stats(N, site_hit, sites.size, sampled)


def evaluate_sites(config, geo):
    n = config.n
    if config.mode == "ld":
        return thinned_sphere(geo, n, config.n_kappa)
    return np.arange(geo.offsets[n], geo.offsets[n + 1])


def _count_stats(N, site_hit, n_sites, sampled=False) -> CountStatistics:
    T = N.size
    mean = float(N.mean())
    se = float(N.std(ddof=1) / math.sqrt(T)) if T > 1 else 0.0
    if sampled:
        fact2 = second = ratio = p_any = float("nan")
    else:
        fact2 = float(np.mean(N * (N - 1)))
        second = float(np.mean(N * N))
        ratio = mean * mean / second if second > 0 else float("nan")
        p_any = float((N >= 1).mean())
    p_site = float(site_hit.mean())
    sym = n_sites * p_site
    sym_se = n_sites * math.sqrt(max(p_site * (1 - p_site), 1.0 / T) / T)
    agree = abs(sym - mean) <= 3 * math.hypot(se, sym_se)
    return CountStatistics(N, T, mean, se, fact2, second, ratio, p_any, p_site, sym, sym_se,
                           bool(agree), bool(N.max() == 0), sampled)


@dataclass
class MicroOracle:
    p_any: float
    mean: float
    second: float
    cauchy_schwarz_holds: bool


def enumerate_counts(config: ResonanceConfig, atoms, probs, xi: float) -> MicroOracle:
    """Exact count moments by enumerating every atomic potential assignment.

    The ball ``B_{n+2}`` is cut off (no boundary) and ``xi`` is fixed.
    """
    geo = TreeGeometry(config.K, config.n + 2, rooted=True)
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    nodes = geo.node_count
    if len(atoms) ** nodes > 200_000:
        raise ValueError("enumeration too large")
    p_any = mean = second = 0.0
    for combo in itertools.product(range(len(atoms)), repeat=nodes):
        idx = np.asarray(combo)
        w = float(np.prod(probs[idx]))
        tab = evaluate_events(config, FiniteTreeRealization(geo, atoms[idx]), xi)
        N = int(tab.joint.sum())
        p_any += w * (N >= 1)
        mean += w * N
        second += w * N * N
    holds = second == 0 or p_any >= mean * mean / second
    return MicroOracle(p_any, mean, second, bool(holds))


# -- tilted sampling -----------------------------------------------------

def pool_chain_source(pool: GammaPool, model, zeta, n: int):
    """Chains of ``n`` forward Green functions (the path from the root to depth ``n - 1``)."""

    def source(seed: RealizationSeed, chains: int) -> np.ndarray:
        return sample_gamma_chain(pool, model, zeta, n - 1, seed, chains)

    return source


@dataclass
class TiltedSampler:
    """Chains reweighted by ``prod |Gamma_j|^s``."""

    s: float
    source: object
    moment_exponent: float = 0.5

    def __post_init__(self):
        if not -self.moment_exponent <= self.s <= 0.95:
            raise ValueError(f"tilt exponent must lie in [-{self.moment_exponent:g}, 0.95]")

    def draw(self, chains: int, seed: RealizationSeed):
        ch = self.source(seed, chains)
        logw = self.s * np.log(np.abs(ch)).sum(axis=1)
        return ch, logw


@dataclass
class TiltedEstimate:
    value: float
    stderr: float
    ess: float
    log_norm: float


def _tilted(q: np.ndarray, logw: np.ndarray) -> TiltedEstimate:
    shift = logw.max()
    w = np.exp(logw - shift)
    W = w.sum()
    mu = float(w @ q / W)
    se = float(math.sqrt(np.sum(w * w * (q - mu) ** 2)) / W)
    ess = float(W * W / np.sum(w * w))
    log_norm = float(math.log(W / w.size) + shift)
    return TiltedEstimate(mu, se, ess, log_norm)


def tilted_expectation(sampler: TiltedSampler, observable, chains: int, seed: RealizationSeed) -> TiltedEstimate:
    """Self-normalized estimate of the tilted mean of ``observable(chain)``."""
    ch, logw = sampler.draw(chains, seed)
    q = np.asarray(observable(ch), dtype=float)
    est = _tilted(q, logw)
    if est.ess < 0.05 * chains:
        warnings.warn(f"effective sample size {est.ess:.0f} below 5% of {chains}", LowESSWarning, stacklevel=2)
    return est


# -- large-deviation checks ----------------------------------------------

def derivative_at(curve: FreeEnergyCurve, s: float) -> float:
    """Average of the one-sided slopes of the interpolant at a grid node ``s``."""
    sg, ph = curve.s_grid, curve.phi
    i = int(np.argmin(np.abs(sg - s)))
    if not np.isclose(sg[i], s) or i == 0 or i == sg.size - 1:
        raise ValueError("s must be an interior grid node")
    left = (ph[i] - ph[i - 1]) / (sg[i] - sg[i - 1])
    right = (ph[i + 1] - ph[i]) / (sg[i + 1] - sg[i])
    return 0.5 * (left + right)


def kappa_hat(curve: FreeEnergyCurve, s: float, eps: float) -> tuple[float, float, float]:
    """Error margins ``(kappa, kappa_minus, kappa_plus)`` from the fitted curve.

    ``kappa_pm = sup over Delta of sign pm of
    [phi(s) + phi'(s) Delta + eps |Delta| - phi(s + Delta)]`` on the grid.
    """
    sg, ph = curve.s_grid, curve.phi
    i = int(np.argmin(np.abs(sg - s)))
    d = derivative_at(curve, s)
    D = sg - sg[i]
    gap = ph[i] + d * D + eps * np.abs(D) - ph
    kp = float(gap[D > 0].max()) if np.any(D > 0) else 0.0
    km = float(gap[D < 0].max()) if np.any(D < 0) else 0.0
    return min(kp, km), km, kp


@dataclass
class LdpReport:
    s: float
    gamma: float
    I: float
    eps: float
    upper_rows: list
    upper_ok: bool
    kappa: float
    exit_ell: np.ndarray
    exit_frac: np.ndarray
    exit_slope: float
    exit_slope_stderr: float
    exit_ok: bool
    insufficient_decay: bool
    psi_rows: list
    psi_ok: bool


def ldp_bounds_check(curve: FreeEnergyCurve, pool: GammaPool, model, s: float, eps: float, n_grid,
                     chains: int, seed: RealizationSeed, t_grid=(0.25, 0.5, 0.75)) -> LdpReport:
    """Empirical checks of the large-deviation upper bound and tilted concentration."""
    z = pool.zeta
    gamma = -derivative_at(curve, s)
    I = float(rate_at(curve, gamma)[0][0])
    n_grid = [int(n) for n in n_grid]
    upper, ok = [], True
    psi_rows, psi_ok, prev = [], True, None
    chains_by_n = {}
    for k, n in enumerate(n_grid):
        ch = sample_gamma_chain(pool, model, z, n - 1, seed.child(0, k), chains)
        lp = np.log(np.abs(ch)).sum(axis=1)
        chains_by_n[n] = ch
        p = float(np.mean(lp >= -(gamma + eps) * n))
        bound = math.exp(-I * n + 2 * eps * n)
        se = math.sqrt(max(p * (1 - p), 1.0 / chains) / chains)
        good = p <= bound + 5 * se
        ok &= good
        upper.append((n, p, se, bound, good))
        # finite-length free energy psi_N(t) with a bootstrap-free delta-method error
        row = []
        for t in t_grid:
            w = np.exp(t * lp - (t * lp).max())
            m = w.mean()
            row.append((t, (math.log(m) + (t * lp).max()) / n, float(w.std(ddof=1) / (m * math.sqrt(chains) * n))))
        if prev is not None:
            for (t, a, sa), (_, b, sb) in zip(prev, row):
                psi_ok &= abs(a - b) <= 5 * math.hypot(sa, sb) + 2.0 / min(n, prev_n)
        psi_rows.append((n, row))
        prev, prev_n = row, n
    # tilted band exits along the longest chains
    kap = kappa_hat(curve, s, eps)[0]
    ch = chains_by_n[n_grid[-1]]
    logs = np.log(np.abs(ch))
    cum = np.cumsum(logs, axis=1)
    logw = s * cum[:, -1]
    ells = np.unique(np.linspace(5, ch.shape[1], 12).astype(int))
    frac = []
    for ell in ells:
        out = np.abs(cum[:, ell - 1] + gamma * ell) > eps * ell
        frac.append(_tilted(out.astype(float), logw))
    f = np.array([e.value for e in frac])
    fse = np.array([e.stderr for e in frac])
    use = f > 0
    if use.sum() >= 3:
        x, y = ells[use].astype(float), np.log(f[use])
        wts = (f[use] / np.maximum(fse[use], 1e-300)) ** 2
        xc = x - np.sum(wts * x) / wts.sum()
        slope = float(np.sum(wts * xc * y) / np.sum(wts * xc * xc))
        slope_se = float(math.sqrt(1.0 / np.sum(wts * xc * xc)))
        insufficient = slope_se > abs(kap) / 3 or not np.isfinite(slope_se)
        exit_ok = slope <= -kap / 3 + 3 * slope_se
    else:
        slope, slope_se, insufficient, exit_ok = float("nan"), float("nan"), True, True
    return LdpReport(s, gamma, I, eps, upper, bool(ok), kap, ells, f, slope, slope_se, bool(exit_ok),
                     bool(insufficient), psi_rows, bool(psi_ok))


# -- weak-L1 suite -------------------------------------------------------

@dataclass
class WeakL1Report:
    rows: list  # (check, parameter, empirical, stderr, bound, passed)
    A: complex
    passed: bool


def weak_l1_suite(model, geometry: TreeGeometry, zeta, trials: int, seed: RealizationSeed, x: int = 0,
                  y: int | None = None, t_grid=(2.0, 5.0, 10.0, 20.0), s: float = 0.5,
                  removed=(), t_pair=None) -> WeakL1Report:
    """Conditional single-site tail, fractional moment and two-site tail.

    The realization off the resampled sites is frozen; ``V(x)`` (and
    ``V(y)``) are resampled ``trials`` times through the rank-one and
    rank-two Krein forms.
    """
    lam, rho = model.lam, model.sup_norm
    rng = seed.generator()
    pot = model.sample_scaled(rng, geometry.node_count)
    real = FiniteTreeRealization(geometry, pot)
    if y is None:
        y = geometry.node_count - 1
    removed = tuple(removed)
    z = complex(zeta)
    tab = dense_green_oracle(geometry, real, z, [(x, x), (y, y), (x, y)], removed)
    rows = []
    # single site: G(x,x) = 1 / (lam V - a)
    a = pot[x] - 1.0 / tab[x, x]
    v = model.sample_scaled(rng, trials)
    g = np.abs(1.0 / (v - a))
    for t in t_grid:
        p = float(np.mean(g > t))
        se = math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
        bound = 2 * rho / (lam * t)
        rows.append(("tail", t, p, se, bound, p <= bound + 5 * se))
    m = g ** s
    mom, mse = float(m.mean()), float(m.std(ddof=1) / math.sqrt(trials))
    mbound = 2 ** s * rho ** s / ((1 - s) * lam ** s)
    rows.append(("moment", s, mom, mse, mbound, mom <= mbound + 5 * mse))
    # two sites: block = (D + M)^-1 with M fixed
    G2 = np.array([[tab[x, x], tab[x, y]], [tab[x, y], tab[y, y]]])
    M = np.linalg.inv(G2) - np.diag([pot[x], pot[y]])
    kr = krein_offdiag(geometry, real, z, x, y, removed)
    A = kr.value
    vx, vy = model.sample_scaled(rng, trials), model.sample_scaled(rng, trials)
    a11, a22 = vx + M[0, 0], vy + M[1, 1]
    det = a11 * a22 - M[0, 1] * M[1, 0]
    gxx, gyy = np.abs(a22 / det), np.abs(a11 / det)
    for t in (t_grid if t_pair is None else t_pair):
        p = float(np.mean((gxx > t) & (gyy > t)))
        se = math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
        bound = 2 * rho / (lam ** 2 * t) * min(4 * rho * (abs(A) + 1.0 / t), 1.0)
        rows.append(("two_site", t, p, se, bound, p <= bound + 5 * se))
    return WeakL1Report(rows, A, all(r[-1] for r in rows))


# -- tightness -----------------------------------------------------------

def tightness_diagnostic(model, K: int, E: float, eta_sequence, alpha: float, beta: float, P: int, sweeps: int,
                         seed: RealizationSeed, theta_factor: float = 10.0) -> list:
    """Per ``eta``: ``xi(alpha)``, ``xi(beta)``, their ratio, the median of
    ``Im Gamma`` and the fraction of ``Im Gamma`` below ``theta_factor * eta``.
    """
    rows, init = [], None
    for i, eta in enumerate(eta_sequence):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pool = pool_equilibrate(model, complex(E, eta), P, sweeps, seed.child(i), K, init)
        im = pool.values.imag
        xa, xb = percentile_xi(im, alpha), percentile_xi(im, beta)
        rows.append((eta, xa, xb, xa / xb, float(np.median(im)), float(np.mean(im < theta_factor * eta))))
        init = pool.values
    return rows
