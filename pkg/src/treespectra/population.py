"""Population dynamics for the infinite tree and the estimators built on it.

A pool of ``P`` complex values approximates the stationary law of the
forward Green function.  One sweep replaces every member by
``1 / (lam V - zeta - sum of K random members)`` with fresh ``V``.

Estimators here: Lyapunov exponent, fractional-moment free energy,
Legendre rate function, density of states, and the upper percentile of
``Im Gamma``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .disorder import RealizationSeed
from .greens import free_gamma

__all__ = [
    "ETA_SEQUENCE",
    "GammaPool",
    "NotEquilibratedWarning",
    "HeavyTailWarning",
    "pool_equilibrate",
    "estimate_lyapunov",
    "lyapunov_boundary",
    "LyapunovResult",
    "build_chain",
    "sample_gamma_chain",
    "log_products",
    "FreeEnergyCurve",
    "estimate_free_energy",
    "free_energy_from_logs",
    "RateFunction",
    "legendre_rate",
    "rate_at",
    "DosEstimate",
    "estimate_dos",
    "percentile_xi",
    "moment_sequence",
    "fekete_check",
    "FeketeReport",
    "batch_stderr",
]

ETA_SEQUENCE = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)
N_BATCHES = 50
N_BOOT = 200
MOM_BLOCKS = 10
MOM_THRESHOLD = 0.7


class NotEquilibratedWarning(UserWarning):
    pass


class HeavyTailWarning(UserWarning):
    pass


def _is_free(model) -> bool:
    return model.lam == 0.0 or model.family == "none"


def batch_stderr(x: np.ndarray, batches: int = N_BATCHES) -> float:
    x = np.asarray(x, dtype=float)
    b = min(batches, x.size)
    if b < 2:
        return 0.0
    means = np.array([c.mean() for c in np.array_split(x, b)])
    return float(means.std(ddof=1) / np.sqrt(b))


# -- pool ----------------------------------------------------------------

@dataclass
class GammaPool:
    """Pool of forward Green functions made of independent sub-pools.

    Members of a sub-pool only ever draw neighbors from the same sub-pool,
    so the sub-pools are independent replicas and their spread gives an
    honest standard error.  ``batch_trace[t, b]`` is the mean ``log|Gamma|``
    of sub-pool ``b`` after sweep ``t``.
    """

    values: np.ndarray
    zeta: complex
    model: object
    K: int
    sweep_count: int
    batch_trace: np.ndarray
    drift: float
    equilibrated: bool
    seed: RealizationSeed | None = None

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def batches(self) -> int:
        return self.batch_trace.shape[1]

    @property
    def mean_log_trace(self) -> np.ndarray:
        return self.batch_trace.mean(axis=1)

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self.values[rng.integers(0, self.values.size, size=shape)]


def _drift(trace: np.ndarray) -> float:
    w = max(2, int(math.ceil(0.2 * trace.size)))
    window = trace[-w:]
    h = window.size // 2
    if h == 0:
        return float("inf")
    return float(abs(window[h:].mean() - window[:h].mean()))


def pool_equilibrate(model, zeta, P: int, sweeps: int, seed: RealizationSeed, K: int = 2,
                     init: np.ndarray | None = None, tol: float = 1e-3,
                     batches: int = N_BATCHES) -> GammaPool:
    """Run ``sweeps`` full replacements of a pool of size ``P``.

    The pool is split into ``batches`` independent sub-pools (``P`` is
    rounded down to a multiple).  Starts from the free solution unless
    ``init`` (a warm start) is given.  Warns with
    :class:`NotEquilibratedWarning` when the mean of ``log|Gamma|`` drifts
    by more than ``tol`` across the last fifth of the sweeps.
    """
    if sweeps < 1:
        raise ValueError("sweep count must be positive")
    batches = max(1, min(batches, P))
    bs = P // batches
    if bs < 1:
        raise ValueError("pool size must be positive")
    P = bs * batches
    z = complex(zeta)
    if z.imag <= 0:
        raise ValueError("eta must be positive")
    rng = seed.generator()
    if init is None:
        vals = np.full(P, free_gamma(K, z), dtype=complex)
    else:
        vals = rng.choice(np.asarray(init, dtype=complex), size=P)
    base = np.repeat(np.arange(batches) * bs, bs)[:, None]
    trace = np.empty((sweeps, batches))
    for t in range(sweeps):
        nbr = vals[base + rng.integers(0, bs, size=(P, K))].sum(axis=1)
        vals = 1.0 / (model.sample_scaled(rng, P) - z - nbr)
        trace[t] = np.log(np.abs(vals)).reshape(batches, bs).mean(axis=1)
    drift = _drift(trace.mean(axis=1))
    ok = drift < tol
    if not ok:
        warnings.warn(f"pool not equilibrated at zeta={z}: drift {drift:.2e}", NotEquilibratedWarning,
                      stacklevel=2)
    return GammaPool(vals, z, model, K, sweeps, trace, drift, ok, seed)


def estimate_lyapunov(pool: GammaPool, measure: int | None = None) -> tuple[float, float]:
    """``-mean log|Gamma|`` with a batch-means standard error over sub-pools.

    Each sub-pool is averaged over its last ``measure`` sweeps (default: the
    last fifth, at least one).
    """
    if measure is None:
        measure = max(1, pool.sweep_count // 5)
    per_batch = -pool.batch_trace[-measure:].mean(axis=0)
    b = per_batch.size
    se = float(per_batch.std(ddof=1) / math.sqrt(b)) if b > 1 else 0.0
    return float(per_batch.mean()), se


@dataclass
class LyapunovResult:
    E: float
    L: float
    stderr: float
    eta: float
    per_eta: list = field(default_factory=list)
    converged: bool = True
    flags: list = field(default_factory=list)


def lyapunov_boundary(model, K: int, E: float, P: int, sweeps: int, seed: RealizationSeed,
                      eta_sequence=ETA_SEQUENCE, warm_sweeps: int | None = None) -> LyapunovResult:
    """Lyapunov exponent at ``E + i0``.

    Evaluated along ``eta_sequence`` with warm starts; the value at the
    smallest ``eta`` is reported.  Without disorder the recursion is
    deterministic and the boundary value is taken from the free branch.
    """
    if _is_free(model):
        L = -math.log(abs(free_gamma(K, complex(E, 0.0))))
        return LyapunovResult(E, L, 0.0, 0.0, [(0.0, L, 0.0)])
    warm_sweeps = sweeps if warm_sweeps is None else warm_sweeps
    per, flags, init = [], [], None
    for i, eta in enumerate(eta_sequence):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NotEquilibratedWarning)
            pool = pool_equilibrate(model, complex(E, eta), P, sweeps if init is None else warm_sweeps,
                                    seed.child(i), K, init)
        if caught:
            flags.append(f"not_equilibrated@eta={eta:g}")
        L, se = estimate_lyapunov(pool)
        per.append((eta, L, se))
        init = pool.values
    converged = True
    if len(per) >= 2:
        (_, l1, s1), (_, l2, s2) = per[-2], per[-1]
        converged = abs(l1 - l2) < 3 * math.hypot(s1, s2) + 1e-12
        if not converged:
            flags.append("eta_not_converged")
    eta, L, se = per[-1]
    return LyapunovResult(E, L, se, eta, per, converged, flags)


# -- chains --------------------------------------------------------------

def build_chain(potentials: np.ndarray, zeta, tail: np.ndarray, side: np.ndarray) -> np.ndarray:
    """Backward recursion along a path.

    ``potentials[:, j]`` is ``lam V(x_j)`` for ``j < n``, ``tail`` is
    ``Gamma(x_n)`` and ``side[:, j]`` the summed forward Green functions of
    the other children of ``x_j``.  Returns ``Gamma(x_0..x_n)`` per row.
    """
    z = complex(zeta)
    pot = np.atleast_2d(potentials)
    side = np.atleast_2d(side)
    c, n = pot.shape
    out = np.empty((c, n + 1), dtype=complex)
    out[:, n] = tail
    for j in range(n - 1, -1, -1):
        out[:, j] = 1.0 / (pot[:, j] - z - out[:, j + 1] - side[:, j])
    return out


def sample_gamma_chain(pool: GammaPool, model, zeta, n: int, seed: RealizationSeed,
                       chains: int = 1) -> np.ndarray:
    """``chains`` independent root-to-depth-``n`` chains, shape ``(chains, n + 1)``.

    Column 0 is the root.  The product of a row has the law of
    ``|G(0, x_n)|`` up to sign.
    """
    rng = seed.generator()
    K = pool.K
    tail = pool.draw(rng, chains)
    pot = model.sample_scaled(rng, (chains, n)) if n else np.empty((chains, 0))
    side = pool.draw(rng, (chains, n, K - 1)).sum(axis=2)
    return build_chain(pot, zeta, tail, side)


def log_products(chain: np.ndarray) -> np.ndarray:
    """``log prod_{j <= m} |Gamma_j|`` for ``m = 0..n``."""
    return np.cumsum(np.log(np.abs(chain)), axis=1)


# -- free energy ---------------------------------------------------------

@dataclass
class FreeEnergyCurve:
    s_grid: np.ndarray
    phi: np.ndarray
    stderr: np.ndarray
    n: int
    window: tuple[int, int]
    eta: float
    flagged: np.ndarray
    L: float = float("nan")
    L_stderr: float = float("nan")

    def phi1_extrapolated(self) -> tuple[float, float]:
        """Linear extrapolation to ``s = 1`` from the last three grid points.

        The spread is the range of the three pairwise extrapolations plus
        the standard error at the largest ``s``.
        """
        s, p = self.s_grid[-3:], self.phi[-3:]
        slope, icpt = np.polyfit(s, p, 1)
        ext = []
        for i in range(3):
            for j in range(i + 1, 3):
                m = (p[j] - p[i]) / (s[j] - s[i])
                ext.append(p[j] + m * (1 - s[j]))
        value = float(slope + icpt)
        spread = float(max(ext) - min(ext) + self.stderr[-1])
        return value, spread

    def rows(self):
        return [(float(s), float(p), float(e), self.n, self.eta, bool(f))
                for s, p, e, f in zip(self.s_grid, self.phi, self.stderr, self.flagged)]


def _slope_design(ms: np.ndarray) -> np.ndarray:
    x = ms - ms.mean()
    return x / np.sum(x * x)


def _log_means(logw: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    """Log of (weighted) column means of ``exp(logw)``; rows are chains."""
    shift = logw.max(axis=0)
    lin = np.exp(logw - shift)
    if weights is None:
        return np.log(lin.mean(axis=0)) + shift
    tot = weights.sum(axis=1, keepdims=True)
    # a resample can miss a small block entirely; that replicate is undefined
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log((weights @ lin) / tot) + shift
    return np.where(tot > 0, out, np.nan)


def _mom_log_means(logw, weights, blocks):
    parts = np.array_split(np.arange(logw.shape[0]), blocks)
    per = np.stack([_log_means(logw[b], None if weights is None else weights[:, b]) for b in parts])
    return np.nanmedian(per, axis=0)


def free_energy_from_logs(logprod: np.ndarray, s_grid, seed: RealizationSeed, eta: float = float("nan"),
                          n_boot: int = N_BOOT) -> FreeEnergyCurve:
    """Free energy from precomputed log path products (rows = chains)."""
    s_grid = np.asarray(s_grid, dtype=float)
    c, n1 = logprod.shape
    n = n1 - 1
    lo = n // 2
    ms = np.arange(lo, n + 1)
    design = _slope_design(ms.astype(float))
    win = logprod[:, lo:]
    rng = seed.generator()
    boot = rng.multinomial(c, np.full(c, 1.0 / c), size=n_boot).astype(float)
    phi = np.zeros(s_grid.size)
    se = np.zeros(s_grid.size)
    flagged = np.zeros(s_grid.size, dtype=bool)
    for i, s in enumerate(s_grid):
        if s == 0.0:
            continue
        logw = s * win
        mom = s >= MOM_THRESHOLD
        blocks = min(MOM_BLOCKS, c)
        lm = _mom_log_means(logw, None, blocks) if mom else _log_means(logw, None)
        phi[i] = float(design @ lm)
        bl = _mom_log_means(logw, boot, blocks) if mom else _log_means(logw, boot)
        se[i] = float(np.nanstd(bl @ design, ddof=1))
        last = np.sort(logw[:, -1])[::-1]
        top = max(1, int(math.ceil(0.01 * c)))
        share = math.exp(logsumexp(last[:top]) - logsumexp(last))
        if share > 0.5:
            flagged[i] = True
    if flagged.any():
        bad = ", ".join(f"{s:g}" for s in s_grid[flagged])
        warnings.warn(f"heavy-tailed moment estimate at s = {bad}", HeavyTailWarning, stacklevel=2)
    return FreeEnergyCurve(s_grid, phi, se, n, (lo, n), eta, flagged)


def estimate_free_energy(model, zeta, s_grid, n: int, chains: int, seed: RealizationSeed, K: int = 2,
                         P: int = 100_000, sweeps: int = 200, pool: GammaPool | None = None) -> FreeEnergyCurve:
    """``phi(s)`` as the slope of ``log E prod |Gamma_j|^s`` over ``m in [n/2, n]``.

    Standard errors come from a chain-level bootstrap; for ``s >= 0.7`` the
    expectation is a median of means over 10 chain blocks.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if n < 16 or chains < 2:
        raise ValueError("need n >= 16 and at least two chains")
    if np.any(s_grid >= 1):
        raise ValueError("s must stay below 1")
    if pool is None:
        pool = pool_equilibrate(model, zeta, P, sweeps, seed.child(0), K)
    chain = sample_gamma_chain(pool, model, zeta, n, seed.child(1), chains)
    lp = log_products(chain)
    curve = free_energy_from_logs(lp, s_grid, seed.child(2), complex(zeta).imag)
    L, se = estimate_lyapunov(pool)
    curve.L, curve.L_stderr = L, se
    return curve


# -- Legendre transform --------------------------------------------------

@dataclass
class RateFunction:
    gamma_grid: np.ndarray
    I: np.ndarray
    s_of_gamma: np.ndarray

    def dual(self, s: float) -> float:
        """``-min_gamma [I(gamma) + s gamma]`` over the stored grid."""
        return float(-np.min(self.I + s * self.gamma_grid))


def rate_at(curve: FreeEnergyCurve, gamma) -> tuple[np.ndarray, np.ndarray]:
    """``I(gamma)`` and the minimizing ``s``.

    ``phi(s) + s gamma`` is piecewise linear in ``s`` on the interpolant, so
    its minimum sits at a grid node.
    """
    g = np.atleast_1d(np.asarray(gamma, dtype=float))
    vals = curve.phi[None, :] + curve.s_grid[None, :] * g[:, None]
    k = np.argmin(vals, axis=1)
    return -vals[np.arange(g.size), k], curve.s_grid[k]


def legendre_rate(curve: FreeEnergyCurve, gamma_grid=None, num: int = 201) -> RateFunction:
    if curve.s_grid.size < 8:
        raise ValueError("need at least 8 grid points")
    if gamma_grid is None:
        slopes = -np.diff(curve.phi) / np.diff(curve.s_grid)
        lo, hi = float(slopes.min()), float(slopes.max())
        if hi - lo < 1e-9:
            lo, hi = lo - 0.5, hi + 0.5
        gamma_grid = np.linspace(lo, hi, num)
    gamma_grid = np.asarray(gamma_grid, dtype=float)
    I, s_star = rate_at(curve, gamma_grid)
    return RateFunction(gamma_grid, I, s_star)


# -- density of states ---------------------------------------------------

@dataclass
class DosEstimate:
    E_grid: np.ndarray
    eta_sequence: np.ndarray
    rooted: np.ndarray
    full: np.ndarray
    stderr: np.ndarray
    converged: np.ndarray

    @property
    def D_rooted(self) -> np.ndarray:
        return self.rooted[:, -1]

    @property
    def D_full(self) -> np.ndarray:
        return self.full[:, -1]

    def rows(self):
        out = []
        for i, E in enumerate(self.E_grid):
            for j, eta in enumerate(self.eta_sequence):
                out.append((float(E), float(eta), float(self.rooted[i, j]), float(self.full[i, j]),
                            float(self.stderr[i, j]), bool(self.converged[i])))
        return out


def _dos_point(model, K, zeta, P, sweeps, seed, init):
    z = complex(zeta)
    if _is_free(model):
        g = free_gamma(K, z)
        r = (1.0 / (-z - K * g)).imag / math.pi
        f = (1.0 / (-z - (K + 1) * g)).imag / math.pi
        return r, f, 0.0, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotEquilibratedWarning)
        pool = pool_equilibrate(model, z, P, sweeps, seed.child(0), K, init)
    rng = seed.child(1).generator()
    v = model.sample_scaled(rng, P)
    nb = pool.draw(rng, (P, K + 1))
    base = v - z - nb[:, :K].sum(axis=1)
    rooted = (1.0 / base).imag / math.pi
    full = (1.0 / (base - nb[:, K])).imag / math.pi
    se = max(batch_stderr(rooted), batch_stderr(full))
    return float(rooted.mean()), float(full.mean()), se, pool.values


def estimate_dos(model, K: int, E_grid, eta_sequence, P: int, sweeps: int, seed: RealizationSeed) -> DosEstimate:
    """Mean ``Im G / pi`` on the rooted tree (``K`` children) and full tree (``K + 1``)."""
    E_grid = np.atleast_1d(np.asarray(E_grid, dtype=float))
    etas = np.asarray(eta_sequence, dtype=float)
    if np.any(np.diff(etas) >= 0) or etas[-1] < 1e-6:
        raise ValueError("eta_sequence must decrease strictly and stay >= 1e-6")
    shape = (E_grid.size, etas.size)
    rooted, full, se = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    conv = np.ones(E_grid.size, dtype=bool)
    for i, E in enumerate(E_grid):
        init = None
        for j, eta in enumerate(etas):
            rooted[i, j], full[i, j], se[i, j], init = _dos_point(
                model, K, complex(E, eta), P, sweeps, seed.child(i, j), init)
        if etas.size >= 2:
            tol = 3 * math.hypot(se[i, -1], se[i, -2]) + etas[-2]
            conv[i] = (abs(rooted[i, -1] - rooted[i, -2]) < tol) and (abs(full[i, -1] - full[i, -2]) < tol)
    return DosEstimate(E_grid, etas, rooted, full, se, conv)


# -- percentile ----------------------------------------------------------

def percentile_xi(sample, alpha: float) -> float:
    """Largest order statistic ``t`` with empirical ``P(X >= t) >= alpha``."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = int(math.ceil(alpha * x.size))
    return float(np.sort(x)[::-1][k - 1])


# -- Fekete consistency --------------------------------------------------

def moment_sequence(logprod: np.ndarray, s: float) -> np.ndarray:
    """``log E |G(0, x_m)|^s`` for ``m = 0..n``."""
    return logsumexp(s * logprod, axis=0) - math.log(logprod.shape[0])


@dataclass
class FeketeReport:
    s: float
    log_C: float
    fit_max_index: int
    max_index: int
    residuals: list
    passed: bool


def fekete_check(logprod: np.ndarray, s: float, seed: RealizationSeed, fit_max: int = 24,
                 max_index: int = 48, n_boot: int = N_BOOT, nsigma: float = 5.0) -> FeketeReport:
    """Near-multiplicativity of the moment sequence.

    ``log a_{n+m+1} - log a_n - log a_m`` is fitted on pairs with
    ``n + m + 1 <= fit_max`` to give ``log C``, then required to stay
    within ``log C + nsigma * se`` on the held-out pairs up to ``max_index``.
    """
    c, n1 = logprod.shape
    if n1 <= max_index:
        raise ValueError("chains too short for max_index")
    la = moment_sequence(logprod[:, :max_index + 1], s)
    rng = seed.generator()
    boot = rng.multinomial(c, np.full(c, 1.0 / c), size=n_boot).astype(float)
    lb = _log_means(s * logprod[:, :max_index + 1], boot)
    pairs = [(n, m) for n in range(1, max_index) for m in range(1, n + 1) if n + m + 1 <= max_index]

    def resid(arr, n, m):
        return arr[..., n + m + 1] - arr[..., n] - arr[..., m]

    log_C = max(abs(float(resid(la, n, m))) for n, m in pairs if n + m + 1 <= fit_max)
    rows, ok = [], True
    for n, m in pairs:
        if n + m + 1 <= fit_max:
            continue
        r = float(resid(la, n, m))
        sig = float(np.std(resid(lb, n, m), ddof=1))
        # rounding floor for deterministic sequences
        good = abs(r) <= log_C + nsigma * sig + 1e-12 * max(1.0, abs(la[n + m + 1]))
        ok &= good
        rows.append((n, m, r, sig, good))
    return FeketeReport(s, log_C, fit_max, max_index, rows, bool(ok))
