"""Spectral criteria, phase diagrams and the bounded-potential edge."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .disorder import RealizationSeed
from .greens import TreeGeometry, free_gamma, is_edge_ambiguous
from .parallel import parallel_map
from .population import (
    ETA_SEQUENCE,
    HeavyTailWarning,
    estimate_free_energy,
    lyapunov_boundary,
)

__all__ = [
    "Budgets",
    "PhasePoint",
    "PhaseDiagram",
    "EdgeAnalysis",
    "LABELS",
    "free_lyapunov",
    "spectrum_interval",
    "label_from_stats",
    "classify_point",
    "scan_phase_diagram",
    "lambda_star",
    "edge_energy",
    "edge_analysis",
    "LifshitzTable",
    "lifshitz_check",
    "RaySumReport",
    "ray_sum_check",
    "IntervalAverage",
    "lyapunov_interval_average",
]

LABELS = ("ac_lyapunov", "ac_phi1", "localized_phi1", "undetermined")
NSIGMA = 3.0


@dataclass(frozen=True)
class Budgets:
    pool: int = 100_000
    sweeps: int = 150
    warm_sweeps: int = 60
    chains: int = 10_000
    n: int = 100
    eta_sequence: tuple = ETA_SEQUENCE
    phi1_s: tuple = (0.75, 0.85, 0.95)
    phi1: bool = True


def free_lyapunov(K: int, E: float) -> float:
    """``-log|Gamma_0(E + i0)|`` for the free tree."""
    return -math.log(abs(free_gamma(K, complex(E, 0.0))))


def spectrum_interval(model, K: int) -> tuple[float, float]:
    """Almost-sure spectrum as ``(lo, hi)``; infinite ends for full-line support."""
    edge = 2 * math.sqrt(K)
    if model.lam == 0 or model.family == "none":
        return (-edge, edge)
    lo, hi = model.support
    return (-edge + model.lam * lo, edge + model.lam * hi)


# -- pointwise classification --------------------------------------------

@dataclass
class PhasePoint:
    E: float
    lam: float
    L: float
    L_stderr: float
    phi1: float = float("nan")
    phi1_spread: float = float("nan")
    label: str = "undetermined"
    margins: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def row(self):
        m = ";".join(f"{k}={v:.6g}" for k, v in sorted(self.margins.items()))
        return (self.E, self.lam, self.L, self.L_stderr, self.phi1, self.phi1_spread, self.label, m)


def _margin(gap: float, scale: float) -> float:
    if scale > 0:
        return gap / scale
    return math.copysign(math.inf, gap) if gap != 0 else 0.0


def label_from_stats(K: int, L: float, L_se: float, phi1: float, phi1_spread: float,
                     assumption_E: bool) -> tuple[str, dict, list]:
    """Label from stored statistics alone, so labels are recomputable.

    Margins are in units of the relevant standard error; a label needs a
    margin above 3.  Contradicting ac and localized margins give
    ``undetermined`` with a ``conflict`` flag.
    """
    logK = math.log(K)
    margins = {"ac_lyapunov": _margin(logK - L, L_se)}
    have_phi = not math.isnan(phi1)
    if have_phi:
        margins["localized_phi1"] = _margin(-logK - phi1, phi1_spread)
        if assumption_E:
            margins["ac_phi1"] = _margin(phi1 + logK, phi1_spread)
    ac = [k for k in ("ac_lyapunov", "ac_phi1") if margins.get(k, -math.inf) > NSIGMA]
    loc = margins.get("localized_phi1", -math.inf) > NSIGMA
    flags = []
    if ac and loc:
        flags.append("conflict")
        return "undetermined", margins, flags
    if ac:
        return ac[0], margins, flags
    if loc:
        return "localized_phi1", margins, flags
    return "undetermined", margins, flags


def _phi1(model, K, E, eta, budgets, seed):
    if model.lam == 0 or model.family == "none":
        return -free_lyapunov(K, E), 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HeavyTailWarning)
        curve = estimate_free_energy(model, complex(E, eta), np.asarray(budgets.phi1_s), budgets.n,
                                     budgets.chains, seed, K, budgets.pool, budgets.sweeps)
    return curve.phi1_extrapolated()


def classify_point(model, K: int, E: float, budgets: Budgets, seed: RealizationSeed) -> PhasePoint:
    """Lyapunov criterion always; the ``s -> 1`` free-energy criteria when budgeted.

    The free-energy ac label is offered only when the density is bounded
    below on compacts (full-line support).
    """
    lr = lyapunov_boundary(model, K, E, budgets.pool, budgets.sweeps, seed.child(0),
                           budgets.eta_sequence, budgets.warm_sweeps)
    flags = list(lr.flags)
    if is_edge_ambiguous(K, E) and model.lam == 0:
        flags.append("edge_ambiguous")
    phi1 = spread = float("nan")
    if budgets.phi1:
        phi1, spread = _phi1(model, K, E, budgets.eta_sequence[-1], budgets, seed.child(1))
    label, margins, more = label_from_stats(K, lr.L, lr.stderr, phi1, spread, model.assumption_E)
    return PhasePoint(E, model.lam, lr.L, lr.stderr, phi1, spread, label, margins, flags + more)


def _classify_cell(args):
    model, K, E, budgets, seed = args
    return classify_point(model, K, E, budgets, seed)


@dataclass
class PhaseDiagram:
    E_grid: np.ndarray
    lam_grid: np.ndarray
    points: list  # row-major over (lam, E)
    provenance: dict

    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.points]).reshape(self.lam_grid.size, self.E_grid.size)


def scan_phase_diagram(model, K: int, E_grid, lam_grid, budgets: Budgets, seed: RealizationSeed,
                       workers: int = 1) -> PhaseDiagram:
    """Classify every ``(E, lam)`` cell; cell ``(i, j)`` uses stream ``seed.child(i, j)``."""
    E_grid = np.atleast_1d(np.asarray(E_grid, dtype=float))
    lam_grid = np.atleast_1d(np.asarray(lam_grid, dtype=float))
    if E_grid.size == 0 or lam_grid.size == 0:
        raise ValueError("grids must be nonempty")
    tasks = [(model.with_lambda(float(lam)), K, float(E), budgets, seed.child(i, j))
             for i, lam in enumerate(lam_grid) for j, E in enumerate(E_grid)]
    points = parallel_map(_classify_cell, tasks, workers)
    prov = {"K": K, "model": model.describe(), "budgets": asdict(budgets),
            "master_seed": seed.master_seed, "stream_path": list(seed.stream_path)}
    return PhaseDiagram(E_grid, lam_grid, points, prov)


# -- bounded-potential edge ----------------------------------------------

def lambda_star(K: int) -> float:
    return (math.sqrt(K) - 1) ** 2 / 2


def edge_energy(K: int, lam: float) -> float:
    return -2 * math.sqrt(K) - lam


@dataclass
class EdgeAnalysis:
    K: int
    lam: float
    E_lambda: float
    lambda_star: float
    bound: float
    E_grid: np.ndarray
    L: np.ndarray
    stderr: np.ndarray
    within_bound: np.ndarray
    classified_ac: bool


def edge_analysis(model, K: int, E_grid=None, budgets: Budgets = Budgets(), seed: RealizationSeed | None = None,
                  workers: int = 1) -> EdgeAnalysis:
    """Near-edge Lyapunov exponents against ``L0(E_lam - lam)``.

    The default grid has 10 points spanning ``[E_lam, E_lam + 0.05]``.
    """
    if not model.bounded or model.support != (-1.0, 1.0):
        raise ValueError("edge analysis needs a potential supported on [-1, 1]")
    lam = model.lam
    E_lam = edge_energy(K, lam)
    bound = free_lyapunov(K, E_lam - lam)
    if E_grid is None:
        E_grid = np.linspace(E_lam, E_lam + 0.05, 10)
    E_grid = np.asarray(E_grid, dtype=float)
    seed = seed or RealizationSeed(0)
    tasks = [(model, K, float(E), budgets, seed.child(j)) for j, E in enumerate(E_grid)]
    res = parallel_map(_edge_cell, tasks, workers)
    L = np.array([r[0] for r in res])
    se = np.array([r[1] for r in res])
    within = L <= bound + NSIGMA * se
    ac = bool(np.all(L + NSIGMA * se < math.log(K)))
    return EdgeAnalysis(K, lam, E_lam, lambda_star(K), bound, E_grid, L, se, within, ac)


def _edge_cell(args):
    model, K, E, budgets, seed = args
    r = lyapunov_boundary(model, K, E, budgets.pool, budgets.sweeps, seed, budgets.eta_sequence,
                          budgets.warm_sweeps)
    return r.L, r.stderr


# -- Lifshitz tail -------------------------------------------------------

@dataclass
class LifshitzTable:
    delta: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    trials: int
    exponent: float
    exponent_stderr: float
    C_hat: float
    fit_mask: np.ndarray
    holdout_prob: np.ndarray
    holdout_ok: bool
    all_zero: bool


def _min_eigs(geometry: TreeGeometry, model, trials: int, seed: RealizationSeed, batch: int = 2000) -> np.ndarray:
    n = geometry.node_count
    par, child = geometry.edges()
    base = np.zeros((n, n))
    base[par, child] = base[child, par] = 1.0
    rng = seed.generator()
    out = np.empty(trials)
    for lo in range(0, trials, batch):
        m = min(batch, trials - lo)
        H = np.broadcast_to(base, (m, n, n)).copy()
        idx = np.arange(n)
        H[:, idx, idx] = model.sample_scaled(rng, (m, n))
        out[lo:lo + m] = np.linalg.eigvalsh(H)[:, 0]
    return out


def lifshitz_check(model, K: int, R: int, delta_grid, trials: int, seed: RealizationSeed,
                   min_counts: int = 20) -> LifshitzTable:
    """Small-eigenvalue tail of the ball Hamiltonian near ``E_lam``.

    Fits ``log P`` against ``log Delta`` on bins with at least ``min_counts``
    hits and ``P < 1/2``.  ``C_hat`` is the largest ratio
    ``P / (K^R Delta^1.5)`` on the fit bins; a fresh-seed holdout must stay
    below ``C_hat K^R Delta^1.5`` within 5 binomial standard errors.
    """
    if not model.bounded:
        raise ValueError("Lifshitz check needs bounded disorder")
    if R > 8:
        raise ValueError("R must be at most 8")
    delta = np.asarray(delta_grid, dtype=float)
    geo = TreeGeometry(K, R, rooted=True)
    E_lam = edge_energy(K, model.lam)
    eig = _min_eigs(geo, model, trials, seed.child(0))
    counts = np.array([(eig < E_lam + d).sum() for d in delta])
    prob = counts / trials
    se = np.sqrt(prob * (1 - prob) / trials)
    fit = (counts >= min_counts) & (prob < 0.5)
    scale = K ** R * delta ** 1.5
    if fit.sum() >= 2:
        # weighted least squares; Var(log P) ~ 1 / counts
        x, y, w = np.log(delta[fit]), np.log(prob[fit]), counts[fit].astype(float)
        xc = x - np.sum(w * x) / w.sum()
        sxx = float(np.sum(w * xc * xc))
        coef = (float(np.sum(w * xc * y)) / sxx,)
        slope_se = math.sqrt(1.0 / sxx)
        exponent = float(coef[0])
        C_hat = float(np.max(prob[fit] / scale[fit]))
    else:
        exponent, slope_se, C_hat = float("nan"), float("nan"), float("nan")
    hold = _min_eigs(geo, model, trials, seed.child(1))
    hprob = np.array([(hold < E_lam + d).mean() for d in delta])
    hse = np.sqrt(np.maximum(hprob * (1 - hprob), 1.0 / trials) / trials)
    if np.isnan(C_hat):
        hold_ok = False
    else:
        bound = np.minimum(1.0, C_hat * scale)
        hold_ok = bool(np.all(hprob[fit] <= bound[fit] + 5 * hse[fit]))
    return LifshitzTable(delta, prob, se, counts, trials, exponent, slope_se, C_hat, fit, hprob, hold_ok,
                         bool(counts.max() == 0))


# -- ray sums ------------------------------------------------------------

@dataclass
class RaySumReport:
    K: int
    R: int
    alpha: float
    bound: float
    prob: float
    stderr: float
    min_sigma: float
    passed: bool


def ray_sum_check(model, K: int, R: int, alpha: float, trials: int, seed: RealizationSeed,
                  batch: int = 1000) -> RaySumReport:
    """``P(min_x sigma(x) < alpha R)`` over the sphere of radius ``R``.

    ``sigma(x)`` sums ``V(y) + 1`` over the ``R`` strict ancestors of ``x``,
    i.e. over root-to-leaf paths of the ball ``B_R``.
    """
    if not model.bounded:
        raise ValueError("ray-sum check needs bounded disorder")
    cap = 1.0 / (8 * model.sup_norm * K * K)
    if not 0 < alpha <= cap:
        raise ValueError(f"alpha must lie in (0, {cap:g}]")
    geo = TreeGeometry(K, R, rooted=True)
    rng = seed.generator()
    hits, overall = 0, math.inf
    for lo in range(0, trials, batch):
        m = min(batch, trials - lo)
        v = model.sample(rng, (m, geo.node_count)) + 1.0
        acc = v[:, :1]
        for d in range(1, R):
            acc = np.repeat(acc, geo.branching(d - 1), axis=1) + v[:, geo.level(d)]
        mins = acc.min(axis=1)
        hits += int((mins < alpha * R).sum())
        overall = min(overall, float(mins.min()))
    p = hits / trials
    bound = K ** R * (2 * math.sqrt(2 * model.sup_norm * alpha)) ** R
    se = math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
    return RaySumReport(K, R, alpha, bound, p, se, overall, p <= bound + 5 * se)


# -- energy averages -----------------------------------------------------

@dataclass
class IntervalAverage:
    lam: float
    M: float
    stderr: float
    bad_set_bound: float


def _interval_cell(args):
    model, K, E, budgets, seed = args
    r = lyapunov_boundary(model, K, E, budgets.pool, budgets.sweeps, seed, budgets.eta_sequence,
                          budgets.warm_sweeps)
    return r.L, r.stderr


def lyapunov_interval_average(model, K: int, interval, lam_grid, budgets: Budgets, seed: RealizationSeed,
                              n_energies: int = 11, workers: int = 1) -> list[IntervalAverage]:
    """Trapezoid energy average of the Lyapunov exponent over ``interval``.

    Also reports the Chebyshev bound ``|I| (M - log sqrt K) / log sqrt K``
    on the measure of ``{L >= log K}``.
    """
    a, b = map(float, interval)
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise ValueError("interval must be bounded")
    Es = np.linspace(a, b, n_energies)
    w = np.full(n_energies, 1.0)
    w[0] = w[-1] = 0.5
    w /= w.sum()
    half = 0.5 * math.log(K)
    out = []
    for i, lam in enumerate(lam_grid):
        m = model.with_lambda(float(lam))
        tasks = [(m, K, float(E), budgets, seed.child(i, j)) for j, E in enumerate(Es)]
        res = np.array(parallel_map(_interval_cell, tasks, workers))
        M = float(w @ res[:, 0])
        se = float(math.sqrt(np.sum((w * res[:, 1]) ** 2)))
        out.append(IntervalAverage(float(lam), M, se, max(0.0, (b - a) * (M - half) / half)))
    return out
