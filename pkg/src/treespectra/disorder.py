"""Random potential distributions and their regularity data.

A :class:`DisorderModel` bundles a single-site density ``rho`` with the
disorder strength ``lam``.  Potentials on a tree are ``lam * V(x)`` with
``V(x)`` iid from ``rho``.  Besides sampling, the module provides the
quantities the downstream bounds consume: the sup norm of ``rho``, a
fractional moment exponent, and the regularity constant ``c`` relating
``rho`` to its minimal function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

__all__ = [
    "DisorderModel",
    "AtomicDisorder",
    "RealizationSeed",
    "UnboundedRatioError",
    "gaussian",
    "cauchy",
    "uniform",
    "piecewise_constant",
    "no_disorder",
    "sample_potential",
    "density",
    "minimal_function",
    "regularity_constant",
    "default_nu_grid",
]

FAMILIES = ("gaussian", "cauchy", "uniform", "piecewise", "none")


class UnboundedRatioError(ValueError):
    """Raised when rho / M exceeds the numerical cap on the test grid."""


def default_nu_grid(num: int = 32) -> np.ndarray:
    return np.logspace(-4, 0, num)


@dataclass(frozen=True)
class RealizationSeed:
    """Master seed plus a path of integers naming a task or site.

    Child streams are derived with :class:`numpy.random.SeedSequence`,
    whose hash mixing makes distinct paths independent.
    """

    master_seed: int
    stream_path: tuple[int, ...] = ()

    def child(self, *path: int) -> "RealizationSeed":
        return RealizationSeed(self.master_seed, self.stream_path + tuple(int(p) for p in path))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed) & (2**64 - 1),
                                    spawn_key=tuple(int(p) for p in self.stream_path))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class DisorderModel:
    """Single-site potential law ``rho`` and disorder strength ``lam``.

    Parameters
    ----------
    family : str
        One of ``gaussian``, ``cauchy``, ``uniform``, ``piecewise``, ``none``.
    params : tuple
        ``(mean, std)`` for gaussian, ``(location, scale)`` for cauchy,
        ``()`` for uniform (support ``[-1, 1]``), ``(breakpoints, heights)``
        for piecewise.  Piecewise heights are rescaled to unit mass.
    lam : float
        Disorder strength, ``lam >= 0``.
    moment_exponent : float, optional
        Exponent ``varsigma`` in (0, 1) with finite ``E|V|^varsigma``.
    """

    family: str
    params: tuple = ()
    lam: float = 0.0
    moment_exponent: float = 0.5
    _norm_params: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown disorder family {self.family!r}")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if not 0 < self.moment_exponent < 1:
            raise ValueError("moment_exponent must lie in (0, 1)")
        if self.family == "gaussian":
            mean, std = self.params
            if std <= 0:
                raise ValueError("gaussian std must be positive")
        elif self.family == "cauchy":
            loc, scale = self.params
            if scale <= 0:
                raise ValueError("cauchy scale must be positive")
        elif self.family == "piecewise":
            breaks, heights = self.params
            breaks = np.asarray(breaks, dtype=float)
            heights = np.asarray(heights, dtype=float)
            if breaks.ndim != 1 or heights.shape != (breaks.size - 1,):
                raise ValueError("piecewise needs len(heights) == len(breakpoints) - 1")
            if np.any(np.diff(breaks) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
            if np.any(heights < 0) or not np.any(heights > 0):
                raise ValueError("heights must be nonnegative and not all zero")
            mass = float(np.sum(heights * np.diff(breaks)))
            object.__setattr__(self, "_norm_params",
                               (tuple(breaks.tolist()), tuple((heights / mass).tolist())))

    # -- family metadata -------------------------------------------------

    @property
    def bounded(self) -> bool:
        return self.family in ("uniform", "piecewise", "none")

    @property
    def support(self) -> tuple[float, float]:
        if self.family == "uniform":
            return (-1.0, 1.0)
        if self.family == "piecewise":
            breaks = self._norm_params[0]
            return (breaks[0], breaks[-1])
        if self.family == "none":
            return (0.0, 0.0)
        return (-np.inf, np.inf)

    @property
    def assumption_E(self) -> bool:
        """Density bounded below on every compact set (needs full-line support)."""
        return self.family in ("gaussian", "cauchy")

    @property
    def sup_norm(self) -> float:
        if self.family == "gaussian":
            return 1.0 / (self.params[1] * np.sqrt(2 * np.pi))
        if self.family == "cauchy":
            return 1.0 / (np.pi * self.params[1])
        if self.family == "uniform":
            return 0.5
        if self.family == "piecewise":
            return float(max(self._norm_params[1]))
        raise ValueError("no density for the 'none' family")

    @cached_property
    def regularity_c(self) -> float:
        return regularity_constant(self, self.default_v_grid())

    def default_v_grid(self, num: int = 401) -> np.ndarray:
        if self.family == "gaussian":
            m, s = self.params
            return np.linspace(m - 8 * s, m + 8 * s, num)
        if self.family == "cauchy":
            loc, scale = self.params
            return np.linspace(loc - 50 * scale, loc + 50 * scale, num)
        lo, hi = self.support
        # interior points only; the endpoints of a jump are a null set
        return np.linspace(lo, hi, num + 2)[1:-1]

    def with_lambda(self, lam: float) -> "DisorderModel":
        return DisorderModel(self.family, self.params, lam, self.moment_exponent)

    def describe(self) -> dict:
        out = {"dist": self.family, "lambda": self.lam, "moment_exponent": self.moment_exponent}
        if self.family == "gaussian":
            out["dist.mean"], out["dist.std"] = self.params
        elif self.family == "cauchy":
            out["dist.location"], out["dist.scale"] = self.params
        elif self.family == "piecewise":
            out["dist.breakpoints"], out["dist.heights"] = self._norm_params
        return out

    # -- density / cdf / sampling ----------------------------------------

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "gaussian":
            return stats.norm.pdf(v, *self.params)
        if self.family == "cauchy":
            return stats.cauchy.pdf(v, *self.params)
        if self.family == "uniform":
            return np.where(np.abs(v) <= 1.0, 0.5, 0.0)
        if self.family == "piecewise":
            breaks, heights = (np.asarray(p) for p in self._norm_params)
            idx = np.searchsorted(breaks, v, side="right") - 1
            inside = (idx >= 0) & (idx < heights.size)
            return np.where(inside, heights[np.clip(idx, 0, heights.size - 1)], 0.0)
        raise ValueError("no density for the 'none' family")

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "gaussian":
            return stats.norm.cdf(v, *self.params)
        if self.family == "cauchy":
            return stats.cauchy.cdf(v, *self.params)
        if self.family == "uniform":
            return np.clip((v + 1.0) / 2.0, 0.0, 1.0)
        if self.family == "piecewise":
            breaks, heights = (np.asarray(p) for p in self._norm_params)
            mass = np.concatenate([[0.0], np.cumsum(heights * np.diff(breaks))])
            return np.interp(v, breaks, mass, left=0.0, right=1.0)
        raise ValueError("no distribution function for the 'none' family")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Unscaled draws ``V`` from ``rho``."""
        if self.family == "gaussian":
            m, s = self.params
            return rng.normal(m, s, size)
        if self.family == "cauchy":
            loc, scale = self.params
            return loc + scale * rng.standard_cauchy(size)
        if self.family == "uniform":
            return rng.uniform(-1.0, 1.0, size)
        if self.family == "piecewise":
            # inverse cdf on the piecewise-linear distribution function
            breaks, heights = (np.asarray(p) for p in self._norm_params)
            mass = np.concatenate([[0.0], np.cumsum(heights * np.diff(breaks))])
            u = rng.uniform(0.0, 1.0, size)
            keep = np.concatenate([[True], np.diff(mass) > 0])
            return np.interp(u, mass[keep], breaks[keep])
        return np.zeros(size)

    def sample_scaled(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draws of ``lam * V``."""
        if self.lam == 0.0:
            return np.zeros(size)
        return self.lam * self.sample(rng, size)


def gaussian(lam: float, mean: float = 0.0, std: float = 1.0, **kw) -> DisorderModel:
    return DisorderModel("gaussian", (float(mean), float(std)), float(lam), **kw)


def cauchy(lam: float, location: float = 0.0, scale: float = 1.0, **kw) -> DisorderModel:
    return DisorderModel("cauchy", (float(location), float(scale)), float(lam), **kw)


def uniform(lam: float, **kw) -> DisorderModel:
    return DisorderModel("uniform", (), float(lam), **kw)


def piecewise_constant(lam: float, breakpoints, heights, **kw) -> DisorderModel:
    return DisorderModel("piecewise", (tuple(breakpoints), tuple(heights)), float(lam), **kw)


def no_disorder() -> DisorderModel:
    return DisorderModel("none", (), 0.0)


@dataclass(frozen=True)
class AtomicDisorder:
    """Finitely many atoms, for exact enumeration checks only.

    Atomic laws have no density, so none of the density-based bounds apply
    to them; they exist to validate estimator plumbing by brute force.
    """

    atoms: tuple[float, ...]
    probs: tuple[float, ...]
    lam: float = 1.0
    family: str = "atoms"

    def __post_init__(self):
        if len(self.atoms) != len(self.probs):
            raise ValueError("atoms and probs differ in length")
        if abs(sum(self.probs) - 1.0) > 1e-12 or min(self.probs) < 0:
            raise ValueError("probs must be a probability vector")

    bounded = True
    assumption_E = False

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.atoms, dtype=float), size=size, p=np.asarray(self.probs))

    def sample_scaled(self, rng, size):
        return self.lam * self.sample(rng, size)

    def describe(self) -> dict:
        return {"dist": "atoms", "atoms": list(self.atoms), "probs": list(self.probs), "lambda": self.lam}


def sample_potential(model, seed: RealizationSeed, count: int) -> np.ndarray:
    """``count`` iid draws from ``rho`` (unscaled), reproducible from ``seed``."""
    if count < 1:
        raise ValueError("count must be positive")
    return model.sample(seed.generator(), int(count))


def density(model: DisorderModel, v):
    """``rho(v)``; zero outside the support."""
    out = model.pdf(v)
    return float(out) if np.ndim(out) == 0 else out


def _window_mass(model: DisorderModel, v, nu):
    v = np.asarray(v, dtype=float)
    lo, hi = v - nu, v + nu
    if model.family in ("gaussian", "cauchy"):
        # right of the center use survival functions to avoid 1 - 1 cancellation
        dist = stats.norm if model.family == "gaussian" else stats.cauchy
        right = v > model.params[0]
        upper = dist.sf(lo, *model.params) - dist.sf(hi, *model.params)
        return np.where(right, upper, model.cdf(hi) - model.cdf(lo))
    return model.cdf(hi) - model.cdf(lo)


def minimal_function(model: DisorderModel, v, nu_grid=None):
    """Upper estimate of the minimal function ``M(v)``.

    ``M(v) = inf_{nu in (0,1]} (2 nu)^-1 * P(|V - v| <= nu)``; the infimum is
    taken over ``nu_grid`` only, so the result can only overestimate ``M``.
    Window masses come from the closed-form distribution function.
    """
    nu = default_nu_grid() if nu_grid is None else np.asarray(nu_grid, dtype=float)
    if nu.size == 0 or np.any(nu <= 0) or np.any(nu > 1):
        raise ValueError("nu_grid must be nonempty with values in (0, 1]")
    v = np.asarray(v, dtype=float)
    avg = _window_mass(model, v[..., None], nu) / (2 * nu)
    out = avg.min(axis=-1)
    return float(out) if out.ndim == 0 else out


def regularity_constant(model: DisorderModel, v_grid, nu_grid=None, cap: float = 1e6) -> float:
    """Largest ratio ``rho(v) / M(v)`` over ``v_grid``.

    Raises
    ------
    UnboundedRatioError
        If any ratio exceeds ``cap`` (or ``M`` vanishes where ``rho > 0``).
    """
    v = np.asarray(v_grid, dtype=float)
    rho = model.pdf(v)
    m = minimal_function(model, v, nu_grid)
    pos = rho > 0
    if np.any(pos & (m <= 0)):
        raise UnboundedRatioError("minimal function vanishes where the density is positive")
    ratio = np.where(pos, rho / np.where(m > 0, m, 1.0), 0.0)
    c = float(ratio.max())
    if c > cap:
        raise UnboundedRatioError(f"density/minimal-function ratio {c:.3g} exceeds {cap:g}")
    return c
