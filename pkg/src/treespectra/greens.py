"""Green functions on finite regular trees.

Vertices are indexed breadth first, so every level is a contiguous block
and the children of a vertex are contiguous in the next level.  The
hopping operator is the plain adjacency matrix (entries ``+1``), hence
``G(0, x) = (-1)^|x| * prod Gamma(u)`` along the root-to-x path.

Leaves may be given a boundary self-energy ``leaf_sigma``: the sum of the
forward Green functions that would hang below them on an infinite tree.
With ``leaf_sigma=None`` the tree is simply cut off at depth ``R``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .disorder import RealizationSeed

__all__ = [
    "ComplexEnergy",
    "TreeGeometry",
    "FiniteTreeRealization",
    "GreenTable",
    "KreinResult",
    "DegenerateGeometryError",
    "realize",
    "free_gamma",
    "is_edge_ambiguous",
    "forward_gammas",
    "backward_gammas",
    "diagonal_green",
    "root_row",
    "truncated_gamma",
    "sum_rule_residual",
    "dense_green_oracle",
    "path_green",
    "self_energy",
    "krein_from_block",
    "krein_offdiag",
    "DENSE_NODE_CAP",
]

DENSE_NODE_CAP = 10_000
_DENSE_DIRECT = 2048
BOUNDARY_ETA = 1e-12
EDGE_TOL = 1e-6


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ComplexEnergy:
    E: float
    eta: float

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")

    @property
    def zeta(self) -> complex:
        return complex(self.E, self.eta)

    def __complex__(self):
        return self.zeta


def _as_zeta(z) -> complex:
    if isinstance(z, ComplexEnergy):
        return z.zeta
    return complex(z)


@dataclass(frozen=True)
class TreeGeometry:
    """Ball ``B_R`` (depths ``0..R-1``) of the K-regular tree.

    ``rooted=True``: the root has ``K`` children.  ``rooted=False``: the
    root has ``K + 1`` neighbors, as in the full regular tree.
    """

    K: int
    R: int
    rooted: bool = True

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("branching number K must be at least 2")
        if self.R < 1:
            raise ValueError("depth R must be at least 1")

    @cached_property
    def level_counts(self) -> np.ndarray:
        counts = [1]
        for d in range(1, self.R):
            counts.append(counts[-1] * (self.K if (d > 1 or self.rooted) else self.K + 1))
        return np.array(counts, dtype=np.int64)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.level_counts)])

    @property
    def node_count(self) -> int:
        return int(self.offsets[-1])

    def branching(self, d: int) -> int:
        """Number of children of a vertex at depth ``d``."""
        return self.K + 1 if (d == 0 and not self.rooted) else self.K

    @cached_property
    def parent(self) -> np.ndarray:
        par = np.full(self.node_count, -1, dtype=np.int64)
        for d in range(1, self.R):
            lo, hi = self.offsets[d], self.offsets[d + 1]
            par[lo:hi] = self.offsets[d - 1] + np.arange(hi - lo) // self.branching(d - 1)
        return par

    @cached_property
    def depth(self) -> np.ndarray:
        return np.repeat(np.arange(self.R), self.level_counts)

    def level(self, d: int) -> slice:
        return slice(int(self.offsets[d]), int(self.offsets[d + 1]))

    def children(self, x: int) -> np.ndarray:
        d = int(self.depth[x])
        if d + 1 >= self.R:
            return np.empty(0, dtype=np.int64)
        b = self.branching(d)
        first = self.offsets[d + 1] + (x - self.offsets[d]) * b
        return np.arange(first, first + b)

    def path(self, x: int) -> list[int]:
        """Vertices from the root to ``x`` inclusive."""
        self._check(x)
        out = [int(x)]
        while out[-1] != 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def tree_path(self, x: int, y: int) -> list[int]:
        """Vertices on the unique path from ``x`` to ``y``."""
        px, py = self.path(x), self.path(y)
        k = 0
        while k < min(len(px), len(py)) and px[k] == py[k]:
            k += 1
        return px[k - 1:][::-1] + py[k:]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        child = np.arange(1, self.node_count)
        return self.parent[1:], child

    def _check(self, x: int):
        if not 0 <= x < self.node_count:
            raise IndexError(f"vertex {x} not in the ball of {self.node_count} sites")


@dataclass(frozen=True)
class FiniteTreeRealization:
    """Scaled potentials ``lam * V(x)`` on every vertex of ``geometry``."""

    geometry: TreeGeometry
    potentials: np.ndarray
    seed: RealizationSeed | None = None
    model_desc: dict = field(default_factory=dict)

    def __post_init__(self):
        pot = np.asarray(self.potentials, dtype=float)
        if pot.shape != (self.geometry.node_count,):
            raise ValueError("need exactly one potential per vertex")
        pot.setflags(write=False)
        object.__setattr__(self, "potentials", pot)


def realize(geometry: TreeGeometry, model, seed: RealizationSeed) -> FiniteTreeRealization:
    pot = model.sample_scaled(seed.generator(), geometry.node_count)
    return FiniteTreeRealization(geometry, pot, seed, model.describe())


@dataclass(frozen=True)
class GreenTable:
    zeta: complex
    entries: dict

    def __getitem__(self, xy):
        x, y = xy
        if (x, y) in self.entries:
            return self.entries[(x, y)]
        return self.entries[(y, x)]

    def to_rows(self):
        return [(x, y, v.real, v.imag) for (x, y), v in sorted(self.entries.items())]


# -- free tree -----------------------------------------------------------

def free_gamma(K: int, zeta) -> complex:
    """Root of ``K g^2 + zeta g + 1 = 0`` on the Herglotz branch.

    For real ``zeta`` the branch is picked at ``eta = 1e-12`` and the exact
    root of the ``eta = 0`` quadratic nearest to it is returned.
    """
    z = _as_zeta(zeta)

    def roots(w):
        disc = np.sqrt(complex(w * w - 4 * K))
        return ((-w + disc) / (2 * K), (-w - disc) / (2 * K))

    if z.imag > 0:
        g = max(roots(z), key=lambda r: r.imag)
        assert g.imag > 0, "no root in the upper half plane"
        return g
    if z.imag < 0:
        raise ValueError("zeta must lie in the closed upper half plane")
    probe = max(roots(complex(z.real, BOUNDARY_ETA)), key=lambda r: r.imag)
    g = min(roots(z), key=lambda r: abs(r - probe))
    if abs(g.imag) < 1e-9 * max(1.0, abs(g)) and abs(z.real) > 2 * np.sqrt(K):
        g = complex(g.real, 0.0)
    return g


def is_edge_ambiguous(K: int, E: float) -> bool:
    return abs(abs(E) - 2 * np.sqrt(K)) < EDGE_TOL


# -- recursions ----------------------------------------------------------

def _leaf_sigma(geometry, leaf_sigma):
    n_leaf = int(geometry.level_counts[-1])
    if leaf_sigma is None:
        return np.zeros(n_leaf, dtype=complex)
    arr = np.broadcast_to(np.asarray(leaf_sigma, dtype=complex), (n_leaf,))
    return arr


def forward_gammas(geometry: TreeGeometry, realization: FiniteTreeRealization, zeta,
                   leaf_sigma=None) -> np.ndarray:
    """``Gamma(u)`` for every vertex, the Green function of the subtree below ``u``.

    At the root this is ``G(0, 0)``.  Cost is linear in the node count.
    """
    z = _as_zeta(zeta)
    pot = realization.potentials
    gam = np.empty(geometry.node_count, dtype=complex)
    R = geometry.R
    sl = geometry.level(R - 1)
    gam[sl] = 1.0 / (pot[sl] - z - _leaf_sigma(geometry, leaf_sigma))
    for d in range(R - 2, -1, -1):
        sl, below = geometry.level(d), geometry.level(d + 1)
        csum = gam[below].reshape(-1, geometry.branching(d)).sum(axis=1)
        gam[sl] = 1.0 / (pot[sl] - z - csum)
    return gam


def backward_gammas(geometry, realization, zeta, gammas=None, leaf_sigma=None,
                    root_sigma: complex = 0.0) -> np.ndarray:
    """Green function at the parent of ``x`` with the subtree of ``x`` removed.

    Entry ``x`` is ``G(p, p)`` for the tree minus the forward subtree of
    ``x``, where ``p`` is the parent; entry 0 is ``root_sigma`` (extra
    self-energy seen by the root from above, zero for a finite ball).
    """
    z = _as_zeta(zeta)
    if gammas is None:
        gammas = forward_gammas(geometry, realization, zeta, leaf_sigma)
    pot = realization.potentials
    up = np.empty(geometry.node_count, dtype=complex)
    up[0] = root_sigma
    for d in range(geometry.R - 1):
        sl, below = geometry.level(d), geometry.level(d + 1)
        b = geometry.branching(d)
        kids = gammas[below].reshape(-1, b)
        total = pot[sl] - z - kids.sum(axis=1) - up[sl]
        up[below] = (1.0 / (total[:, None] + kids)).ravel()
    return up


def _sigma_all(geometry, realization, zeta, leaf_sigma=None, root_sigma=0.0):
    z = _as_zeta(zeta)
    gam = forward_gammas(geometry, realization, z, leaf_sigma)
    up = backward_gammas(geometry, realization, z, gam, leaf_sigma, root_sigma)
    sig = z + up
    for d in range(geometry.R - 1):
        sl, below = geometry.level(d), geometry.level(d + 1)
        sig[sl] += gam[below].reshape(-1, geometry.branching(d)).sum(axis=1)
    sig[geometry.level(geometry.R - 1)] += _leaf_sigma(geometry, leaf_sigma)
    return sig, gam


def diagonal_green(geometry, realization, zeta, leaf_sigma=None) -> np.ndarray:
    """``G(x, x)`` for every vertex, via forward and backward sweeps."""
    sig, _ = _sigma_all(geometry, realization, zeta, leaf_sigma)
    return 1.0 / (realization.potentials - sig)


def self_energy(geometry, realization, zeta, x: int, leaf_sigma=None) -> complex:
    """``sigma_x`` with ``G(x, x) = 1 / (lam V(x) - sigma_x)``; independent of ``V(x)``."""
    geometry._check(x)
    sig, _ = _sigma_all(geometry, realization, zeta, leaf_sigma)
    return complex(sig[x])


def root_row(geometry, realization, zeta, leaf_sigma=None, gammas=None) -> np.ndarray:
    """``G(0, x)`` for every vertex, from the path-product factorization."""
    if gammas is None:
        gammas = forward_gammas(geometry, realization, zeta, leaf_sigma)
    row = np.empty(geometry.node_count, dtype=complex)
    row[0] = gammas[0]
    for d in range(1, geometry.R):
        sl = geometry.level(d)
        row[sl] = -row[geometry.parent[sl]] * gammas[sl]
    return row


def sum_rule_residual(geometry, realization, zeta, leaf_sigma=None) -> float:
    """``|sum_x |G(0, x)|^2 - Im G(0, 0) / eta|``; zero for a cut-off ball."""
    z = _as_zeta(zeta)
    row = root_row(geometry, realization, z, leaf_sigma)
    return float(abs(np.sum(np.abs(row) ** 2) - row[0].imag / z.imag))


def truncated_gamma(geometry, realization, zeta, leaf_sigma=None) -> complex:
    """``G(0, 0)`` of the operator restricted to the ball."""
    return complex(forward_gammas(geometry, realization, zeta, leaf_sigma)[0])


def path_green(geometry, realization, zeta, x: int, leaf_sigma=None) -> complex:
    """``G(0, x)`` as a signed product of forward Green functions along the path."""
    gam = forward_gammas(geometry, realization, zeta, leaf_sigma)
    p = geometry.path(x)
    return complex((-1) ** (len(p) - 1) * np.prod(gam[p]))


# -- dense oracle --------------------------------------------------------

def _operator(geometry, realization, zeta, removed, leaf_sigma):
    n = geometry.node_count
    if n > DENSE_NODE_CAP:
        raise ValueError(f"dense oracle limited to {DENSE_NODE_CAP} sites, got {n}")
    z = _as_zeta(zeta)
    keep = np.ones(n, dtype=bool)
    if removed:
        keep[list(removed)] = False
    diag = realization.potentials.astype(complex) - z
    if leaf_sigma is not None:
        diag[geometry.level(geometry.R - 1)] -= _leaf_sigma(geometry, leaf_sigma)
    par, child = geometry.edges()
    live = keep[par] & keep[child]
    rows = np.concatenate([par[live], child[live], np.arange(n)])
    cols = np.concatenate([child[live], par[live], np.arange(n)])
    vals = np.concatenate([np.ones(2 * live.sum()), diag])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    idx = np.flatnonzero(keep)
    return A[idx][:, idx], idx


def dense_green_oracle(geometry, realization, zeta, pairs, removed=(), leaf_sigma=None) -> GreenTable:
    """Resolvent entries by direct linear algebra.

    ``removed`` deletes vertices (and their edges) before inverting.
    Entries involving a removed vertex, or vertices in different
    components, come out as zero.
    """
    A, idx = _operator(geometry, realization, zeta, removed, leaf_sigma)
    pos = {int(v): i for i, v in enumerate(idx)}
    pairs = [(int(x), int(y)) for x, y in pairs]
    cols = sorted({y for _, y in pairs if y in pos})
    rhs = np.zeros((len(idx), len(cols)), dtype=complex)
    for j, y in enumerate(cols):
        rhs[pos[y], j] = 1.0
    if len(cols) == 0:
        sol = rhs
    elif len(idx) <= _DENSE_DIRECT:
        sol = np.linalg.solve(A.toarray(), rhs)
    else:
        sol = spla.splu(A.tocsc()).solve(rhs)
    colpos = {y: j for j, y in enumerate(cols)}
    entries = {}
    for x, y in pairs:
        entries[(x, y)] = complex(sol[pos[x], colpos[y]]) if (x in pos and y in pos) else 0j
    return GreenTable(_as_zeta(zeta), entries)


# -- Krein off-diagonal --------------------------------------------------

@dataclass(frozen=True)
class KreinResult:
    value: complex
    punctured: complex | None
    x_minus: int | None
    y_minus: int | None
    degenerate: bool


def krein_from_block(gxx: complex, gyy: complex, gxy: complex) -> complex:
    """``A = G_xy / (G_xx G_yy - G_xy^2)``.

    This is minus the off-diagonal entry of the inverse of the 2x2 block.
    """
    return gxy / (gxx * gyy - gxy * gxy)


def krein_offdiag(geometry, realization, zeta, x: int, y: int, removed=(), rtol: float = 1e-9,
                  leaf_sigma=None) -> KreinResult:
    """Off-diagonal coupling ``A(x, y)`` computed two independent ways.

    Path one inverts the 2x2 block of ``G``.  Path two evaluates
    ``G(x_-, y_-)`` on the tree with ``x`` and ``y`` deleted, where ``x_-``
    is the neighbor of ``x`` on the path toward ``y``.  For adjacent sites
    path two is undefined and only path one is returned.
    """
    if x == y:
        raise ValueError("x and y must differ")
    removed = set(int(v) for v in removed)
    g = dense_green_oracle(geometry, realization, zeta, [(x, x), (y, y), (x, y)], removed, leaf_sigma)
    a = krein_from_block(g[x, x], g[y, y], g[x, y])
    route = geometry.tree_path(x, y)
    if len(route) == 2:
        return KreinResult(a, None, None, None, True)
    xm, ym = route[1], route[-2]
    h = dense_green_oracle(geometry, realization, zeta, [(xm, ym)], removed | {x, y}, leaf_sigma)
    b = h[xm, ym]
    if abs(a - b) > rtol * max(abs(a), abs(b)) + 1e-300 and abs(a - b) > 1e-15:
        raise ArithmeticError(f"Krein paths disagree: {a} vs {b}")
    return KreinResult(a, b, xm, ym, False)
