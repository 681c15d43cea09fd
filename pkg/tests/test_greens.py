import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treespectra.disorder import RealizationSeed, cauchy, uniform
from treespectra.greens import (
    ComplexEnergy,
    FiniteTreeRealization,
    GreenTable,
    TreeGeometry,
    backward_gammas,
    dense_green_oracle,
    diagonal_green,
    forward_gammas,
    free_gamma,
    is_edge_ambiguous,
    krein_offdiag,
    path_green,
    realize,
    root_row,
    self_energy,
    sum_rule_residual,
    truncated_gamma,
)


def zeros(geo):
    return FiniteTreeRealization(geo, np.zeros(geo.node_count))


def random_case(seed, K=None, R=None, rooted=None):
    rng = RealizationSeed(seed).generator()
    K = K or int(rng.integers(2, 4))
    R = R or int(rng.integers(2, 7))
    rooted = bool(rng.integers(0, 2)) if rooted is None else rooted
    geo = TreeGeometry(K, R, rooted)
    model = (cauchy if seed % 2 else uniform)(float(rng.uniform(0.2, 2)))
    real = realize(geo, model, RealizationSeed(seed, (1,)))
    z = complex(rng.uniform(-3, 3), 10 ** rng.uniform(-2, 0))
    return geo, real, z


class TestGeometry:
    def test_counts(self):
        assert TreeGeometry(2, 4).node_count == 15
        assert TreeGeometry(2, 3, rooted=False).node_count == 1 + 3 + 6

    def test_parent_child_consistency(self):
        geo = TreeGeometry(3, 4, rooted=False)
        for x in range(geo.node_count):
            for c in geo.children(x):
                assert geo.parent[c] == x

    def test_paths(self):
        geo = TreeGeometry(2, 4)
        assert geo.path(0) == [0]
        assert geo.path(14) == [0, 2, 6, 14]
        assert geo.tree_path(7, 8) == [7, 3, 8]
        assert geo.tree_path(7, 14) == [7, 3, 1, 0, 2, 6, 14]

    def test_invalid(self):
        with pytest.raises(ValueError):
            TreeGeometry(1, 3)
        with pytest.raises(IndexError):
            TreeGeometry(2, 2).path(5)

    def test_realization_read_only(self):
        real = zeros(TreeGeometry(2, 2))
        with pytest.raises(ValueError):
            real.potentials[0] = 1.0

    def test_realization_shape(self):
        with pytest.raises(ValueError):
            FiniteTreeRealization(TreeGeometry(2, 2), np.zeros(4))

    def test_complex_energy(self):
        assert ComplexEnergy(1.0, 0.5).zeta == 1 + 0.5j


class TestFreeGamma:
    def test_examples(self):
        assert abs(free_gamma(2, 1j) - 0.5j) <= 1e-12
        assert abs(free_gamma(2, 0) - 1j / math.sqrt(2)) <= 1e-12
        assert free_gamma(2, 3) == -0.5
        assert free_gamma(2, -3) == 0.5

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 6), st.floats(-10, 10), st.floats(1e-6, 5))
    def test_herglotz_root(self, K, E, eta):
        z = complex(E, eta)
        g = free_gamma(K, z)
        assert g.imag > 0
        assert abs(K * g * g + z * g + 1) <= 1e-9 * max(1, abs(z))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 6), st.floats(0.01, 8))
    def test_real_axis_is_limit(self, K, excess):
        E = 2 * math.sqrt(K) + excess
        g0 = free_gamma(K, E)
        g1 = free_gamma(K, complex(E, 1e-9))
        assert g0.imag == 0.0 and abs(g0 - g1) <= 1e-6
        assert abs(g0) <= 1 / math.sqrt(K) + 1e-12

    def test_lower_half_plane(self):
        with pytest.raises(ValueError):
            free_gamma(2, -1j)

    def test_edge_flag(self):
        assert is_edge_ambiguous(2, 2 * math.sqrt(2))
        assert not is_edge_ambiguous(2, 2.5)


class TestRecursions:
    def test_single_site(self):
        assert truncated_gamma(TreeGeometry(2, 1), zeros(TreeGeometry(2, 1)), 1j) == pytest.approx(1j)

    def test_two_levels(self):
        geo = TreeGeometry(2, 2)
        assert truncated_gamma(geo, zeros(geo), 1j) == pytest.approx(1j / 3)

    def test_iterates_converge_to_free(self):
        geo = TreeGeometry(2, 8)
        assert abs(truncated_gamma(geo, zeros(geo), 1j) - 0.5j) < 1e-2

    def test_leaf_path(self):
        geo = TreeGeometry(2, 2)
        # signed convention for the +1 adjacency operator
        assert path_green(geo, zeros(geo), 1j, 1) == pytest.approx(1 / 3)
        assert path_green(geo, zeros(geo), 1j, 0) == pytest.approx(1j / 3)

    def test_sum_rule_example(self):
        geo = TreeGeometry(2, 2)
        row = root_row(geo, zeros(geo), 1j)
        assert np.sum(np.abs(row) ** 2) == pytest.approx(1 / 3)
        assert sum_rule_residual(geo, zeros(geo), 1j) <= 1e-15

    def test_free_full_tree_self_energy(self):
        geo = TreeGeometry(2, 4, rooted=False)
        sigma = self_energy(geo, zeros(geo), 1j, 0, leaf_sigma=2 * free_gamma(2, 1j))
        assert sigma == pytest.approx(2.5j, abs=1e-12)
        assert 1 / (0 - sigma) == pytest.approx(0.4j, abs=1e-12)

    def test_single_site_self_energy(self):
        geo = TreeGeometry(2, 1)
        assert self_energy(geo, zeros(geo), 0.3 + 0.2j, 0) == 0.3 + 0.2j

    def test_rank_one_response(self):
        geo, real, z = random_case(11)
        x = geo.node_count // 2
        pot = real.potentials.copy()
        pot[x] += 0.37
        moved = FiniteTreeRealization(geo, pot)
        before = 1 / diagonal_green(geo, real, z)[x]
        after = 1 / diagonal_green(geo, moved, z)[x]
        assert after - before == pytest.approx(0.37, abs=1e-10)
        assert self_energy(geo, real, z, x) == pytest.approx(self_energy(geo, moved, z, x), abs=1e-12)

    def test_backward_entry(self):
        geo, real, z = random_case(12, R=4)
        up = backward_gammas(geo, real, z)
        x = geo.node_count - 1
        p = int(geo.parent[x])
        sub = [v for v in range(geo.node_count) if x in geo.path(v)]
        ref = dense_green_oracle(geo, real, z, [(p, p)], removed=sub)[p, p]
        assert up[x] == pytest.approx(ref, rel=1e-10)


class TestOracle:
    def test_scalar(self):
        geo = TreeGeometry(2, 1)
        t = dense_green_oracle(geo, FiniteTreeRealization(geo, [0.7]), 1j, [(0, 0)])
        assert t[0, 0] == pytest.approx(1 / (0.7 - 1j))

    def test_two_level_root(self):
        geo = TreeGeometry(2, 2)
        assert dense_green_oracle(geo, zeros(geo), 1j, [(0, 0)])[0, 0] == pytest.approx(1j / 3)

    def test_symmetric(self):
        geo, real, z = random_case(3, K=2, R=3)
        pairs = [(x, y) for x in range(geo.node_count) for y in range(geo.node_count)]
        t = dense_green_oracle(geo, real, z, pairs)
        for x, y in pairs:
            assert abs(t[x, y] - t[y, x]) <= 1e-12

    def test_table_lookup_symmetric(self):
        t = GreenTable(1j, {(0, 1): 2.0})
        assert t[1, 0] == 2.0

    def test_node_cap(self):
        geo = TreeGeometry(2, 15)
        with pytest.raises(ValueError):
            dense_green_oracle(geo, zeros(geo), 1j, [(0, 0)])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_recursion_matches_oracle(self, seed):
        geo, real, z = random_case(seed)
        diag = diagonal_green(geo, real, z)
        row = root_row(geo, real, z)
        xs = list(range(geo.node_count))
        t = dense_green_oracle(geo, real, z, [(0, x) for x in xs] + [(x, x) for x in xs])
        for x in xs:
            assert abs(row[x] - t[0, x]) <= 1e-10 * abs(t[0, x])
            assert abs(diag[x] - t[x, x]) <= 1e-10 * abs(t[x, x])

    def test_pool_fed_boundary(self):
        geo, real, z = random_case(5, R=4)
        leaf = np.linspace(0.1, 0.5, int(geo.level_counts[-1])) * (1 + 1j)
        t = dense_green_oracle(geo, real, z, [(0, 0), (3, 3)], leaf_sigma=leaf)
        assert truncated_gamma(geo, real, z, leaf) == pytest.approx(t[0, 0], rel=1e-10)
        assert diagonal_green(geo, real, z, leaf)[3] == pytest.approx(t[3, 3], rel=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_herglotz_and_resolvent_bound(self, seed):
        geo, real, z = random_case(seed)
        assert truncated_gamma(geo, real, z).imag > 0
        t = dense_green_oracle(geo, real, z, [(0, x) for x in range(geo.node_count)])
        assert max(abs(v) for v in t.entries.values()) <= 1 / z.imag * (1 + 1e-12)

    def test_three_point_factorization(self):
        rng = np.random.default_rng(7)
        for trial in range(50):
            geo, real, z = random_case(100 + trial, R=int(rng.integers(4, 6)))
            n = geo.node_count
            while True:
                x, y = (int(v) for v in rng.integers(0, n, 2))
                route = geo.tree_path(x, y)
                if len(route) >= 3:
                    break
            k = int(rng.integers(1, len(route) - 1))
            u, um, up = route[k], route[k - 1], route[k + 1]
            g = dense_green_oracle(geo, real, z, [(x, y), (u, u)])
            h = dense_green_oracle(geo, real, z, [(x, um), (up, y)], removed=(u,))
            assert h[x, um] * g[u, u] * h[up, y] == pytest.approx(g[x, y], rel=1e-9)


class TestKrein:
    def test_disconnected(self):
        geo, real, z = random_case(20, K=2, R=4)
        r = krein_offdiag(geo, real, z, 3, 5, removed=(0,))
        assert r.value == 0 and r.punctured == 0

    def test_sibling_leaves_free(self):
        geo = TreeGeometry(2, 3)
        r = krein_offdiag(geo, zeros(geo), 1j, 3, 4)
        assert r.value == pytest.approx(r.punctured, rel=1e-9)
        assert r.x_minus == 1 and r.y_minus == 1

    def test_two_site_chain(self):
        geo = TreeGeometry(2, 2)
        r = krein_offdiag(geo, zeros(geo), 0.4 + 1j, 0, 1, removed=(2,))
        assert r.degenerate and r.value == pytest.approx(-1.0, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_paths_agree(self, seed):
        geo, real, z = random_case(seed)
        rng = np.random.default_rng(seed)
        x, y = (int(v) for v in rng.choice(geo.node_count, 2, replace=False))
        r = krein_offdiag(geo, real, z, x, y)
        if not r.degenerate:
            assert r.value == pytest.approx(r.punctured, rel=1e-9)

    def test_same_site(self):
        geo = TreeGeometry(2, 2)
        with pytest.raises(ValueError):
            krein_offdiag(geo, zeros(geo), 1j, 1, 1)
