import numpy as np
import pytest

from edsolve.coarse import construct_phi, exact_psi
from edsolve.energy import EnergyDecomposition, Partition
from edsolve.localize import (Localizer, PatchLayerIndex, construct_tilde_psi, decay_certificate,
                              exact_column, patch_adjacency, patch_layers)
from edsolve.measurements import partition_measurements
from edsolve.partition import pair_cluster, regular_partition
from edsolve.problems import random_geometric_laplacian


def path_graph(n):
    edges = np.array([(i, i + 1) for i in range(n - 1)])
    return EnergyDecomposition.from_graph(n, edges, np.ones(n - 1), np.arange(n), np.full(n, 0.1))


@pytest.fixture(scope="module")
def setup600():
    g = random_geometric_laplacian(600, 2, 2.5, seed=5)
    res = pair_cluster(g.dec, np.sqrt(1e-3), 50.0)
    coarse = construct_phi(g.dec, res.partition, 1, res.phi_blocks, res.eps)
    return g, res, coarse


class TestPatchLayers:
    def test_path_singletons(self):
        dec = path_graph(6)
        part = Partition.singletons(6)
        assert patch_layers(part, dec, 2, 0).tolist() == [2]
        assert patch_layers(part, dec, 2, 1).tolist() == [1, 2, 3]
        assert patch_layers(part, dec, 2, 2).tolist() == [0, 1, 2, 3, 4]
        assert patch_layers(part, dec, 2, 9).tolist() == list(range(6))

    def test_saturation(self):
        dec = path_graph(6)
        idx = PatchLayerIndex(patch_adjacency(dec, Partition.singletons(6)), 0)
        assert not idx.saturated(4)
        assert idx.saturated(5)

    def test_grid_growth(self):
        xs = np.arange(10)
        coords = np.array([(x, y) for x in xs for y in xs], dtype=float)
        edges = [(10 * x + y, 10 * x + y + 1) for x in xs for y in xs[:-1]]
        edges += [(10 * x + y, 10 * (x + 1) + y) for x in xs[:-1] for y in xs]
        dec = EnergyDecomposition.from_graph(100, np.array(edges), np.ones(len(edges)))
        part = regular_partition(coords + 0.5, 5)
        j = part.patch_of[44]
        sizes = [patch_layers(part, dec, j, k).size for k in range(4)]
        # 5x5 patch grid, king-move neighbours are excluded (edges are axis aligned)
        assert sizes == [1, 5, 13, 21]

    def test_center_out_of_range(self):
        dec = path_graph(4)
        with pytest.raises(IndexError):
            patch_layers(Partition.singletons(4), dec, 7, 1)


class TestColumns:
    def test_constraint_and_history(self, setup600):
        g, _, coarse = setup600
        loc = Localizer(g.A, g.dec, coarse)
        Phi = coarse.phi_matrix()
        col = loc.column(3, 1e-6, keep_history=True)
        psi = col.dense(600)
        target = np.zeros(coarse.N)
        target[3] = 1.0
        assert np.abs(Phi.T @ psi - target).max() <= 1e-8
        assert all(np.diff(col.energies) <= 1e-12 * col.energies[0])

    def test_pythagoras(self, setup600):
        g, _, coarse = setup600
        loc = Localizer(g.A, g.dec, coarse)
        i = 11
        psi = exact_column(g.A, coarse, i)
        exact2 = psi @ (g.A @ psi)
        col = loc.column(i, 0.0, inner="direct", max_radius=4, keep_history=True)
        for k, pk in enumerate(col.history):
            e = pk - psi
            assert abs(col.energies[k + 1] - exact2 - e @ (g.A @ e)) <= 1e-8 * exact2

    def test_large_tolerance_stops_early(self, setup600):
        g, _, coarse = setup600
        basis = construct_tilde_psi(g.A, g.dec, coarse, 1e6)
        assert basis.radii.max() <= 2

    def test_tiny_tolerance_matches_exact(self, setup600):
        g, _, coarse = setup600
        loc = Localizer(g.A, g.dec, coarse)
        for i in (0, 7):
            col = loc.column(i, 1e-12, inner_rtol=1e-13)
            psi = exact_column(g.A, coarse, i)
            e = col.dense(600) - psi
            assert np.sqrt(e @ (g.A @ e)) <= 1e-6 * np.sqrt(psi @ (g.A @ psi))

    def test_direct_and_pcg_agree(self, setup600):
        g, _, coarse = setup600
        loc = Localizer(g.A, g.dec, coarse)
        a = loc.column(5, 0.0, inner="direct", max_radius=3).dense(600)
        b = loc.column(5, 0.0, inner_rtol=1e-13, max_radius=3).dense(600)
        np.testing.assert_allclose(a, b, atol=1e-9 * np.abs(a).max())

    def test_negative_tolerance(self, setup600):
        g, _, coarse = setup600
        with pytest.raises(ValueError):
            construct_tilde_psi(g.A, g.dec, coarse, 0.0)
        with pytest.raises(ValueError):
            Localizer(g.A, g.dec, coarse).column(0, -1.0)

    def test_threads_deterministic(self, setup600):
        g, _, coarse = setup600
        a = construct_tilde_psi(g.A, g.dec, coarse, 1e-3)
        b = construct_tilde_psi(g.A, g.dec, coarse, 1e-3, threads=4)
        assert (a.Psi != b.Psi).nnz == 0

    def test_radius_grows_logarithmically(self, setup600):
        g, _, coarse = setup600
        loc = Localizer(g.A, g.dec, coarse)
        tols = np.array([1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
        cols = range(0, coarse.N, max(coarse.N // 25, 1))
        mean_r = [np.mean([loc.column(i, t).radius for i in cols]) for t in tols]
        x = np.log(1 / tols)
        slope, icpt = np.polyfit(x, mean_r, 1)
        fit = slope * x + icpt
        r2 = 1 - np.sum((mean_r - fit) ** 2) / np.sum((mean_r - np.mean(mean_r)) ** 2)
        assert slope > 0
        assert r2 >= 0.9

    def test_localized_compression_quality(self, setup600):
        g, res, coarse = setup600
        from edsolve.coarse import compression_error

        basis = construct_tilde_psi(g.A, g.dec, coarse, np.sqrt(1e-3))
        assert compression_error(g.A, basis.compressed(g.A)) <= 2 * res.error_factor**2
        # a column is flagged only when its layers saturated before the rule fired
        adj = patch_adjacency(g.dec, coarse.partition)
        for c in basis.columns:
            if c.hit_cap:
                assert PatchLayerIndex(adj, int(coarse.coarse_patch[c.index])).saturated(c.radius)
        assert len(basis.radii_table()) == coarse.N


class TestDecayCertificate:
    def test_bound_holds(self, setup600):
        g, res, coarse = setup600
        pm = partition_measurements(g.dec, res.partition, 1, with_alpha=True)
        comp = exact_psi(g.A, coarse)
        for i in (0, coarse.N // 2):
            j = coarse.coarse_patch[i]
            rows = decay_certificate(g.A, g.dec, coarse, i, 5, pm.alpha,
                                     pm.patches[j].condition_factor, comp.Psi[:, i])
            assert rows[0].k == 0
            for r in rows:
                assert r.error2 <= r.bound + 1e-8
                assert r.tail2 >= -1e-12
            assert rows[-1].error2 < rows[0].error2

    def test_initial_error_within_delta(self, setup600):
        g, res, coarse = setup600
        psi0_energy = []
        loc = Localizer(g.A, g.dec, coarse)
        for i in range(0, coarse.N, 7):
            j, psi = loc._initial(i)
            psi0_energy.append((psi @ (g.A @ psi), res.delta[j]))
        assert all(e <= d * (1 + 1e-10) for e, d in psi0_energy)

    def test_no_boundary_alpha_one(self):
        # one patch covering the graph: the first step is already exact
        g = random_geometric_laplacian(60, 2, 2.5, seed=0)
        coarse = construct_phi(g.dec, Partition([np.arange(60)]), 1)
        rows = decay_certificate(g.A, g.dec, coarse, 0, 2, 1.0, 1.0)
        assert rows[0].error2 <= 1e-10 * rows[0].energy2
