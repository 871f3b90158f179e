import numpy as np
import pytest
import scipy.linalg as sla

from conftest import path_dirichlet
from edsolve.energy import EnergyDecomposition, Partition, closed_energy, interior_energy
from edsolve.linalg import householder_extend
from edsolve.measurements import (alpha_factor, condition_factor, error_factor, interior_spectrum,
                                  measure_patch, partition_measurements)
from edsolve.problems import random_energy_decomposition

S = [3, 4, 5, 6]
PHI_CONST = np.full((4, 1), 0.5)


class TestPathPatch:
    def test_interior_spectrum(self, path10):
        dec, _ = path10
        r2 = np.sqrt(2.0)
        np.testing.assert_allclose(interior_spectrum(dec, S), [0, 2 - r2, 2, 2 + r2], atol=1e-12)

    def test_error_factor(self, path10):
        dec, _ = path10
        assert error_factor(dec, S, 1) == pytest.approx(1 / np.sqrt(2 - np.sqrt(2)), abs=1e-12)
        assert error_factor(dec, S, 1) == pytest.approx(1.30656, abs=1e-5)

    def test_condition_factor(self, path10):
        dec, _ = path10
        assert condition_factor(dec, S, PHI_CONST) == pytest.approx(2 / 3, abs=1e-12)

    def test_condition_factor_dual_route(self, path10):
        dec, _ = path10
        C = closed_energy(dec, S)
        G = PHI_CONST.T @ np.linalg.inv(C) @ PHI_CONST
        assert condition_factor(dec, S, PHI_CONST) == pytest.approx(1 / np.linalg.eigvalsh(G)[0], rel=1e-10)

    def test_alpha_dense_pencil(self, path10):
        dec, _ = path10
        f = householder_extend(PHI_CONST)
        U = f.dense_u()
        lo = U.T @ interior_energy(dec, S) @ U
        hi = U.T @ closed_energy(dec, S) @ U
        expect = sla.eigh(hi, lo, eigvals_only=True)[-1]
        a = alpha_factor(dec, S, f)
        assert a == pytest.approx(expect, rel=1e-10)
        assert a >= 1

    def test_measure_patch_bundle(self, path10):
        dec, _ = path10
        m = measure_patch(dec, S, 1, with_alpha=True)
        assert m.size == 4 and m.q == 1
        assert m.error_factor == pytest.approx(1.3065629648763766)
        assert m.condition_factor == pytest.approx(2 / 3)
        np.testing.assert_allclose(np.abs(m.phi), PHI_CONST, atol=1e-12)
        assert m.alpha >= 1


class TestSentinels:
    def test_single_loop_vertex(self):
        dec = EnergyDecomposition.from_graph(1, np.zeros((0, 2)), [], [0], [3.0])
        np.testing.assert_allclose(interior_spectrum(dec, [0]), [3.0])
        assert condition_factor(dec, [0], [[1.0]]) == pytest.approx(3.0)

    def test_no_interior_elements(self, path10):
        dec, _ = path10
        np.testing.assert_allclose(interior_spectrum(dec, [2, 5]), [0, 0], atol=0)

    def test_q_covers_patch(self, path10):
        dec, _ = path10
        assert error_factor(dec, S, 4) == 0.0
        assert error_factor(dec, S, 7) == 0.0

    def test_disconnected_patch(self, path10):
        dec, _ = path10
        assert error_factor(dec, [2, 5], 1) == np.inf

    def test_bad_q(self, path10):
        with pytest.raises(ValueError):
            error_factor(path10[0], S, 0)

    def test_count_bounds(self, path10):
        with pytest.raises(ValueError):
            interior_spectrum(path10[0], S, 5)


class TestAlpha:
    def test_no_boundary_gives_one(self):
        # a component with no elements leaving the patch
        dec = EnergyDecomposition.from_graph(4, np.array([[0, 1], [1, 2], [2, 3]]), np.ones(3),
                                             np.arange(4), np.ones(4))
        phi = np.linalg.eigh(interior_energy(dec, np.arange(4)))[1][:, :1]
        assert alpha_factor(dec, np.arange(4), householder_extend(phi)) == pytest.approx(1.0)

    def test_scale_invariant(self):
        g = random_energy_decomposition(12, 30, seed=5)
        P = np.arange(6)
        phi = np.linalg.eigh(interior_energy(g.dec, P))[1][:, :1]
        f = householder_extend(phi)
        scaled = EnergyDecomposition(g.dec.n, g.dec.slot_ptr, g.dec.slot_vertex, 7.0 * g.dec.values)
        assert alpha_factor(scaled, P, f) == pytest.approx(alpha_factor(g.dec, P, f), rel=1e-10)


class TestPartitionMeasurements:
    def test_single_patch(self, path10):
        dec, _ = path10
        pm = partition_measurements(dec, Partition([np.arange(10)]), 1)
        m = measure_patch(dec, np.arange(10), 1)
        assert pm.eps == m.error_factor and pm.delta == m.condition_factor

    def test_aggregate_is_max(self, path10):
        dec, _ = path10
        part = Partition([[0, 1, 2], S, [7, 8, 9]], 10)
        pm = partition_measurements(dec, part, 1)
        direct = [measure_patch(dec, P, 1) for P in part.patches]
        assert pm.eps == max(d.error_factor for d in direct)
        assert pm.delta == max(d.condition_factor for d in direct)
        assert pm.max_delta_eps2() == max(d.condition_factor * d.error_factor**2 for d in direct)


class TestLocalBounds:
    def test_local_compression_bound(self):
        g = random_energy_decomposition(20, 60, seed=11)
        P = np.arange(10)
        Al = interior_energy(g.dec, P)
        w, V = np.linalg.eigh(Al)
        q = 2
        eps = 1 / np.sqrt(w[q])
        Phi = V[:, :q]
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.standard_normal(10)
            r = x - Phi @ (Phi.T @ x)
            assert np.linalg.norm(r) <= eps * np.sqrt(x @ Al @ x) + 1e-10

    def test_interior_spectrum_dimension_is_minimal(self):
        # any subspace with fewer than q(eps) directions leaves some x with
        # ||x - P x|| > eps ||x||_A
        g = random_energy_decomposition(16, 50, seed=2, anchor=0.5)
        P = np.arange(16)
        Al = interior_energy(g.dec, P)
        w = np.linalg.eigvalsh(Al)
        eps = 1 / np.sqrt(0.5 * (w[3] + w[4]))
        q_eps = int(np.sum(w < 1 / eps**2))
        L = np.linalg.cholesky(Al)
        Linv = np.linalg.inv(L)
        rng = np.random.default_rng(1)
        for _ in range(200):
            Th, _ = np.linalg.qr(rng.standard_normal((16, q_eps - 1)))
            R = np.eye(16) - Th @ Th.T
            worst = np.linalg.eigvalsh(Linv @ R @ Linv.T)[-1]
            assert np.sqrt(worst) > eps

    def test_condition_factor_dominates_lambda_q(self, geo400):
        # delta_j >= lambda_q(interior) since the closed energy dominates the interior one
        from edsolve.partition import pair_cluster

        res = pair_cluster(geo400.dec, 0.05, 50.0)
        pm = partition_measurements(geo400.dec, res.partition, 1)
        for m in pm.patches:
            assert m.condition_factor >= m.lambda_interior[0] * (1 - 1e-10)
