"""Free-parameter counting, BIC arithmetic, constrained refits, and the
grid-search selector."""

import math

import numpy as np
import pytest
from scipy.special import logit

from flagmodel.admm import SolverConfig
from flagmodel.data import BinaryDataset
from flagmodel.pseudolik import FlagParams, log_pseudo_likelihood
from flagmodel.selection import (
    bic_of_entry,
    count_free_params,
    default_gamma_grid,
    default_rho_grid,
    fit_irt_baseline,
    grid_search_select,
    refit_constrained,
    write_path_csv,
)
from flagmodel.simulate import SimDesign, simulate_dataset


def pair_design(jdim=6, loading=0.4, edge=1.0):
    a = np.full((jdim, 1), loading)
    s = np.zeros((jdim, jdim))
    for i in range(0, jdim - 1, 2):
        s[i, i + 1] = s[i + 1, i] = edge
    m_off = a @ a.T + s
    np.fill_diagonal(m_off, 0.0)
    np.fill_diagonal(s, -m_off.sum(axis=0) - np.diag(a @ a.T))
    return SimDesign(a=a, s=s)


class TestCountFreeParams:
    def test_published_count(self):
        # 79 items, 3 factors, 346 edges: the count that reproduces the
        # published BIC value
        assert count_free_params(79, 3, range(346)) == 659

    def test_diagonal_only(self):
        assert count_free_params(5, 0, ()) == 5

    def test_full_model(self):
        edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        assert count_free_params(4, 4, edges) == 20

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            count_free_params(3, 4, ())


class TestBicOfEntry:
    def test_published_anchor(self):
        assert bic_of_entry(-26177.6, 659, 824) == pytest.approx(56779.8, abs=0.1)

    def test_zero(self):
        assert bic_of_entry(0.0, 0, 10) == 0.0

    def test_log_n_scaling(self):
        n = int(round(math.e**2))
        # ln N is not exactly 2 for integer N; check the formula directly
        assert bic_of_entry(-100.0, 10, n) == pytest.approx(200 + 10 * math.log(n))

    def test_rejects_empty_data(self):
        with pytest.raises(ValueError):
            bic_of_entry(-1.0, 1, 0)


class TestRefitConstrained:
    def test_independence_model_closed_form(self):
        rng = np.random.default_rng(0)
        data = BinaryDataset(rng.integers(0, 2, size=(400, 5)))
        result = refit_constrained(data, 0, ())
        assert result.converged
        p_hat = data.col_sums / data.n_subjects
        np.testing.assert_allclose(np.diag(result.params.S), 2 * logit(p_hat), atol=1e-5)
        assert np.abs(result.params.L).max() == 0.0

    def test_beats_generating_truth(self):
        design = pair_design()
        data, truth = simulate_dataset(design, 2000, 5)
        params_true = FlagParams(L=truth.l, S=truth.s)
        edges = tuple((i, j) for i in range(6) for j in range(i + 1, 6) if truth.s[i, j] != 0)
        result = refit_constrained(data, 1, edges, init=params_true)
        assert result.log_pl >= log_pseudo_likelihood(params_true, data) - 1e-8

    def test_stationary_at_optimum(self):
        design = pair_design()
        data, truth = simulate_dataset(design, 500, 6)
        edges = tuple((i, j) for i in range(6) for j in range(i + 1, 6) if truth.s[i, j] != 0)
        first = refit_constrained(data, 1, edges, init=FlagParams(L=truth.l, S=truth.s))
        again = refit_constrained(data, 1, edges, init=first.params)
        assert np.abs(again.params.M - first.params.M).max() <= 1e-8
        assert again.log_pl == pytest.approx(first.log_pl, abs=1e-8)

    def test_never_below_initialization(self):
        design = pair_design()
        data, truth = simulate_dataset(design, 300, 9)
        init = FlagParams(L=truth.l, S=truth.s)
        result = refit_constrained(data, 1, (), init=FlagParams(L=truth.l, S=np.diag(np.diag(truth.s))))
        start = log_pseudo_likelihood(FlagParams(L=truth.l, S=np.diag(np.diag(truth.s))), data)
        assert result.log_pl >= start - 1e-9

    def test_output_respects_submodel(self):
        design = pair_design()
        data, truth = simulate_dataset(design, 300, 10)
        edges = ((0, 1), (2, 3))
        result = refit_constrained(data, 1, edges, init=None)
        s = result.params.S
        allowed = set(edges)
        for i in range(6):
            for j in range(i + 1, 6):
                if (i, j) not in allowed:
                    assert s[i, j] == 0.0
        w = np.linalg.eigvalsh(result.params.L)
        assert (w > 1e-8 * max(1.0, w[-1])).sum() <= 1


class TestFitIrtBaseline:
    def test_full_rank_nests_restricted(self):
        rng = np.random.default_rng(1)
        data = BinaryDataset(rng.integers(0, 2, size=(150, 4)))
        full = fit_irt_baseline(data, 4)
        restricted = fit_irt_baseline(data, 1)
        assert full.log_pl >= restricted.log_pl - 1e-6

    def test_recovers_pure_irt_likelihood(self):
        a = np.full((8, 1), 0.5)
        s = np.zeros((8, 8))
        np.fill_diagonal(s, -(a @ a.T).sum(axis=0))
        design = SimDesign(a=a, s=s)
        data, truth = simulate_dataset(design, 3000, 2)
        baseline = fit_irt_baseline(data, 1)
        at_truth = log_pseudo_likelihood(FlagParams(L=truth.l, S=truth.s), data)
        assert baseline.log_pl >= at_truth - 1e-6

    def test_baseline_bic_beats_spurious_edges(self):
        # on data with no true edges the edgeless submodel should win BIC
        # against the same model plus arbitrary extra edges
        a = np.full((6, 1), 0.5)
        s = np.zeros((6, 6))
        np.fill_diagonal(s, -(a @ a.T).sum(axis=0))
        design = SimDesign(a=a, s=s)
        wins = 0
        for rep in range(10):
            data, _ = simulate_dataset(design, 1000, 100 + rep)
            base = fit_irt_baseline(data, 1)
            bic_base = bic_of_entry(base.log_pl, count_free_params(6, 1, ()), 1000)
            spurious = ((0, 3), (1, 4))
            alt = refit_constrained(data, 1, spurious, init=None)
            bic_alt = bic_of_entry(alt.log_pl, count_free_params(6, 1, spurious), 1000)
            wins += bic_base <= bic_alt
        assert wins >= 8

    def test_requires_positive_k(self):
        rng = np.random.default_rng(2)
        data = BinaryDataset(rng.integers(0, 2, size=(20, 3)))
        with pytest.raises(ValueError):
            fit_irt_baseline(data, 0)


class TestDefaultGrids:
    def test_gamma_grid_covers_unit_interval_top(self):
        grid = default_gamma_grid()
        assert len(grid) == 20
        assert grid[0] == pytest.approx(0.001)
        assert grid[-1] == pytest.approx(0.02)

    def test_rho_grid(self):
        grid = default_rho_grid()
        assert len(grid) == 20
        assert grid[0] == pytest.approx(10.5)
        assert grid[-1] == pytest.approx(20.0)


@pytest.fixture(scope="module")
def small_selection():
    design = pair_design()
    data, truth = simulate_dataset(design, 600, 21)
    config = SolverConfig(lam=5.0, tol_abs=1e-6, tol_rel=1e-5)
    result = grid_search_select(
        data, gamma_grid=np.linspace(0.02, 0.14, 5), rho_grid=np.array([2.0, 4.0]),
        config=config,
    )
    return data, truth, result


class TestGridSearchSelect:
    def test_single_point_grid(self):
        design = pair_design()
        data, _ = simulate_dataset(design, 200, 22)
        result = grid_search_select(data, gamma_grid=[0.05], rho_grid=[3.0])
        assert len(result.path) == 1
        assert result.best_index == 0

    def test_saturating_point_wins_on_independent_data(self):
        rng = np.random.default_rng(3)
        data = BinaryDataset(rng.integers(0, 2, size=(2000, 6)))
        result = grid_search_select(
            data, gamma_grid=[0.005, 10.0], rho_grid=[1.0],
            config=SolverConfig(lam=2.0),
        )
        best = result.best
        assert best.k_hat == 0
        assert best.edge_set == ()

    def test_bic_identity_on_every_entry(self, small_selection):
        data, _, result = small_selection
        for entry in result.path:
            recomputed = -2.0 * entry.log_pl_refit + entry.free_params * math.log(data.n_subjects)
            assert entry.bic == pytest.approx(recomputed, abs=1e-9)
            assert entry.free_params == count_free_params(data.n_items, entry.k_hat, entry.edge_set)

    def test_best_minimizes_bic(self, small_selection):
        _, _, result = small_selection
        usable = [e.bic for e in result.path if e.usable]
        assert result.best.bic == min(usable)

    def test_final_matrices_respect_structure(self, small_selection):
        _, _, result = small_selection
        best = result.best
        w = np.linalg.eigvalsh(result.final_l)
        assert w.min() >= -1e-10
        assert (w > 1e-8 * max(1.0, w[-1])).sum() <= best.k_hat
        allowed = set(best.edge_set)
        jdim = result.final_s.shape[0]
        for i in range(jdim):
            for j in range(i + 1, jdim):
                if (i, j) not in allowed:
                    assert result.final_s[i, j] == 0.0

    def test_edge_count_monotone_in_gamma(self, small_selection):
        _, _, result = small_selection
        by_rho = {}
        for entry in result.path:
            by_rho.setdefault(entry.rho, []).append((entry.gamma, entry.n_edges))
        for rows in by_rho.values():
            counts = [n for _, n in sorted(rows)]
            assert counts == sorted(counts, reverse=True)

    def test_rank_monotone_in_delta(self, small_selection):
        # at fixed gamma, a larger ratio means a larger delta and a rank
        # that can only shrink
        _, _, result = small_selection
        by_gamma = {}
        for entry in result.path:
            by_gamma.setdefault(entry.gamma, []).append((entry.delta, entry.k_hat))
        for rows in by_gamma.values():
            ks = [k for _, k in sorted(rows)]
            assert ks == sorted(ks, reverse=True)

    def test_path_order_row_major(self, small_selection):
        _, _, result = small_selection
        gammas = [e.gamma for e in result.path]
        rhos = [e.rho for e in result.path]
        assert rhos == sorted(rhos)
        per_row = len(set(gammas))
        assert gammas[:per_row] == sorted(gammas[:per_row])

    def test_parallel_rows_identical(self, small_selection):
        data, _, serial = small_selection
        parallel = grid_search_select(
            data, gamma_grid=np.linspace(0.02, 0.14, 5), rho_grid=np.array([2.0, 4.0]),
            config=SolverConfig(lam=5.0, tol_abs=1e-6, tol_rel=1e-5), jobs=2,
        )
        assert parallel.best_index == serial.best_index
        for a, b in zip(serial.path, parallel.path):
            np.testing.assert_array_equal(a.refit_l, b.refit_l)
            np.testing.assert_array_equal(a.refit_s, b.refit_s)
            assert a.bic == b.bic

    def test_rejects_empty_grid(self, small_selection):
        data, _, _ = small_selection
        with pytest.raises(ValueError):
            grid_search_select(data, gamma_grid=[], rho_grid=[1.0])


def test_write_path_csv(tmp_path, small_selection):
    _, _, result = small_selection
    out = tmp_path / "path.csv"
    write_path_csv(result, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "gamma,delta,K_hat,n_edges,log_pl_refit,free_params,bic,converged"
    assert len(lines) == len(result.path) + 1
