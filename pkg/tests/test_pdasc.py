import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmmreg.dataio import Dataset
from pmmreg.pdasc import (ActiveSetState, ConvergenceError, LambdaGrid, PathEntry, PathError,
                          Subproblem, compute_active_sets, hbic_score, kkt_residual_l1,
                          optimality_residuals, pdas_fixed_lambda, pdasc_path, primal_dual_update,
                          select_by_hbic, solve_subproblem, write_path_csv)

from conftest import best_subset, small_problem


def test_active_set_sign_test():
    plus, minus, inactive = compute_active_sets(np.zeros(3), np.zeros(3), 1.0)
    assert plus.size == 0 and minus.size == 0
    np.testing.assert_array_equal(inactive, [0, 1, 2])
    plus, minus, _ = compute_active_sets(np.array([2.0, 0.0]), np.array([0.5, -3.0]), 1.0)
    np.testing.assert_array_equal(plus, [0])
    np.testing.assert_array_equal(minus, [1])
    # equality with lambda is inactive (strict inequalities)
    plus, minus, inactive = compute_active_sets(np.array([0.5, -0.25]), np.array([0.5, -0.75]), 1.0)
    assert plus.size == 0 and minus.size == 0 and inactive.size == 2


def test_update_with_empty_active_set(rng):
    ds = Dataset(rng.standard_normal((6, 4)), rng.standard_normal(6))
    sub = Subproblem(ds, 0.3, rng.standard_normal(4), rng.standard_normal(4))
    empty = np.array([], dtype=int)
    st_ = primal_dual_update(sub, (empty, empty), 1.0)
    np.testing.assert_array_equal(st_.beta, 0.0)
    np.testing.assert_allclose(st_.dual, ds.Xty + sub.v_tilde + 0.3 * sub.beta_tilde)


def test_update_identity_design():
    ds = Dataset(np.eye(2), np.array([3.0, 0.0]))
    sub = Subproblem(ds)
    st_ = primal_dual_update(sub, (np.array([0]), np.array([], dtype=int)), 1.0)
    np.testing.assert_allclose(st_.beta, [2.0, 0.0])
    np.testing.assert_allclose(st_.dual, [1.0, 0.0])


def test_update_solves_linear_system(rng):
    ds = Dataset(rng.standard_normal((5, 8)), rng.standard_normal(5))
    sub = Subproblem(ds, 0.5, rng.standard_normal(8), rng.standard_normal(8))
    for _ in range(10):
        perm = rng.permutation(8)
        plus, minus = np.sort(perm[:2]), np.sort(perm[2:4])
        st_ = primal_dual_update(sub, (plus, minus), 0.7)
        eq1, _ = optimality_residuals(st_, sub, 0.7)
        assert eq1 < 1e-10


def test_fixed_point_warm_start_returns_unchanged(rng):
    ds, _ = small_problem(rng, 30, 10, 3, noise=0.1)
    sub = Subproblem(ds, 0.1)
    state, info = solve_subproblem(sub, 2.0)
    again, info2 = pdas_fixed_lambda(sub, state, 2.0, 5)
    assert again is state
    assert info2.solves == 0 and info2.converged


def test_large_lambda_gives_zero(rng):
    ds = Dataset(rng.standard_normal((10, 6)), rng.standard_normal(10))
    sub = Subproblem(ds, 0.2, rng.standard_normal(6), rng.standard_normal(6))
    lam = sub.lambda_max() * 1.01
    state, info = pdas_fixed_lambda(sub, ActiveSetState.zero(sub), lam, 3)
    assert info.converged
    np.testing.assert_array_equal(state.beta, 0.0)
    assert kkt_residual_l1(state.beta, ds, lam, sub) == 0.0


def test_converged_state_satisfies_optimality_system(rng):
    ds, _ = small_problem(rng, 25, 12, 4, noise=0.5)
    sub = Subproblem(ds, 0.1, rng.standard_normal(12), rng.standard_normal(12))
    lam = 0.2 * sub.lambda_max()
    state, info = solve_subproblem(sub, lam, k_max=10)
    eq1, eq2 = optimality_residuals(state, sub, lam)
    assert eq1 < 1e-8 and eq2 < 1e-8


def test_l1_residual_properties(rng):
    ds, _ = small_problem(rng, 30, 8, 3, noise=0.3)
    lam = 0.3 * float(np.max(np.abs(ds.Xty)))
    sub = Subproblem(ds)
    state, _ = solve_subproblem(sub, lam, k_max=20)
    assert kkt_residual_l1(state.beta, ds, lam) <= 1e-10
    assert kkt_residual_l1(np.zeros(8), ds, float(np.max(np.abs(ds.Xty)))) == 0.0
    assert kkt_residual_l1(rng.standard_normal(8), ds, lam) > 0


def test_hbic_examples():
    y = np.array([1.0, -1.0, 1.0, -1.0])
    ds = Dataset(np.arange(12.0).reshape(4, 3), y)
    assert hbic_score(np.zeros(3), ds) == pytest.approx(0.0, abs=1e-15)
    rng = np.random.default_rng(3)
    ds = Dataset(rng.standard_normal((20, 5)), rng.standard_normal(20))
    a = np.array([1.0, 0, 0, 0, 0])
    b = np.array([1.0, 0, 0, 0, 1e-300])
    assert ds.predict(a) @ ds.predict(a) == ds.predict(b) @ ds.predict(b)
    assert hbic_score(a, ds) < hbic_score(b, ds)


def test_hbic_perfect_fit_is_minus_inf():
    ds = Dataset(np.eye(3), np.array([1.0, 2.0, 3.0]))
    assert hbic_score(np.array([1.0, 2.0, 3.0]), ds) == -math.inf


def _entry(lam, hbic):
    z = np.zeros(2)
    return PathEntry(lam, z, z, np.array([], dtype=int), hbic, 0.0, True)


def test_select_by_hbic_ties_and_order():
    entries = [_entry(3.0, 1.0), _entry(2.0, 0.5), _entry(1.0, 0.5), _entry(0.5, 0.7)]
    assert select_by_hbic(entries).lam == 2.0
    assert select_by_hbic(entries[::-1]).lam == 2.0
    perfect = entries + [_entry(0.2, -math.inf), _entry(0.1, -math.inf)]
    assert select_by_hbic(perfect).lam == 0.2
    with pytest.raises(PathError):
        select_by_hbic([])


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(6))))
def test_selection_is_order_invariant(perm):
    scores = [0.3, 0.1, 0.9, 0.1, 0.5, 0.2]
    entries = [_entry(float(6 - i), s) for i, s in enumerate(scores)]
    base = select_by_hbic(entries)
    assert select_by_hbic([entries[i] for i in perm]).lam == base.lam


def test_grid_construction():
    g = LambdaGrid(10.0, 1e-9, 100)
    lams = g.lambdas()
    assert lams.size == 101
    assert lams[0] == 10.0 and lams[-1] == pytest.approx(1e-9)
    np.testing.assert_allclose(np.diff(np.log(lams)), math.log(g.mu))
    with pytest.raises(ValueError):
        LambdaGrid(1.0, 2.0)


def test_path_starts_at_zero_and_counts_solves(rng):
    ds, _ = small_problem(rng, 60, 200, 5, noise=0.1)
    sub = Subproblem(ds)
    res = pdasc_path(sub, k_max=1)
    first = res.entries[0]
    assert first.lam == pytest.approx(float(np.max(np.abs(ds.Xty))))
    assert first.nnz == 0 and first.active_set.size == 0
    assert len(res.entries) <= 101
    assert res.solves <= 101
    cap = ds.n / math.log(ds.p)
    assert all(e.nnz < cap for e in res.entries)
    if res.stop_reason == "sparsity cap":
        # the next grid point would have crossed the cap
        assert len(res.entries) < 101


def test_stop_rule_uses_natural_log(rng):
    ds, _ = small_problem(rng, 40, 100, 20, noise=1.0)
    res = pdasc_path(Subproblem(ds, 0.1), k_max=1)
    assert res.stop_reason == "sparsity cap"
    assert max(e.nnz for e in res.entries) < 40 / math.log(100)


def test_noiseless_path_recovers_best_subset():
    rng = np.random.default_rng(5)
    for _ in range(5):
        ds, beta = small_problem(rng, 60, 10, 3, scale=(2.0, 4.0))
        res = pdasc_path(Subproblem(ds), k_max=5)
        subsets = best_subset(ds, 3)
        assert subsets[3][0] < 1e-20
        np.testing.assert_array_equal(np.flatnonzero(res.selected.beta), subsets[3][1])


def test_warm_and_cold_agree(rng):
    ds, _ = small_problem(rng, 30, 12, 4, noise=0.2)
    sub = Subproblem(ds, 0.05)
    lams = LambdaGrid.for_problem(sub, 1e-3, 20).lambdas()
    state = ActiveSetState.zero(sub)
    for lam in lams[1:]:
        warm, _ = solve_subproblem(sub, lam, state)
        cold, _ = solve_subproblem(sub, lam)
        np.testing.assert_allclose(warm.beta, cold.beta, atol=1e-8)
        state = warm


def test_zero_sigma_singular_block_is_jittered():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])
    ds = Dataset(X, np.array([1.0, 2.0, 3.0]))
    st_ = primal_dual_update(Subproblem(ds), (np.array([0, 1]), np.array([], dtype=int)), 0.1)
    assert st_.jittered


def test_stalled_solve_is_rescued(rng):
    ds, _ = small_problem(rng, 8, 30, 3, noise=1.0)
    sub = Subproblem(ds, 1e-12)
    lam = 1e-9 * sub.lambda_max()
    state, info = solve_subproblem(sub, lam, k_max=1)
    assert info.converged
    assert kkt_residual_l1(state.beta, ds, lam, sub) <= 1e-6


def test_stalled_solve_raises_when_every_fallback_fails(rng, monkeypatch):
    import pmmreg.pdasc as mod

    def give_up(sub, lam, state, tol, max_sweeps=0):
        return state, mod.PdasInfo()

    monkeypatch.setattr(mod, "_coordinate_fallback", give_up)
    ds, _ = small_problem(rng, 8, 30, 3, noise=1.0)
    sub = Subproblem(ds, 1e-12)
    with pytest.raises(ConvergenceError):
        solve_subproblem(sub, 1e-9 * sub.lambda_max(), k_max=1)


def test_path_csv(rng, tmp_path):
    ds, _ = small_problem(rng, 20, 30, 2)
    res = pdasc_path(Subproblem(ds, 0.1))
    out = tmp_path / "path.csv"
    write_path_csv(res.entries, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "lambda,nnz,hbic,r1_kkt,solve_converged"
    assert len(lines) == len(res.entries) + 1


def test_cycling_falls_back_and_stays_exact():
    from pathlib import Path
    from pmmreg.dataio import load_libsvm, polynomial_expand, standardize

    data = Path(__file__).parent / "data" / "abalone_like.libsvm"
    ds, _ = standardize(polynomial_expand(load_libsvm(data), 7))
    sub = Subproblem(ds, 0.1)
    lam = 1e-3 * sub.lambda_max()
    # plain active-set iterations cycle on these nearly collinear columns
    _, info = pdas_fixed_lambda(sub, ActiveSetState.zero(sub), lam, 200)
    assert not info.converged
    state, info = solve_subproblem(sub, lam)
    assert info.converged
    eq1, eq2 = optimality_residuals(state, sub, lam)
    assert eq1 < 1e-8 and eq2 < 1e-8
