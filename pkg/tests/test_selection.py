from __future__ import annotations

import numpy as np
import pytest

from wildlearn import nnet
from wildlearn.errors import ValidationError
from wildlearn.gradscore import GRADIENT, ScoreTable
from wildlearn.selection import (SelectionResult, id_boundary_threshold,
                                 select_mixed, select_near_boundary, select_top_k)

from conftest import labeled_dataset


def table(scores, ids=None):
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids)
    return ScoreTable(scores, GRADIENT, ids)


def test_top_k_basic():
    sel = select_top_k(table([5, 1, 9, 3]), 2)
    assert sel.indices == (2, 0)


def test_top_k_tie_breaks_by_lower_id():
    sel = select_top_k(table([7, 7, 7, 7]), 2)
    assert sel.indices == (0, 1)


def test_top_k_full_budget_and_overflow():
    sel = select_top_k(table([5, 1, 9]), 3)
    assert set(sel.indices) == {0, 1, 2}
    assert select_top_k(table([5, 1, 9]), 10).indices == sel.indices


def test_top_k_empty_table_rejected():
    with pytest.raises(ValidationError):
        select_top_k(table([]), 1)
    with pytest.raises(ValidationError):
        select_top_k(table([1.0]), 0)


def test_top_k_invariant_under_monotone_transform():
    rng = np.random.default_rng(0)
    scores = rng.random(40)
    base = select_top_k(table(scores), 7)
    warped = select_top_k(table(np.exp(3 * scores) + 5), 7)
    assert base.indices == warped.indices


def test_boundary_threshold_constant_scores(tiny_arch):
    # duplicating one row makes every ID gradient identical, so every score
    # equals the same constant and any percentile returns it
    params = nnet.init_params(tiny_arch, 0)
    row = np.array([[0.4, -1.2, 0.7, 2.0]], dtype=np.float32)
    ds = labeled_dataset(np.repeat(row, 9, axis=0), [1] * 9, 3)
    ref = np.zeros(tiny_arch.param_count)
    v = np.zeros(tiny_arch.param_count)
    v[0] = 1.0
    for pct in (0.25, 0.5, 0.95):
        tau_b = id_boundary_threshold(params, tiny_arch, ds, v, ref, percentile=pct)
        _, g = nnet.ce_loss_and_grad(params, tiny_arch, row[0].astype(float), 1)
        assert np.isclose(tau_b, g[0] ** 2, rtol=1e-12)


def test_boundary_threshold_rejects_bad_percentile(tiny_arch, tiny_params):
    ds = labeled_dataset(np.zeros((3, 4)), [0, 1, 2], 3)
    v = np.zeros(tiny_arch.param_count)
    v[0] = 1.0
    for pct in (0.0, 1.0, 1.5):
        with pytest.raises(ValidationError):
            id_boundary_threshold(tiny_params, tiny_arch, ds, v, np.zeros_like(v), percentile=pct)


def test_quantile_convention_linear_interpolation():
    # the repo-wide quantile rule: values 1..100 at the 0.95 point interpolate to 95.05
    values = np.arange(1.0, 101.0)
    assert np.isclose(np.quantile(values, 0.95, method="linear"), 95.05, rtol=1e-12)


def test_near_boundary_zero_threshold_selects_smallest():
    sel = select_near_boundary(table([4.0, 0.5, 2.0, 9.0]), 0.0, 2)
    assert sel.indices == (1, 2)


def test_near_boundary_example():
    sel = select_near_boundary(table([1.0, 4.0, 6.0, 10.0]), 5.0, 2)
    assert set(sel.indices) == {1, 2}


def test_near_boundary_above_all_scores_is_top_k():
    t = table([3.0, 8.0, 1.0, 5.0])
    sel = select_near_boundary(t, 100.0, 2)
    assert set(sel.indices) == set(select_top_k(t, 2).indices)


def test_near_boundary_at_max_equals_top_k():
    rng = np.random.default_rng(4)
    t = table(rng.random(30))
    tau_b = float(t.scores.max())
    nb = select_near_boundary(t, tau_b, 10)
    tk = select_top_k(t, 10)
    assert nb.indices == tk.indices


def test_mixed_extremes_reduce_to_pure_strategies():
    rng = np.random.default_rng(5)
    t = table(rng.random(25))
    tau_b = 0.4
    assert select_mixed(t, tau_b, 8, 1.0).indices == select_top_k(t, 8).indices
    assert select_mixed(t, tau_b, 8, 0.0).indices == select_near_boundary(t, tau_b, 8).indices


def test_mixed_half_and_half():
    # top half takes the two largest; boundary half takes the closest to
    # tau_b = 2, ties resolved toward the lower sample id
    t = table([1.0, 2.0, 3.0, 100.0, 101.0, 102.0])
    sel = select_mixed(t, 2.0, 4, 0.5)
    assert set(sel.indices) == {5, 4, 1, 0}
    assert sel.indices[:2] == (5, 4)


def test_mixed_backfills_duplicates():
    # all mass near tau_b: top picks and boundary picks overlap, so the
    # backfill must still deliver exactly k distinct indices
    t = table([10.0, 9.0, 8.0, 7.0, 6.0])
    sel = select_mixed(t, 10.0, 4, 0.5)
    assert len(sel.indices) == 4
    assert len(set(sel.indices)) == 4


def test_mixed_cardinality_and_uniqueness_random():
    rng = np.random.default_rng(6)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        k = int(rng.integers(1, 50))
        lam = float(rng.random())
        t = table(rng.random(n))
        sel = select_mixed(t, float(rng.random()), k, lam)
        assert len(sel.indices) == min(k, n)
        assert len(set(sel.indices)) == len(sel.indices)


def test_selection_result_roundtrip(tmp_path):
    sel = SelectionResult((4, 1, 9), "mixed", 3, tau_b=0.5, lam=0.25)
    sel.save(tmp_path / "sel.json")
    back = SelectionResult.load(tmp_path / "sel.json")
    assert back == sel


def test_selection_result_validation():
    with pytest.raises(ValidationError):
        SelectionResult((1, 1), "top_k", 2)
    with pytest.raises(ValidationError):
        SelectionResult((1, 2), "mixed", 2, tau_b=-0.5)
    with pytest.raises(ValidationError):
        SelectionResult((1,), "mixed", 1, lam=1.5)
