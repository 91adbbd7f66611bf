from __future__ import annotations

import numpy as np
import pytest

from wildlearn import optimize
from wildlearn.annotate import (COMPLETE, OPEN, LabelRejection, SessionStore,
                                oracle_annotate, oracle_training_sets)
from wildlearn.data import BOTTOM, MEMBER_COV, MEMBER_ID, MEMBER_SEM
from wildlearn.errors import ValidationError
from wildlearn.selection import SelectionResult


def sem_only_indices(wild, k):
    mem = wild.membership
    idx = [int(i) for i in np.flatnonzero(mem == MEMBER_SEM)[:k]]
    return SelectionResult(tuple(idx), "top_k", k)


def test_oracle_sem_only_selection(wild):
    sel = sem_only_indices(wild, 12)
    cov, sem, idsel = oracle_annotate(wild, sel)
    assert cov.n == 0 and idsel.n == 0 and sem.n == 12
    assert np.all(sem.class_labels == BOTTOM)


def test_oracle_empty_selection(wild):
    cov, sem, idsel = oracle_annotate(wild, SelectionResult((), "top_k", 5))
    assert cov.n == sem.n == idsel.n == 0


def test_oracle_labels_agree_with_ground_truth(wild):
    sel = SelectionResult(tuple(range(40)), "top_k", 40)
    cov, sem, idsel = oracle_annotate(wild, sel)
    mem = wild.membership
    truth = wild.oracle_labels
    assert cov.n == int(np.sum(mem[:40] == MEMBER_COV))
    assert idsel.n == int(np.sum(mem[:40] == MEMBER_ID))
    pos = {MEMBER_COV: 0, MEMBER_ID: 0}
    for i in range(40):
        tag = int(mem[i])
        if tag == MEMBER_COV:
            assert cov.class_labels[pos[tag]] == truth[i]
            pos[tag] += 1
        elif tag == MEMBER_ID:
            assert idsel.class_labels[pos[tag]] == truth[i]
            pos[tag] += 1


def test_oracle_rejects_out_of_range(wild):
    with pytest.raises(ValidationError):
        oracle_annotate(wild, SelectionResult((wild.n + 3,), "top_k", 1))


def test_training_sets_are_wild_index_ordered(wild):
    rng = np.random.default_rng(0)
    idx = tuple(int(i) for i in rng.choice(wild.n, size=30, replace=False))
    cls_pool, sem_pool = oracle_training_sets(wild, SelectionResult(idx, "top_k", 30))
    mem = wild.membership
    expect_cls = [i for i in sorted(idx) if mem[i] != MEMBER_SEM]
    assert cls_pool.n == len(expect_cls)
    assert np.array_equal(cls_pool.features, wild.features[expect_cls])
    assert np.all(sem_pool.class_labels == BOTTOM)


# --- sessions ---------------------------------------------------------------

@pytest.fixture
def store(tmp_path):
    return SessionStore(tmp_path / "sessions")


def selection_for(wild, k=6):
    return SelectionResult(tuple(range(k)), "top_k", k)


def test_session_lifecycle(store, wild, bundle):
    sel = selection_for(wild)
    session = store.create_session(wild, sel, id_train=bundle["id_train"],
                                   session_id="round-1")
    assert session.status == OPEN
    assert [it.sample_id for it in session.items] == sorted(sel.indices)
    assert session.background  # labeled context points ship with the session
    store.submit_labels("round-1", [{"sample_id": 0, "label": 1},
                                    {"sample_id": 1, "label": "BOTTOM"}])
    assert store.get("round-1").status == OPEN
    for i in range(2, 6):
        store.submit_labels("round-1", [{"sample_id": i, "label": 0}])
    assert store.get("round-1").status == COMPLETE
    cov, sem, idsel = store.export("round-1")
    assert cov.n == 5 and sem.n == 1 and idsel.n == 0
    assert cov.class_labels[0] == 1


def test_submission_overwrites(store, wild):
    store.create_session(wild, selection_for(wild, 2), session_id="s")
    store.submit_labels("s", [{"sample_id": 0, "label": 2}])
    store.submit_labels("s", [{"sample_id": 0, "label": "BOTTOM"}])
    store.submit_labels("s", [{"sample_id": 1, "label": 0}])
    cov, sem, _ = store.export("s")
    assert sem.n == 1 and cov.n == 1


def test_export_requires_completion_or_partial_flag(store, wild):
    store.create_session(wild, selection_for(wild, 3), session_id="p")
    store.submit_labels("p", [{"sample_id": 0, "label": 1}])
    with pytest.raises(ValidationError):
        store.export("p")
    cov, sem, _ = store.export("p", partial=True)
    assert cov.n + sem.n == 1


def test_bad_labels_rejected_with_item_errors(store, wild):
    store.create_session(wild, selection_for(wild, 3), session_id="e")
    with pytest.raises(LabelRejection) as err:
        store.submit_labels("e", [{"sample_id": 0, "label": 99},
                                  {"sample_id": 77, "label": 1},
                                  {"sample_id": 1, "label": 1}])
    msgs = {e["sample_id"]: e["error"] for e in err.value.errors}
    assert "label out of range" in msgs[0]
    assert "unknown sample_id" in msgs[77]
    # all-or-nothing: the valid item was not applied
    assert store.get("e").received == {}


def test_unknown_session(store, wild):
    with pytest.raises(KeyError):
        store.get("ghost")
    with pytest.raises(KeyError):
        store.submit_labels("ghost", [])


def test_sessions_survive_reload(store, wild, tmp_path):
    store.create_session(wild, selection_for(wild, 3), session_id="crash")
    store.submit_labels("crash", [{"sample_id": 0, "label": 2},
                                  {"sample_id": 1, "label": "BOTTOM"}])
    reborn = SessionStore(store.root)
    session = reborn.get("crash")
    assert session.received == {0: 2, 1: BOTTOM}
    assert session.status == OPEN


def test_duplicate_session_id_rejected(store, wild):
    store.create_session(wild, selection_for(wild, 2), session_id="dup")
    with pytest.raises(ValidationError):
        store.create_session(wild, selection_for(wild, 2), session_id="dup")


def test_context_uses_raw_coords_in_2d(store):
    from wildlearn.data import Dataset, MEMBER_UNKNOWN, UNLABELED
    feats = np.array([[1.5, -2.0], [0.25, 0.5]], dtype=np.float32)
    wild2 = Dataset(feats, np.full(2, UNLABELED, np.int32),
                    np.full(2, MEMBER_UNKNOWN, np.uint8), 3)
    session = store.create_session(wild2, SelectionResult((0, 1), "top_k", 2),
                                   session_id="flat")
    assert (session.items[0].x, session.items[0].y) == (1.5, -2.0)


def test_human_session_equivalent_to_oracle_training(store, bundle, wild, tiny_arch):
    # labels matching the oracle's produce a bit-identical jointly trained model
    sel = SelectionResult(tuple(range(24)), "top_k", 24)
    cls_oracle, sem_oracle = oracle_training_sets(wild, sel)

    session = store.create_session(wild, sel, session_id="equiv")
    truth = wild.oracle_labels
    mem = wild.membership
    labels = [{"sample_id": i,
               "label": "BOTTOM" if mem[i] == MEMBER_SEM else int(truth[i])}
              for i in range(24)]
    store.submit_labels("equiv", labels)
    cls_human, sem_human, _ = store.export("equiv")

    assert np.array_equal(cls_human.features, cls_oracle.features)
    assert np.array_equal(cls_human.class_labels, cls_oracle.class_labels)
    assert np.array_equal(sem_human.features, sem_oracle.features)

    cfg = optimize.TrainConfig(epochs=3, batch_size=16, learning_rate=0.05, seed=9)
    from wildlearn.nnet import init_params
    init = init_params(tiny_arch, 9)
    a = optimize.train_joint(tiny_arch, init, bundle["id_train"], cls_oracle, sem_oracle, cfg)
    b = optimize.train_joint(tiny_arch, init, bundle["id_train"], cls_human, sem_human, cfg)
    assert np.array_equal(a.params, b.params)
