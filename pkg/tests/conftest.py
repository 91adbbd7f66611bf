from __future__ import annotations

import numpy as np
import pytest

from wildlearn.data import (CovariateTransform, Dataset, SyntheticSpec,
                            WildMixtureSpec, generate_synthetic, mix_wild,
                            MEMBER_ID)
from wildlearn.nnet import Architecture, init_params


def small_spec(seed=0, **overrides) -> SyntheticSpec:
    base = dict(
        num_classes=3, dim=4,
        id_means=((2.0, 2.0, 0.0, 0.0), (2.0, -2.0, 0.0, 0.0), (-2.0, 0.0, 0.0, 0.0)),
        id_cov_scale=0.4,
        covariate_transform=CovariateTransform("additive-gaussian-noise", sigma=0.8),
        semantic_clusters=(((0.0, 0.0, 3.0, 1.0), 0.6),),
        seed=seed,
        n_id_train=120, n_id_pool=150, n_cov_pool=150, n_sem_pool=90,
        n_id_test=120, n_cov_test=120, n_sem_test=90,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


@pytest.fixture
def bundle():
    return generate_synthetic(small_spec())


@pytest.fixture
def wild(bundle):
    return mix_wild(bundle["id_pool"], bundle["cov_pool"], bundle["sem_pool"],
                    WildMixtureSpec(pi_c=0.5, pi_s=0.1, m=300), seed=11)


@pytest.fixture
def tiny_arch():
    return Architecture(input_dim=4, hidden_sizes=(8,), num_classes=3)


@pytest.fixture
def tiny_params(tiny_arch):
    return init_params(tiny_arch, seed=1)


def labeled_dataset(features, labels, num_classes, membership=MEMBER_ID) -> Dataset:
    feats = np.asarray(features, dtype=np.float32)
    mem = np.full(len(feats), membership, dtype=np.uint8)
    return Dataset(feats, np.asarray(labels, dtype=np.int32), mem, num_classes)


def finite_diff_grad(loss_fn, params: np.ndarray, coords, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar loss along the given flat coordinates."""
    out = np.empty(len(coords))
    for j, c in enumerate(coords):
        up = params.copy()
        up[c] += h
        dn = params.copy()
        dn[c] -= h
        out[j] = (loss_fn(up) - loss_fn(dn)) / (2.0 * h)
    return out


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise relative error, treating both-near-zero as exact agreement."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(b))
    err = np.abs(a - b)
    return np.where(denom > floor, err / np.maximum(denom, floor), 0.0)


def pair_count_auroc(id_scores, sem_scores) -> float:
    """Exhaustive O(n*m) pair counting with 0.5 per tie; the AUROC oracle."""
    total = 0.0
    for a in id_scores:
        for b in sem_scores:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(id_scores) * len(sem_scores))


def dense_top_eig(rows: np.ndarray):
    """Top eigenpair of rows^T rows via a dense symmetric solve; the power-iteration oracle."""
    gram = rows.T @ rows
    vals, vecs = np.linalg.eigh(gram)
    return vecs[:, -1], float(vals[-1]), float(vals[-2]) if len(vals) > 1 else 0.0
