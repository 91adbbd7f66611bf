"""Sampling scores over the unlabeled wild pool.

The primary score projects each wild sample's pseudo-labeled loss gradient,
centered by the mean gradient of the labeled ID set, onto the top singular
vector of the centered gradient matrix and squares the projection. Baseline
uncertainty scores and a diverse gradient-embedding selector are included for
comparison sweeps. All scores are oriented so that larger means more
select-worthy, and none of them may read ground-truth membership tags.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, membership_hidden
from .errors import ValidationError
from . import nnet
from .nnet import Architecture

GRADIENT = "gradient"
LEAST_CONF = "least_conf"
ENTROPY = "entropy"
MARGIN = "margin"
ENERGY = "energy"
RANDOM = "random"
BADGE = "badge"

SCORE_METHODS = (GRADIENT, LEAST_CONF, ENTROPY, MARGIN, ENERGY, RANDOM)


@dataclass
class GradMatrix:
    """Centered per-sample gradient rows for the wild set."""
    rows: np.ndarray        # (m, P) float64
    sample_ids: np.ndarray  # (m,) indices into the wild dataset

    def __post_init__(self):
        if self.rows.ndim != 2 or len(self.sample_ids) != self.rows.shape[0]:
            raise ValidationError("gradient matrix rows and sample ids disagree")
        if self.rows.size and not np.all(np.isfinite(self.rows)):
            raise ValidationError("gradient matrix contains non-finite entries")


@dataclass
class ScoreTable:
    scores: np.ndarray
    method: str
    sample_ids: np.ndarray
    direction: np.ndarray | None = None  # unit top singular vector, gradient method only
    sigma1_sq: float | None = None

    def __post_init__(self):
        if len(self.scores) != len(self.sample_ids):
            raise ValidationError("scores and sample ids disagree")
        if self.direction is not None:
            norm = np.linalg.norm(self.direction)
            if not np.isclose(norm, 1.0, atol=1e-8):
                raise ValidationError("stored direction must have unit norm")


def _restrict(grads: np.ndarray, arch: Architecture, last_layer_only: bool) -> np.ndarray:
    if not last_layer_only:
        return grads
    sl = nnet.class_head_slice(arch)
    return grads[..., sl]


def reference_gradient(params, arch: Architecture, id_train: Dataset,
                       last_layer_only: bool = False) -> np.ndarray:
    """Mean per-sample CE gradient of the trained model over the labeled ID set."""
    if id_train.n == 0:
        raise ValidationError("reference gradient needs a non-empty ID set")
    grads = nnet.per_sample_ce_grads(params, arch, id_train.features, id_train.class_labels)
    return _restrict(grads, arch, last_layer_only).mean(axis=0)


def wild_gradient_matrix(params, arch: Architecture, wild: Dataset,
                         ref_grad: np.ndarray, last_layer_only: bool = False) -> GradMatrix:
    """Per-sample gradients against the model's own predicted labels, minus the reference.

    Pseudo-labels are recomputed from the current model; hidden membership is
    never consulted.
    """
    with membership_hidden():
        if wild.n == 0:
            return GradMatrix(np.zeros((0, len(ref_grad))), np.zeros(0, dtype=np.int64))
        pseudo = nnet.predict_labels(params, arch, wild.features)
        grads = nnet.per_sample_ce_grads(params, arch, wild.features, pseudo)
        rows = _restrict(grads, arch, last_layer_only) - ref_grad
        return GradMatrix(rows, np.arange(wild.n, dtype=np.int64))


def top_singular_vector(G: GradMatrix | np.ndarray, tol: float = 1e-10,
                        max_iters: int = 500, seed: int = 0) -> tuple[np.ndarray, float]:
    """Top right singular direction of the row matrix by power iteration.

    Iterates u -> sum_i g_i <g_i, u> without materializing the PxP Gram matrix.
    Stops when successive Rayleigh quotients differ by less than `tol` or after
    `max_iters` sweeps. Returns (unit vector, attained maximum of
    sum_i <u, g_i>^2). Sign of the vector is arbitrary.
    """
    rows = G.rows if isinstance(G, GradMatrix) else np.asarray(G, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValidationError("power iteration needs a non-empty matrix")
    if not np.any(rows):
        raise ValidationError("all-zero gradient matrix has no principal direction")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(rows.shape[1])
    v /= np.linalg.norm(v)
    rq_prev = -np.inf
    for _ in range(max_iters):
        w = rows @ v
        av = rows.T @ w
        norm = np.linalg.norm(av)
        if norm == 0.0:
            # v fell exactly in the null space; restart from a fresh direction
            v = rng.standard_normal(rows.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = av / norm
        rq = float(np.dot(rows @ v, rows @ v))
        if abs(rq - rq_prev) < tol:
            break
        rq_prev = rq
    sigma1_sq = float(np.dot(rows @ v, rows @ v))
    return v, sigma1_sq


def gradient_scores(G: GradMatrix, v: np.ndarray) -> ScoreTable:
    """Squared projections of the centered gradients onto the unit direction v."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isclose(np.linalg.norm(v), 1.0, atol=1e-8):
        raise ValidationError("direction must have unit norm")
    proj = G.rows @ v
    return ScoreTable(proj * proj, GRADIENT, G.sample_ids.copy(),
                      direction=v, sigma1_sq=float(np.dot(proj, proj)))


def score_wild_gradient(params, arch: Architecture, id_train: Dataset, wild: Dataset,
                        last_layer_only: bool = False, power_seed: int = 0,
                        ) -> tuple[ScoreTable, np.ndarray, GradMatrix]:
    """Full gradient-score pipeline: reference gradient, centered matrix, top
    direction, squared projections. Returns (scores, ref_grad, matrix)."""
    ref = reference_gradient(params, arch, id_train, last_layer_only)
    G = wild_gradient_matrix(params, arch, wild, ref, last_layer_only)
    v, _ = top_singular_vector(G, seed=power_seed)
    return gradient_scores(G, v), ref, G


def baseline_score(params, arch: Architecture, wild: Dataset, method: str,
                   seed: int = 0) -> ScoreTable:
    """Uncertainty baselines; larger score = more select-worthy.

    least_conf: 1 - max softmax probability
    margin:     -(p1 - p2) for the two most likely classes
    entropy:    Shannon entropy of the softmax (natural log)
    energy:     -log sum_y exp(logit_y)
    random:     seeded uniform draws
    """
    if method not in (LEAST_CONF, ENTROPY, MARGIN, ENERGY, RANDOM):
        raise ValidationError(f"unknown baseline method {method!r}")
    with membership_hidden():
        ids = np.arange(wild.n, dtype=np.int64)
        if method == RANDOM:
            scores = np.random.default_rng(seed).random(wild.n)
            return ScoreTable(scores, method, ids)
        logits, _, _ = nnet.forward_batch(params, arch, wild.features)
        if method == ENERGY:
            zmax = logits.max(axis=1)
            scores = -(zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1)))
            return ScoreTable(scores, method, ids)
        p = nnet.softmax(logits)
        if method == LEAST_CONF:
            scores = 1.0 - p.max(axis=1)
        elif method == MARGIN:
            top2 = np.sort(p, axis=1)[:, -2:]
            scores = -(top2[:, 1] - top2[:, 0])
        else:  # entropy; 0 log 0 = 0
            with np.errstate(divide="ignore", invalid="ignore"):
                plogp = np.where(p > 0, p * np.log(p), 0.0)
            scores = -plogp.sum(axis=1)
        return ScoreTable(scores, method, ids)


def badge_embeddings(params, arch: Architecture, wild: Dataset) -> np.ndarray:
    """Gradient of the pseudo-label CE loss w.r.t. the output layer, one row per sample."""
    with membership_hidden():
        logits, _, cache = nnet.forward_batch(params, arch, wild.features)
        pseudo = np.argmax(logits, axis=1)
        d = nnet.softmax(logits)
        d[np.arange(wild.n), pseudo] -= 1.0
        h = cache.post[-1]
        emb_w = np.einsum("bc,bh->bch", d, h).reshape(wild.n, -1)
        return np.concatenate([emb_w, d], axis=1)


def kmeans_pp_select(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first pick uniform, then distance-squared-proportional
    to the nearest already-chosen point."""
    n = points.shape[0]
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > n:
        raise ValidationError(f"k={k} exceeds pool size {n}")
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            # everything coincides with a chosen point; fall back to lowest ids
            rest = [i for i in range(n) if i not in set(chosen)]
            chosen.extend(rest[: k - len(chosen)])
            break
        nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return np.asarray(chosen, dtype=np.int64)


def badge_select(params, arch: Architecture, wild: Dataset, k: int, seed: int) -> np.ndarray:
    """Diverse high-magnitude pick: k-means++ seeding over gradient embeddings."""
    emb = badge_embeddings(params, arch, wild)
    return kmeans_pp_select(emb, k, np.random.default_rng(seed))


def score_histogram_by_membership(table: ScoreTable, wild: Dataset, bins: int = 40):
    """Histogram of scores split by ground-truth tag, for plotting exports.

    Evaluation-only: reads membership, so it must not be called from scoring
    or selection paths.
    """
    mem = wild.membership
    lo = float(np.min(table.scores)) if len(table.scores) else 0.0
    hi = float(np.max(table.scores)) if len(table.scores) else 1.0
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out = {}
    from .data import MEMBERSHIP_NAMES
    for code, name in MEMBERSHIP_NAMES.items():
        mask = mem[table.sample_ids] == code
        counts, _ = np.histogram(table.scores[mask], bins=edges)
        if mask.any():
            out[name] = counts
    return edges, out
