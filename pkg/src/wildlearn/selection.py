"""Turn a score table into an annotation batch.

Three strategies: take the k largest scores, take the k scores nearest a
threshold calibrated on labeled ID data, or mix the two with rate lam
(k1 = round(lam * k) top picks, k2 = k - k1 boundary picks). Ties always break
toward the lower sample id so selections are deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, membership_hidden
from .errors import ValidationError
from . import nnet
from .gradscore import ScoreTable, _restrict

TOP_K = "top_k"
NEAR_BOUNDARY = "near_boundary"
MIXED = "mixed"

STRATEGIES = (TOP_K, NEAR_BOUNDARY, MIXED)


@dataclass(frozen=True)
class SelectionResult:
    indices: tuple[int, ...]
    strategy: str
    k: int
    tau_b: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValidationError("selected indices must be distinct")
        if self.tau_b is not None and self.tau_b < 0:
            raise ValidationError("boundary threshold must be >= 0")
        if self.lam is not None and not (0.0 <= self.lam <= 1.0):
            raise ValidationError("mixing rate must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "indices": list(self.indices),
            "strategy": self.strategy,
            "k": self.k,
            "tau_b": self.tau_b,
            "lambda": self.lam,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "SelectionResult":
        return SelectionResult(
            indices=tuple(int(i) for i in d["indices"]),
            strategy=d["strategy"],
            k=int(d["k"]),
            tau_b=d.get("tau_b"),
            lam=d.get("lambda"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True, indent=1)

    @staticmethod
    def load(path) -> "SelectionResult":
        with open(path, encoding="utf-8") as f:
            return SelectionResult.from_json_dict(json.load(f))


def _check_table(scores: ScoreTable, k: int) -> None:
    if len(scores.scores) == 0:
        raise ValidationError("cannot select from an empty score table")
    if k < 1:
        raise ValidationError("selection budget k must be >= 1")


def _ranked_ids(keys: np.ndarray, sample_ids: np.ndarray) -> np.ndarray:
    """Sample ids ordered by ascending key, ties by ascending sample id."""
    order = np.lexsort((sample_ids, keys))
    return sample_ids[order]


def select_top_k(scores: ScoreTable, k: int) -> SelectionResult:
    """The k indices with the largest scores; k past the pool size returns everything."""
    _check_table(scores, k)
    with membership_hidden():
        ranked = _ranked_ids(-np.asarray(scores.scores, dtype=np.float64), scores.sample_ids)
        take = min(k, len(ranked))
        return SelectionResult(tuple(int(i) for i in ranked[:take]), TOP_K, k)


def id_boundary_threshold(params, arch: nnet.Architecture, id_train: Dataset,
                          v: np.ndarray, ref_grad: np.ndarray,
                          percentile: float = 0.95,
                          last_layer_only: bool = False) -> float:
    """Score the labeled ID data with the same projection used on the wild set
    (gradients against true labels) and return the empirical `percentile`
    quantile under linear interpolation."""
    if not (0.0 < percentile < 1.0):
        raise ValidationError("percentile must lie strictly inside (0, 1)")
    if id_train.n == 0:
        raise ValidationError("boundary threshold needs a non-empty ID set")
    with membership_hidden():
        grads = nnet.per_sample_ce_grads(params, arch, id_train.features, id_train.class_labels)
        rows = _restrict(grads, arch, last_layer_only) - ref_grad
        proj = rows @ np.asarray(v, dtype=np.float64)
        tau = proj * proj
        return float(np.quantile(tau, percentile, method="linear"))


def select_near_boundary(scores: ScoreTable, tau_b: float, k: int) -> SelectionResult:
    """The k indices whose scores sit closest to the threshold."""
    _check_table(scores, k)
    if not np.isfinite(tau_b):
        raise ValidationError("boundary threshold must be finite")
    with membership_hidden():
        dist = np.abs(np.asarray(scores.scores, dtype=np.float64) - tau_b)
        ranked = _ranked_ids(dist, scores.sample_ids)
        take = min(k, len(ranked))
        return SelectionResult(tuple(int(i) for i in ranked[:take]), NEAR_BOUNDARY, k,
                               tau_b=float(tau_b))


def select_mixed(scores: ScoreTable, tau_b: float, k: int, lam: float) -> SelectionResult:
    """round(lam * k) top picks plus boundary picks, de-duplicated by backfilling
    from the boundary ranking so the budget stays exactly min(k, pool size)."""
    _check_table(scores, k)
    if not (0.0 <= lam <= 1.0):
        raise ValidationError("mixing rate must lie in [0, 1]")
    with membership_hidden():
        vals = np.asarray(scores.scores, dtype=np.float64)
        top_ranked = _ranked_ids(-vals, scores.sample_ids)
        nb_ranked = _ranked_ids(np.abs(vals - tau_b), scores.sample_ids)
        budget = min(k, len(vals))
        k1 = int(round(lam * k))
        k1 = min(k1, budget)
        picked: list[int] = [int(i) for i in top_ranked[:k1]]
        seen = set(picked)
        queue = [int(i) for i in nb_ranked if int(i) not in seen]
        picked.extend(queue[: budget - len(picked)])
        return SelectionResult(tuple(picked), MIXED, k, tau_b=float(tau_b), lam=float(lam))
