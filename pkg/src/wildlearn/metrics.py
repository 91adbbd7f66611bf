"""Learning-goal measurements: classification accuracy on ID and covariate test
sets, detector FPR at 95% ID retention, AUROC, and selection-composition counts."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import Dataset, MEMBER_ID, MEMBER_COV, MEMBER_SEM
from .errors import ValidationError
from . import nnet
from .nnet import Architecture
from .selection import SelectionResult

DETECTOR_HEAD = "detector_head"
ENERGY_SCORE = "energy"


@dataclass
class EvalReport:
    id_acc: float
    ood_acc: float
    fpr95: float
    auroc: float
    threshold_lambda: float
    selection_composition: dict[str, int] | None = None

    def to_json_dict(self) -> dict:
        return asdict(self)


def accuracy(params, arch: Architecture, test: Dataset) -> float:
    """Fraction of rows whose argmax prediction matches the class label."""
    if test.n == 0:
        raise ValidationError("cannot evaluate accuracy on an empty set")
    if np.any(test.class_labels < 0):
        raise ValidationError("accuracy needs fully class-labeled data")
    pred = nnet.predict_labels(params, arch, test.features)
    return float(np.mean(pred == test.class_labels))


def detector_scores(params, arch: Architecture, ds: Dataset,
                    score: str = DETECTOR_HEAD) -> np.ndarray:
    """ID-ness scores: the detector head output, or the negative free energy of
    the class logits for models whose detector head was never trained."""
    logits, det, _ = nnet.forward_batch(params, arch, ds.features)
    if score == DETECTOR_HEAD:
        return det
    if score == ENERGY_SCORE:
        zmax = logits.max(axis=1)
        return zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))
    raise ValidationError(f"unknown detector score {score!r}")


def auroc_from_scores(id_scores: np.ndarray, sem_scores: np.ndarray) -> float:
    """Rank-based AUROC with ID as the positive class; tied pairs count 0.5.

    Equivalent to exhaustive pair counting: uses midranks, so the result is
    exact for moderate sample counts.
    """
    pos = np.asarray(id_scores, dtype=np.float64)
    neg = np.asarray(sem_scores, dtype=np.float64)
    both = np.concatenate([pos, neg])
    order = np.argsort(both, kind="mergesort")
    ranks = np.empty(len(both), dtype=np.float64)
    sorted_vals = both[order]
    i = 0
    while i < len(both):
        j = i
        while j + 1 < len(both) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    r_pos = ranks[: len(pos)].sum()
    u = r_pos - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def detector_metrics_from_scores(id_scores, sem_scores) -> tuple[float, float, float]:
    """(fpr95, auroc, threshold) from raw ID-ness scores.

    The threshold is the 5th percentile of ID scores (linear interpolation), so
    at least ~95% of ID data clears it; fpr95 is the semantic fraction above it.
    """
    id_s = np.asarray(id_scores, dtype=np.float64)
    sem_s = np.asarray(sem_scores, dtype=np.float64)
    if id_s.size == 0 or sem_s.size == 0:
        raise ValidationError("detector evaluation needs non-empty ID and semantic sets")
    threshold = float(np.quantile(id_s, 0.05, method="linear"))
    fpr95 = float(np.mean(sem_s > threshold))
    return fpr95, auroc_from_scores(id_s, sem_s), threshold


def detector_eval(params, arch: Architecture, id_test: Dataset, sem_test: Dataset,
                  score: str = DETECTOR_HEAD) -> tuple[float, float, float]:
    """(fpr95, auroc, threshold) for the detector on ID vs semantic test sets."""
    if id_test.n == 0 or sem_test.n == 0:
        raise ValidationError("detector evaluation needs non-empty ID and semantic sets")
    return detector_metrics_from_scores(detector_scores(params, arch, id_test, score),
                                        detector_scores(params, arch, sem_test, score))


def composition(selection: SelectionResult, wild: Dataset) -> dict[str, int]:
    """Ground-truth tag counts among the selected indices. Evaluation-only."""
    idx = np.asarray(selection.indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= wild.n):
        raise ValidationError("selection index out of range")
    mem = wild.membership[idx] if idx.size else np.zeros(0, dtype=np.uint8)
    return {
        "n_id": int(np.sum(mem == MEMBER_ID)),
        "n_cov": int(np.sum(mem == MEMBER_COV)),
        "n_sem": int(np.sum(mem == MEMBER_SEM)),
    }


def evaluate(params, arch: Architecture, id_test: Dataset, cov_test: Dataset,
             sem_test: Dataset, selection: SelectionResult | None = None,
             wild: Dataset | None = None, score: str = DETECTOR_HEAD) -> EvalReport:
    fpr95, auroc, threshold = detector_eval(params, arch, id_test, sem_test, score)
    comp = composition(selection, wild) if selection is not None and wild is not None else None
    return EvalReport(
        id_acc=accuracy(params, arch, id_test),
        ood_acc=accuracy(params, arch, cov_test),
        fpr95=fpr95,
        auroc=auroc,
        threshold_lambda=threshold,
        selection_composition=comp,
    )
