"""Computable terms of the generalization bound for the jointly trained classifier.

The discrepancy term measures the Euclidean distance between the mean
self-predicted-label loss gradients of two datasets. The concentration term
zeta is evaluated exactly from the sample sizes, a user-supplied capacity
proxy, the confidence level, and the risk weights; the loss supremum over the
training sets stands in for the bound's loss ceiling. These are structure
checks, not certified guarantees: the capacity proxy defaults to the raw
parameter count.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import Dataset
from .errors import ValidationError
from . import nnet
from .nnet import Architecture


def _mean_self_label_gradient(params, arch: Architecture, ds: Dataset) -> np.ndarray:
    """Mean CE gradient where each sample is scored against its own argmax label."""
    if ds.n == 0:
        raise ValidationError("gradient discrepancy needs non-empty sets")
    pseudo = nnet.predict_labels(params, arch, ds.features)
    grads = nnet.per_sample_ce_grads(params, arch, ds.features, pseudo)
    return grads.mean(axis=0)


def gradient_discrepancy(params, arch: Architecture, set_a: Dataset, set_b: Dataset) -> float:
    """L2 distance between the mean self-predicted-label loss gradients of two sets."""
    ga = _mean_self_label_gradient(params, arch, set_a)
    gb = _mean_self_label_gradient(params, arch, set_b)
    return float(np.linalg.norm(ga - gb))


def zeta_term(n: int, m_c: int, vc_proxy_d: float, delta: float,
              omega_in: float, omega_c: float, loss_sup: float) -> float:
    """Concentration term: sqrt((w_in^2/n + w_c^2/m_c) * ((d log(2n+2m_c) - log delta)/2))
    plus w_in times the loss ceiling."""
    if not (0.0 < delta < 1.0):
        raise ValidationError("delta must lie in (0, 1)")
    if n < 1 or m_c < 1:
        raise ValidationError("sample sizes must be >= 1")
    inner = (omega_in ** 2 / n + omega_c ** 2 / m_c) * (
        (vc_proxy_d * np.log(2 * n + 2 * m_c) - np.log(delta)) / 2.0)
    return float(np.sqrt(inner) + omega_in * loss_sup)


@dataclass
class BoundReport:
    grad_discrepancy: float
    id_risk: float
    cov_risk: float
    loss_sup_M: float
    zeta: float
    n: int
    m_c: int
    omega_in: float
    omega_c: float
    delta: float
    vc_proxy_d: float

    def to_json_dict(self) -> dict:
        return asdict(self)


def bound_report(params, arch: Architecture, id_train: Dataset, cov_selected: Dataset,
                 delta: float = 0.05, vc_proxy_d: float | None = None,
                 omega_in: float | None = None, omega_c: float | None = None) -> BoundReport:
    """Assemble every measurable bound ingredient for one trained model.

    Risk weights default to the set-size proportions used implicitly by
    uniform averaging over the union; the capacity proxy defaults to the
    parameter count.
    """
    if cov_selected.n == 0:
        raise ValidationError("bound report needs a non-empty annotated covariate set")
    if not (0.0 < delta < 1.0):
        raise ValidationError("delta must lie in (0, 1)")
    n, m_c = id_train.n, cov_selected.n
    if omega_in is None:
        omega_in = n / (n + m_c)
    if omega_c is None:
        omega_c = m_c / (n + m_c)
    if vc_proxy_d is None:
        vc_proxy_d = float(arch.param_count)
    logits_id, _, _ = nnet.forward_batch(params, arch, id_train.features)
    logits_cov, _, _ = nnet.forward_batch(params, arch, cov_selected.features)
    id_losses = nnet.ce_values(logits_id, id_train.class_labels.astype(np.int64))
    cov_losses = nnet.ce_values(logits_cov, cov_selected.class_labels.astype(np.int64))
    loss_sup = float(max(id_losses.max(), cov_losses.max()))
    return BoundReport(
        grad_discrepancy=gradient_discrepancy(params, arch, id_train, cov_selected),
        id_risk=float(id_losses.mean()),
        cov_risk=float(cov_losses.mean()),
        loss_sup_M=loss_sup,
        zeta=zeta_term(n, m_c, vc_proxy_d, delta, omega_in, omega_c, loss_sup),
        n=n, m_c=m_c,
        omega_in=float(omega_in), omega_c=float(omega_c),
        delta=float(delta), vc_proxy_d=float(vc_proxy_d),
    )
