"""Experiment configuration: one strict JSON document.

Unknown keys anywhere in the document are rejected so a typo cannot silently
fall back to a default in the middle of a sweep.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import CovariateTransform, SyntheticSpec, WildMixtureSpec
from .errors import ValidationError
from .gradscore import SCORE_METHODS, GRADIENT
from .nnet import Architecture
from .optimize import TrainConfig
from .selection import STRATEGIES, TOP_K

ORACLE = "oracle"
HUMAN = "human"


@dataclass(frozen=True)
class TheoryConfig:
    delta: float = 0.05
    vc_proxy_d: float | None = None   # None: parameter count
    omega_in: float | None = None     # None: n / (n + m_c)
    omega_c: float | None = None

    def to_json_dict(self) -> dict:
        return {"delta": self.delta, "vc_proxy_d": self.vc_proxy_d,
                "omega_in": self.omega_in, "omega_c": self.omega_c}


@dataclass(frozen=True)
class StopRule:
    metric: str      # id_acc | ood_acc | auroc (stop at >=) or fpr95 (stop at <=)
    threshold: float

    def to_json_dict(self) -> dict:
        return {"metric": self.metric, "threshold": self.threshold}

    def satisfied(self, report: dict) -> bool:
        value = report[self.metric]
        if self.metric == "fpr95":
            return value <= self.threshold
        return value >= self.threshold


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: SyntheticSpec
    wild: WildMixtureSpec
    architecture: Architecture
    erm: TrainConfig
    joint: TrainConfig
    score_method: str = GRADIENT
    last_layer_only: bool = False
    strategy: str = TOP_K
    k: int = 200
    lam: float = 0.5
    percentile: float = 0.95
    annotation_mode: str = ORACLE
    rounds: int = 1
    seed: int = 0
    stop_when: StopRule | None = None
    ref_grad_source: str = "id_train"  # or "id_train_plus_cov"
    theory: TheoryConfig = TheoryConfig()

    def validate(self) -> None:
        self.synthetic.validate()
        self.wild.validate()
        self.architecture.validate()
        self.erm.validate()
        self.joint.validate()
        if self.score_method not in SCORE_METHODS:
            raise ValidationError(f"unknown score method {self.score_method!r}")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown selection strategy {self.strategy!r}")
        if self.k < 1:
            raise ValidationError("annotation budget k must be >= 1")
        if not (0.0 <= self.lam <= 1.0):
            raise ValidationError("mixing rate must lie in [0, 1]")
        if not (0.0 < self.percentile < 1.0):
            raise ValidationError("percentile must lie strictly inside (0, 1)")
        if self.annotation_mode not in (ORACLE, HUMAN):
            raise ValidationError(f"unknown annotation mode {self.annotation_mode!r}")
        if self.rounds < 1:
            raise ValidationError("rounds must be >= 1")
        if self.ref_grad_source not in ("id_train", "id_train_plus_cov"):
            raise ValidationError(f"unknown ref_grad_source {self.ref_grad_source!r}")
        if self.architecture.input_dim != self.synthetic.dim:
            raise ValidationError("architecture input_dim must equal the synthetic dim")
        if self.architecture.num_classes != self.synthetic.num_classes:
            raise ValidationError("architecture num_classes must match the synthetic spec")

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "synthetic": self.synthetic.to_json_dict(),
            "wild": {"pi_c": self.wild.pi_c, "pi_s": self.wild.pi_s, "m": self.wild.m},
            "architecture": self.architecture.to_json_dict(),
            "erm": self.erm.to_json_dict(),
            "joint": self.joint.to_json_dict(),
            "scoring": {"method": self.score_method, "last_layer_only": self.last_layer_only},
            "selection": {"strategy": self.strategy, "k": self.k,
                          "lambda": self.lam, "percentile": self.percentile},
            "annotation": {"mode": self.annotation_mode},
            "rounds": self.rounds,
            "stop_when": None if self.stop_when is None else self.stop_when.to_json_dict(),
            "ref_grad_source": self.ref_grad_source,
            "theory": self.theory.to_json_dict(),
        }


class _Strict:
    """Dict reader that rejects unknown keys when closed."""

    def __init__(self, obj, where):
        if not isinstance(obj, dict):
            raise ValidationError(f"{where}: expected a JSON object")
        self.obj = dict(obj)
        self.where = where

    def take(self, key, default=...):
        if key in self.obj:
            return self.obj.pop(key)
        if default is ...:
            raise ValidationError(f"{self.where}: missing required key {key!r}")
        return default

    def close(self):
        if self.obj:
            raise ValidationError(
                f"{self.where}: unknown key(s) {sorted(self.obj)} (fail-fast on typos)")


def _parse_transform(obj, where) -> CovariateTransform:
    r = _Strict(obj, where)
    kind = r.take("kind")
    t = CovariateTransform(
        kind=kind,
        sigma=float(r.take("sigma", 0.0)),
        shift=tuple(float(v) for v in r.take("shift", [])),
        angle=float(r.take("angle", 0.0)),
    )
    r.close()
    return t


def _parse_synthetic(obj, where) -> SyntheticSpec:
    r = _Strict(obj, where)
    sizes = _Strict(r.take("sizes", {}), where + ".sizes")
    clusters = tuple(
        (tuple(float(v) for v in c["mean"]), float(c["scale"]))
        for c in r.take("semantic_clusters"))
    names = r.take("class_names", None)
    spec = SyntheticSpec(
        num_classes=int(r.take("num_classes")),
        dim=int(r.take("dim")),
        id_means=tuple(tuple(float(v) for v in m) for m in r.take("id_means")),
        id_cov_scale=float(r.take("id_cov_scale")),
        covariate_transform=_parse_transform(r.take("covariate_transform"),
                                             where + ".covariate_transform"),
        semantic_clusters=clusters,
        seed=int(r.take("seed")),
        n_id_train=int(sizes.take("id_train", 2000)),
        n_id_pool=int(sizes.take("id_pool", 3000)),
        n_cov_pool=int(sizes.take("cov_pool", 3000)),
        n_sem_pool=int(sizes.take("sem_pool", 1500)),
        n_id_test=int(sizes.take("id_test", 2000)),
        n_cov_test=int(sizes.take("cov_test", 2000)),
        n_sem_test=int(sizes.take("sem_test", 1000)),
        class_names=None if names is None else tuple(names),
    )
    sizes.close()
    r.close()
    return spec


def _parse_train(obj, where, default_alpha) -> TrainConfig:
    r = _Strict(obj, where)
    cfg = TrainConfig(
        epochs=int(r.take("epochs")),
        batch_size=int(r.take("batch_size")),
        learning_rate=float(r.take("learning_rate")),
        momentum=float(r.take("momentum", 0.9)),
        weight_decay=float(r.take("weight_decay", 0.0005)),
        lr_schedule=r.take("lr_schedule", "constant"),
        alpha=float(r.take("alpha", default_alpha)),
        seed=int(r.take("seed", 0)),
    )
    r.close()
    return cfg


def parse_experiment_config(obj: dict) -> ExperimentConfig:
    r = _Strict(obj, "config")
    seed = int(r.take("seed", 0))
    synthetic = _parse_synthetic(r.take("synthetic"), "synthetic")
    wild_r = _Strict(r.take("wild"), "wild")
    wild = WildMixtureSpec(pi_c=float(wild_r.take("pi_c")),
                           pi_s=float(wild_r.take("pi_s")),
                           m=int(wild_r.take("m")))
    wild_r.close()
    arch_r = _Strict(r.take("architecture"), "architecture")
    arch = Architecture(
        input_dim=int(arch_r.take("input_dim", synthetic.dim)),
        hidden_sizes=tuple(int(h) for h in arch_r.take("hidden_sizes")),
        num_classes=int(arch_r.take("num_classes", synthetic.num_classes)),
        activation=arch_r.take("activation", "tanh"),
        shared_trunk=bool(arch_r.take("shared_trunk", True)),
    )
    arch_r.close()
    erm = _parse_train(r.take("erm"), "erm", default_alpha=0.0)
    joint = _parse_train(r.take("joint"), "joint", default_alpha=10.0)
    scoring = _Strict(r.take("scoring", {}), "scoring")
    score_method = scoring.take("method", GRADIENT)
    last_layer_only = bool(scoring.take("last_layer_only", False))
    scoring.close()
    sel = _Strict(r.take("selection", {}), "selection")
    strategy = sel.take("strategy", TOP_K)
    k = int(sel.take("k", 200))
    lam = float(sel.take("lambda", 0.5))
    percentile = float(sel.take("percentile", 0.95))
    sel.close()
    ann = _Strict(r.take("annotation", {}), "annotation")
    mode = ann.take("mode", ORACLE)
    ann.close()
    stop = r.take("stop_when", None)
    stop_rule = None
    if stop is not None:
        sr = _Strict(stop, "stop_when")
        stop_rule = StopRule(metric=sr.take("metric"), threshold=float(sr.take("threshold")))
        sr.close()
        if stop_rule.metric not in ("id_acc", "ood_acc", "auroc", "fpr95"):
            raise ValidationError(f"stop_when.metric {stop_rule.metric!r} not recognized")
    theory_r = _Strict(r.take("theory", {}), "theory")
    theory = TheoryConfig(
        delta=float(theory_r.take("delta", 0.05)),
        vc_proxy_d=theory_r.take("vc_proxy_d", None),
        omega_in=theory_r.take("omega_in", None),
        omega_c=theory_r.take("omega_c", None),
    )
    theory_r.close()
    ref_src = r.take("ref_grad_source", "id_train")
    rounds = int(r.take("rounds", 1))
    r.close()
    cfg = ExperimentConfig(
        synthetic=synthetic, wild=wild, architecture=arch, erm=erm, joint=joint,
        score_method=score_method, last_layer_only=last_layer_only,
        strategy=strategy, k=k, lam=lam, percentile=percentile,
        annotation_mode=mode, rounds=rounds, seed=seed, stop_when=stop_rule,
        ref_grad_source=ref_src, theory=theory,
    )
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON: {e}") from e
    return parse_experiment_config(obj)


def default_benchmark_spec(seed: int) -> SyntheticSpec:
    """Seeded desk benchmark.

    Four Gaussian classes sit on the axes of the first two dimensions; the
    covariate shift rotates that plane by 50 degrees, which relocates every
    optimal class boundary (so labeled covariate samples genuinely fix the
    classifier, unlike additive isotropic noise, whose Bayes boundary never
    moves). One semantic cluster sits in each inter-class wedge so the
    single-direction sampling score finds semantic samples no matter which
    wedge its top singular direction locks onto; their offset in dimensions
    2-3 is where the detector has to learn to look.
    """
    r = 2.2
    means = ((r, 0, 0, 0, 0, 0, 0, 0), (0, r, 0, 0, 0, 0, 0, 0),
             (-r, 0, 0, 0, 0, 0, 0, 0), (0, -r, 0, 0, 0, 0, 0, 0))
    sem_r, lift = 4.0, 1.2
    clusters = tuple(
        ((sem_r * float(np.cos(np.deg2rad(a))), sem_r * float(np.sin(np.deg2rad(a))),
          lift, lift, 0.0, 0.0, 0.0, 0.0), 0.9)
        for a in (50.0, 140.0, 230.0, 320.0))
    return SyntheticSpec(
        num_classes=4, dim=8, id_means=means, id_cov_scale=0.35,
        covariate_transform=CovariateTransform("rotation", angle=float(np.deg2rad(50.0))),
        semantic_clusters=clusters, seed=seed,
    )


def default_config(seed: int = 0, k: int = 200) -> ExperimentConfig:
    spec = default_benchmark_spec(seed)
    erm = TrainConfig(epochs=50, batch_size=128, learning_rate=0.05,
                      momentum=0.9, weight_decay=0.0005, alpha=0.0, seed=seed)
    joint = TrainConfig(epochs=100, batch_size=128, learning_rate=0.05,
                        momentum=0.9, weight_decay=0.0005, alpha=10.0, seed=seed)
    # relu + a detector-owned trunk keep the level-set head's features out of
    # the classifier's way; see the benchmark notes in the README
    arch = Architecture(input_dim=spec.dim, hidden_sizes=(32, 32),
                        num_classes=spec.num_classes, activation="relu",
                        shared_trunk=False)
    return ExperimentConfig(
        synthetic=spec,
        wild=WildMixtureSpec(pi_c=0.5, pi_s=0.1, m=5000),
        architecture=arch, erm=erm, joint=joint,
        k=k, seed=seed,
    )


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Re-seed every seeded sub-config coherently."""
    return replace(
        cfg,
        seed=seed,
        synthetic=replace(cfg.synthetic, seed=seed),
        erm=replace(cfg.erm, seed=seed),
        joint=replace(cfg.joint, seed=seed),
    )
