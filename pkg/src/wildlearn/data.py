"""Synthetic ID / covariate-shift / semantic-shift pools, wild mixing, and the WDS1 file format.

Feature generation runs in float64 and stores float32; all randomness flows
through explicit seeds so equal seeds give byte-identical artifacts.
"""
from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MembershipAccessError, ValidationError

# Label sentinels (int32 in memory and on disk).
BOTTOM = -1
UNLABELED = -2

# Membership tags (uint8).
MEMBER_ID = 0
MEMBER_COV = 1
MEMBER_SEM = 2
MEMBER_UNKNOWN = 255

MEMBERSHIP_NAMES = {MEMBER_ID: "id", MEMBER_COV: "cov", MEMBER_SEM: "sem", MEMBER_UNKNOWN: "unknown"}

_WDS_MAGIC = b"WDS1"
_WDS_VERSION = 1

# Depth counter for the membership audit guard. Scoring and selection run with
# the guard active; any read of ground-truth tags in those paths raises.
_hide_depth = 0


@contextmanager
def membership_hidden():
    """Forbid reads of ground-truth membership/oracle labels while active.

    Sample scoring and selection wrap themselves in this guard so that an
    accidental dependence on hidden tags fails the test suite instead of
    silently leaking label information.
    """
    global _hide_depth
    _hide_depth += 1
    try:
        yield
    finally:
        _hide_depth -= 1


def membership_is_hidden() -> bool:
    return _hide_depth > 0


class Dataset:
    """Feature matrix plus labels and (audit-guarded) ground-truth membership.

    features:      (n, d) float32
    class_labels:  (n,) int32, values in {0..C-1} or BOTTOM / UNLABELED
    membership:    (n,) uint8 ground-truth tags, readable only outside scoring/selection
    oracle_labels: optional (n,) int32 hidden true labels, used by the oracle annotator
    """

    def __init__(self, features, class_labels, membership, num_classes,
                 oracle_labels=None, class_names=None):
        self.features = np.ascontiguousarray(features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ValidationError("features must be a 2-D array")
        self.class_labels = np.ascontiguousarray(class_labels, dtype=np.int32)
        self._membership = np.ascontiguousarray(membership, dtype=np.uint8)
        self.num_classes = int(num_classes)
        self._oracle_labels = (None if oracle_labels is None
                               else np.ascontiguousarray(oracle_labels, dtype=np.int32))
        self.class_names = list(class_names) if class_names is not None else None
        self._validate()

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def membership(self) -> np.ndarray:
        if _hide_depth > 0:
            raise MembershipAccessError(
                "membership tags were read inside a scoring/selection path")
        return self._membership

    @property
    def oracle_labels(self):
        if _hide_depth > 0:
            raise MembershipAccessError(
                "oracle labels were read inside a scoring/selection path")
        return self._oracle_labels

    def _validate(self) -> None:
        n, d = self.features.shape
        if d < 1:
            raise ValidationError(f"feature dimension must be >= 1, got {d}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.class_labels.shape != (n,) or self._membership.shape != (n,):
            raise ValidationError("labels/membership length must match feature rows")
        if self._oracle_labels is not None and self._oracle_labels.shape != (n,):
            raise ValidationError("oracle label length must match feature rows")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValidationError("class_names length must equal num_classes")
        labels = self.class_labels
        known = (labels >= 0)
        if np.any(labels[known] >= self.num_classes):
            raise ValidationError("class label out of range")
        if np.any((labels < 0) & (labels != BOTTOM) & (labels != UNLABELED)):
            raise ValidationError("negative labels must be BOTTOM or UNLABELED")
        mem = self._membership
        valid = np.isin(mem, (MEMBER_ID, MEMBER_COV, MEMBER_SEM, MEMBER_UNKNOWN))
        if not np.all(valid):
            raise ValidationError("membership tag out of range")
        # Semantic rows never carry an in-class label; ID/COV rows never carry BOTTOM.
        sem = mem == MEMBER_SEM
        if np.any(sem & known):
            raise ValidationError("semantic rows must be labeled BOTTOM or UNLABELED")
        idcov = (mem == MEMBER_ID) | (mem == MEMBER_COV)
        if np.any(idcov & (labels == BOTTOM)):
            raise ValidationError("ID/covariate rows cannot be labeled BOTTOM")

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.class_labels[idx],
            self._membership[idx],
            self.num_classes,
            oracle_labels=None if self._oracle_labels is None else self._oracle_labels[idx],
            class_names=self.class_names,
        )

    def equals(self, other: "Dataset") -> bool:
        if self.num_classes != other.num_classes or self.features.shape != other.features.shape:
            return False
        same_oracle = (
            (self._oracle_labels is None and other._oracle_labels is None)
            or (self._oracle_labels is not None and other._oracle_labels is not None
                and np.array_equal(self._oracle_labels, other._oracle_labels))
        )
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.class_labels, other.class_labels)
                and np.array_equal(self._membership, other._membership)
                and same_oracle
                and self.class_names == other.class_names)


def concat_datasets(parts: list[Dataset]) -> Dataset:
    """Concatenate datasets that agree on dim and num_classes."""
    if not parts:
        raise ValidationError("cannot concatenate zero datasets")
    c = parts[0].num_classes
    d = parts[0].dim
    for p in parts[1:]:
        if p.num_classes != c or p.dim != d:
            raise ValidationError("datasets disagree on dim or num_classes")
    oracle = None
    if all(p._oracle_labels is not None for p in parts):
        oracle = np.concatenate([p._oracle_labels for p in parts])
    return Dataset(
        np.concatenate([p.features for p in parts], axis=0),
        np.concatenate([p.class_labels for p in parts]),
        np.concatenate([p._membership for p in parts]),
        c,
        oracle_labels=oracle,
        class_names=parts[0].class_names,
    )


TRANSFORM_KINDS = ("additive-gaussian-noise", "affine-shift", "rotation")


@dataclass(frozen=True)
class CovariateTransform:
    """One of three feature-space shifts applied to produce covariate pools.

    additive-gaussian-noise: x + sigma * eps, eps ~ N(0, I)
    affine-shift:            x + shift
    rotation:                rotate coordinates (0, 1) by `angle` radians
    """
    kind: str
    sigma: float = 0.0
    shift: tuple[float, ...] = ()
    angle: float = 0.0

    def validate(self, dim: int) -> None:
        if self.kind not in TRANSFORM_KINDS:
            raise ValidationError(f"unknown covariate transform {self.kind!r}")
        if self.kind == "additive-gaussian-noise" and self.sigma < 0:
            raise ValidationError("noise sigma must be >= 0")
        if self.kind == "affine-shift" and len(self.shift) != dim:
            raise ValidationError("affine shift vector must have length dim")
        if self.kind == "rotation" and dim < 2:
            raise ValidationError("rotation needs dim >= 2")

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "additive-gaussian-noise":
            # sigma == 0 degenerates to the identity; the draw is still consumed
            # so the rest of the stream does not depend on sigma.
            return x + self.sigma * rng.standard_normal(x.shape)
        if self.kind == "affine-shift":
            return x + np.asarray(self.shift, dtype=np.float64)
        c, s = np.cos(self.angle), np.sin(self.angle)
        out = x.copy()
        out[:, 0] = c * x[:, 0] - s * x[:, 1]
        out[:, 1] = s * x[:, 0] + c * x[:, 1]
        return out

    def to_json_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "additive-gaussian-noise":
            d["sigma"] = self.sigma
        elif self.kind == "affine-shift":
            d["shift"] = list(self.shift)
        else:
            d["angle"] = self.angle
        return d


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional Gaussian benchmark with one covariate shift and
    semantic clusters living outside the label space."""
    num_classes: int
    dim: int
    id_means: tuple[tuple[float, ...], ...]
    id_cov_scale: float
    covariate_transform: CovariateTransform
    semantic_clusters: tuple[tuple[tuple[float, ...], float], ...]
    seed: int
    n_id_train: int = 2000
    n_id_pool: int = 3000
    n_cov_pool: int = 3000
    n_sem_pool: int = 1500
    n_id_test: int = 2000
    n_cov_test: int = 2000
    n_sem_test: int = 1000
    class_names: tuple[str, ...] | None = None

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValidationError("need at least two classes")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if len(self.id_means) != self.num_classes:
            raise ValidationError("one mean per class required")
        if any(len(m) != self.dim for m in self.id_means):
            raise ValidationError("class means must have length dim")
        if self.id_cov_scale <= 0:
            raise ValidationError("id_cov_scale must be positive")
        if len(self.semantic_clusters) < 1:
            raise ValidationError("need at least one semantic cluster")
        for mean, scale in self.semantic_clusters:
            if len(mean) != self.dim or scale <= 0:
                raise ValidationError("bad semantic cluster")
        self.covariate_transform.validate(self.dim)
        for name in ("n_id_train", "n_id_pool", "n_cov_pool", "n_sem_pool",
                     "n_id_test", "n_cov_test", "n_sem_test"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "dim": self.dim,
            "id_means": [list(m) for m in self.id_means],
            "id_cov_scale": self.id_cov_scale,
            "covariate_transform": self.covariate_transform.to_json_dict(),
            "semantic_clusters": [{"mean": list(m), "scale": s} for m, s in self.semantic_clusters],
            "seed": self.seed,
            "sizes": {
                "id_train": self.n_id_train, "id_pool": self.n_id_pool,
                "cov_pool": self.n_cov_pool, "sem_pool": self.n_sem_pool,
                "id_test": self.n_id_test, "cov_test": self.n_cov_test,
                "sem_test": self.n_sem_test,
            },
            "class_names": None if self.class_names is None else list(self.class_names),
        }


@dataclass(frozen=True)
class WildMixtureSpec:
    """Mixing weights for the unlabeled deployment-time pool."""
    pi_c: float
    pi_s: float
    m: int

    def validate(self) -> None:
        if not (0 <= self.pi_c <= 1 and 0 <= self.pi_s <= 1):
            raise ValidationError("mixture weights must lie in [0, 1]")
        if self.pi_c + self.pi_s > 1:
            raise ValidationError("pi_c + pi_s must not exceed 1")
        if self.m < 0:
            raise ValidationError("wild size must be >= 0")


def _balanced_labels(n: int, num_classes: int) -> np.ndarray:
    """Class labels as even as possible: class c gets n//C (+1 for the first n%C)."""
    counts = np.full(num_classes, n // num_classes, dtype=np.int64)
    counts[: n % num_classes] += 1
    return np.repeat(np.arange(num_classes, dtype=np.int32), counts)


def _draw_id(spec: SyntheticSpec, rng: np.random.Generator, n: int):
    labels = _balanced_labels(n, spec.num_classes)
    means = np.asarray(spec.id_means, dtype=np.float64)
    x = means[labels] + spec.id_cov_scale * rng.standard_normal((n, spec.dim))
    return x, labels


def generate_synthetic(spec: SyntheticSpec) -> dict[str, Dataset]:
    """Generate the seven benchmark pools.

    Covariate pools are fresh ID draws passed through the configured transform
    with labels preserved; semantic pools carry BOTTOM labels only.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = spec.class_names

    def id_dataset(n):
        x, y = _draw_id(spec, rng, n)
        mem = np.full(n, MEMBER_ID, dtype=np.uint8)
        return Dataset(x, y, mem, spec.num_classes, oracle_labels=y, class_names=names)

    def cov_dataset(n):
        x, y = _draw_id(spec, rng, n)
        x = spec.covariate_transform.apply(x, rng)
        mem = np.full(n, MEMBER_COV, dtype=np.uint8)
        return Dataset(x, y, mem, spec.num_classes, oracle_labels=y, class_names=names)

    def sem_dataset(n):
        k = len(spec.semantic_clusters)
        cluster = _balanced_labels(n, k) if k > 1 else np.zeros(n, dtype=np.int32)
        means = np.asarray([m for m, _ in spec.semantic_clusters], dtype=np.float64)
        scales = np.asarray([s for _, s in spec.semantic_clusters], dtype=np.float64)
        x = means[cluster] + scales[cluster, None] * rng.standard_normal((n, spec.dim))
        y = np.full(n, BOTTOM, dtype=np.int32)
        mem = np.full(n, MEMBER_SEM, dtype=np.uint8)
        return Dataset(x, y, mem, spec.num_classes, oracle_labels=y, class_names=names)

    return {
        "id_train": id_dataset(spec.n_id_train),
        "id_pool": id_dataset(spec.n_id_pool),
        "id_test": id_dataset(spec.n_id_test),
        "cov_pool": cov_dataset(spec.n_cov_pool),
        "cov_test": cov_dataset(spec.n_cov_test),
        "sem_pool": sem_dataset(spec.n_sem_pool),
        "sem_test": sem_dataset(spec.n_sem_test),
    }


def mix_wild(id_pool: Dataset, cov_pool: Dataset, sem_pool: Dataset,
             spec: WildMixtureSpec, seed: int) -> Dataset:
    """Draw the unlabeled wild set: each row i.i.d. from ID / covariate / semantic
    pools with weights (1 - pi_c - pi_s, pi_c, pi_s), sampling rows with replacement.

    Visible class labels are all UNLABELED; ground-truth membership and true
    labels ride along as audit-guarded fields for the oracle and evaluation.
    """
    spec.validate()
    pools = (id_pool, cov_pool, sem_pool)
    weights = (1.0 - spec.pi_c - spec.pi_s, spec.pi_c, spec.pi_s)
    for pool, w, name in zip(pools, weights, ("id", "cov", "sem")):
        if w > 0 and pool.n == 0:
            raise ValidationError(f"{name} pool is empty but its mixture weight is positive")
    rng = np.random.default_rng(seed)
    component = rng.choice(3, size=spec.m, p=np.asarray(weights) / sum(weights))
    rows = np.empty((spec.m, id_pool.dim), dtype=np.float32)
    truth = np.empty(spec.m, dtype=np.int32)
    mem_codes = np.array([MEMBER_ID, MEMBER_COV, MEMBER_SEM], dtype=np.uint8)
    for comp, pool in enumerate(pools):
        take = np.flatnonzero(component == comp)
        if take.size == 0:
            continue
        src = rng.integers(0, pool.n, size=take.size)
        rows[take] = pool.features[src]
        truth[take] = pool.class_labels[src]
    labels = np.full(spec.m, UNLABELED, dtype=np.int32)
    return Dataset(rows, labels, mem_codes[component], id_pool.num_classes,
                   oracle_labels=truth, class_names=id_pool.class_names)


def _manifest_path(path) -> Path:
    return Path(str(path) + ".json")


def write_dataset(ds: Dataset, path, spec_echo: dict | None = None,
                  seed: int | None = None) -> None:
    """Write the binary WDS1 file plus its adjacent JSON manifest."""
    path = Path(path)
    n, d = ds.features.shape
    blob = bytearray()
    blob += _WDS_MAGIC
    blob += struct.pack("<IIII", _WDS_VERSION, n, d, ds.num_classes)
    blob += ds.features.astype("<f4").tobytes(order="C")
    blob += ds.class_labels.astype("<i4").tobytes()
    blob += ds._membership.tobytes()
    path.write_bytes(bytes(blob))
    manifest = {
        "format": "WDS1",
        "n": n,
        "d": d,
        "num_classes": ds.num_classes,
        "class_names": ds.class_names,
        "oracle_labels": None if ds._oracle_labels is None else ds._oracle_labels.tolist(),
        "spec": spec_echo,
        "seed": seed,
        "provenance": {"tool": "wildlearn", "format_version": _WDS_VERSION},
    }
    _manifest_path(path).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n",
                                    encoding="utf-8")


def read_dataset(path) -> Dataset:
    """Read a WDS1 file; raises FormatError on bad magic, truncation, or size mismatch."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20:
        raise FormatError(f"{path}: file too short for a WDS1 header")
    if raw[:4] != _WDS_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    version, n, d, c = struct.unpack("<IIII", raw[4:20])
    if version != _WDS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 20 + n * d * 4 + n * 4 + n
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = 20
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += n * d * 4
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=off)
    off += n * 4
    mem = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    oracle = None
    names = None
    mpath = _manifest_path(path)
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{mpath}: invalid manifest JSON: {e}") from e
        if manifest.get("oracle_labels") is not None:
            oracle = np.asarray(manifest["oracle_labels"], dtype=np.int32)
        if manifest.get("class_names") is not None:
            names = manifest["class_names"]
    try:
        return Dataset(feats, labels, mem, c, oracle_labels=oracle, class_names=names)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from e
