"""Labels for selected wild samples: a ground-truth oracle and persistent
human annotation sessions.

The oracle reads hidden truth and splits the selection into covariate,
semantic, and ID subsets. Human sessions collect labels from the class space
plus BOTTOM over a crash-safe JSON-lines log; a human cannot tell ID from
covariate, so the in-class picks all land in the covariate subset and the
downstream merge is canonical (sorted by wild index) either way.
"""
from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (BOTTOM, MEMBER_COV, MEMBER_ID, MEMBER_SEM, MEMBER_UNKNOWN,
                   Dataset)
from .errors import ValidationError
from .gradscore import ScoreTable, top_singular_vector
from .selection import SelectionResult

OPEN = "open"
COMPLETE = "complete"


def _sorted_indices(selection: SelectionResult, wild: Dataset) -> np.ndarray:
    idx = np.asarray(sorted(selection.indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= wild.n):
        raise ValidationError("selection index out of range")
    return idx


def _empty_like(wild: Dataset) -> Dataset:
    return Dataset(np.zeros((0, wild.dim), dtype=np.float32),
                   np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.uint8),
                   wild.num_classes, class_names=wild.class_names)


def _build_subset(wild: Dataset, rows: list[int], labels: list[int], member: int) -> Dataset:
    if not rows:
        return _empty_like(wild)
    feats = wild.features[np.asarray(rows, dtype=np.int64)]
    lab = np.asarray(labels, dtype=np.int32)
    mem = np.full(len(rows), member, dtype=np.uint8)
    return Dataset(feats, lab, mem, wild.num_classes,
                   oracle_labels=lab.copy(), class_names=wild.class_names)


def oracle_annotate(wild: Dataset, selection: SelectionResult
                    ) -> tuple[Dataset, Dataset, Dataset]:
    """Ground-truth annotation of the selected indices.

    Returns (cov_selected, sem_selected, id_selected): semantic members get
    BOTTOM; ID and covariate members get their true class. Rows are ordered by
    ascending wild index in each subset.
    """
    idx = _sorted_indices(selection, wild)
    mem = wild.membership
    truth = wild.oracle_labels
    if truth is None:
        raise ValidationError("wild dataset carries no ground-truth labels")
    split: dict[int, tuple[list[int], list[int]]] = {
        MEMBER_COV: ([], []), MEMBER_SEM: ([], []), MEMBER_ID: ([], [])}
    for i in idx:
        tag = int(mem[i])
        if tag not in split:
            raise ValidationError(f"wild row {i} has no usable membership tag")
        label = BOTTOM if tag == MEMBER_SEM else int(truth[i])
        if tag != MEMBER_SEM and label < 0:
            raise ValidationError(f"wild row {i} lacks a true class label")
        split[tag][0].append(int(i))
        split[tag][1].append(label)
    cov = _build_subset(wild, *split[MEMBER_COV], MEMBER_COV)
    sem = _build_subset(wild, *split[MEMBER_SEM], MEMBER_SEM)
    idsel = _build_subset(wild, *split[MEMBER_ID], MEMBER_ID)
    return cov, sem, idsel


def oracle_training_sets(wild: Dataset, selection: SelectionResult
                         ) -> tuple[Dataset, Dataset]:
    """(in-class pool, semantic pool) for training, rows in ascending wild
    index with membership erased to UNKNOWN.

    This is the same canonical form a completed human session exports, so the
    two annotation routes feed training byte-identically when the labels agree.
    """
    idx = _sorted_indices(selection, wild)
    mem = wild.membership
    truth = wild.oracle_labels
    if truth is None:
        raise ValidationError("wild dataset carries no ground-truth labels")
    cls_rows, cls_labels, sem_rows = [], [], []
    for i in idx:
        if int(mem[i]) == MEMBER_SEM:
            sem_rows.append(int(i))
        else:
            cls_rows.append(int(i))
            cls_labels.append(int(truth[i]))

    def build(rows, labels):
        feats = wild.features[np.asarray(rows, dtype=np.int64)] if rows else \
            np.zeros((0, wild.dim), dtype=np.float32)
        lab = np.asarray(labels, dtype=np.int32)
        mem_arr = np.full(len(rows), MEMBER_UNKNOWN, dtype=np.uint8)
        return Dataset(feats, lab, mem_arr, wild.num_classes,
                       class_names=wild.class_names)

    return build(cls_rows, cls_labels), build(sem_rows, [BOTTOM] * len(sem_rows))


def _project_context(wild: Dataset, idx: np.ndarray, id_train: Dataset | None):
    """2-D coordinates for the annotator: raw when d == 2, else the projection
    onto the top two principal axes of the ID training features."""
    feats = wild.features.astype(np.float64)
    if wild.dim == 2:
        coords = feats
        background = None if id_train is None else id_train.features.astype(np.float64)
    elif id_train is None or id_train.n < 2:
        coords = feats[:, :2] if wild.dim >= 2 else np.column_stack(
            [feats[:, 0], np.zeros(wild.n)])
        background = None
    else:
        base = id_train.features.astype(np.float64)
        mean = base.mean(axis=0)
        centered = base - mean
        v1, _ = top_singular_vector(centered, seed=0)
        deflated = centered - np.outer(centered @ v1, v1)
        if np.any(deflated):
            v2, _ = top_singular_vector(deflated, seed=0)
        else:
            v2 = np.zeros_like(v1)
        axes = np.column_stack([v1, v2])
        coords = (feats - mean) @ axes
        background = (base - mean) @ axes
    return coords[idx], background


@dataclass
class SessionItem:
    sample_id: int
    features: list[float]
    x: float
    y: float
    tau: float | None

    def to_json_dict(self) -> dict:
        return {"sample_id": self.sample_id, "features": self.features,
                "x": self.x, "y": self.y, "tau": self.tau}


@dataclass
class AnnotationSession:
    session_id: str
    num_classes: int
    items: list[SessionItem]
    class_names: list[str] | None = None
    background: list[dict] | None = None  # labeled ID context points
    received: dict[int, int] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return COMPLETE if len(self.received) == len(self.items) else OPEN

    def item_ids(self) -> set[int]:
        return {it.sample_id for it in self.items}

    def to_json_dict(self, include_items: bool = True) -> dict:
        d = {
            "session_id": self.session_id,
            "status": self.status,
            "num_classes": self.num_classes,
            "class_names": self.class_names,
            "total": len(self.items),
            "labeled": len(self.received),
        }
        if include_items:
            d["items"] = [it.to_json_dict() for it in self.items]
            d["background"] = self.background
            d["received"] = {str(k): ("BOTTOM" if v == BOTTOM else v)
                             for k, v in sorted(self.received.items())}
        return d


def _parse_label(value, num_classes: int):
    if value == "BOTTOM" or value == BOTTOM:
        return BOTTOM
    if isinstance(value, bool) or not isinstance(value, int):
        return None
    if 0 <= value < num_classes:
        return value
    return None


class SessionStore:
    """Directory-backed session registry with an append-only log per session.

    Mutations are serialized under one lock; every accepted label is flushed
    before the call returns, so a crash never loses submitted labels.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sessions: dict[str, AnnotationSession] = {}
        for path in sorted(self.root.glob("*.jsonl")):
            s = self._replay(path)
            if s is not None:
                self._sessions[s.session_id] = s

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def _replay(self, path: Path) -> AnnotationSession | None:
        session = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["type"] == "header":
                    session = AnnotationSession(
                        session_id=rec["session_id"],
                        num_classes=rec["num_classes"],
                        class_names=rec.get("class_names"),
                        background=rec.get("background"),
                        items=[SessionItem(**it) for it in rec["items"]],
                    )
                elif rec["type"] == "label" and session is not None:
                    session.received[int(rec["sample_id"])] = int(rec["label"])
        return session

    def create_session(self, wild: Dataset, selection: SelectionResult,
                       scores: ScoreTable | None = None,
                       id_train: Dataset | None = None,
                       session_id: str | None = None) -> AnnotationSession:
        idx = _sorted_indices(selection, wild)
        coords, background = _project_context(wild, idx, id_train)
        tau = None
        if scores is not None:
            by_id = {int(s): float(v) for s, v in zip(scores.sample_ids, scores.scores)}
            tau = [by_id.get(int(i)) for i in idx]
        items = []
        for pos, i in enumerate(idx):
            items.append(SessionItem(
                sample_id=int(i),
                features=[float(f) for f in wild.features[i]],
                x=float(coords[pos, 0]), y=float(coords[pos, 1]),
                tau=None if tau is None else tau[pos],
            ))
        bg = None
        if background is not None and id_train is not None:
            bg = [{"x": float(background[j, 0]), "y": float(background[j, 1]),
                   "label": int(id_train.class_labels[j])}
                  for j in range(id_train.n)]
        session = AnnotationSession(
            session_id=session_id or uuid.uuid4().hex[:12],
            num_classes=wild.num_classes,
            class_names=wild.class_names,
            items=items,
            background=bg,
        )
        with self._lock:
            if session.session_id in self._sessions:
                raise ValidationError(f"session {session.session_id} already exists")
            header = {"type": "header", "session_id": session.session_id,
                      "num_classes": session.num_classes,
                      "class_names": session.class_names,
                      "background": session.background,
                      "items": [it.to_json_dict() for it in session.items]}
            with open(self._path(session.session_id), "w", encoding="utf-8") as f:
                f.write(json.dumps(header, sort_keys=True) + "\n")
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> AnnotationSession:
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(session_id)
            return self._sessions[session_id]

    def list_sessions(self) -> list[AnnotationSession]:
        with self._lock:
            return [self._sessions[k] for k in sorted(self._sessions)]

    def submit_labels(self, session_id: str, labels: list[dict]) -> AnnotationSession:
        """Apply [{sample_id, label}] to the session. Re-submission overwrites.

        All items are validated first; any unknown id or out-of-range label
        rejects the whole batch with a per-item error list.
        """
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(session_id)
            session = self._sessions[session_id]
            ids = session.item_ids()
            parsed = []
            errors = []
            for rec in labels:
                sid = rec.get("sample_id")
                label = _parse_label(rec.get("label"), session.num_classes)
                if not isinstance(sid, int) or sid not in ids:
                    errors.append({"sample_id": sid, "error": "unknown sample_id"})
                elif label is None:
                    errors.append({"sample_id": sid, "error": "label out of range"})
                else:
                    parsed.append((sid, label))
            if errors:
                raise LabelRejection(errors)
            with open(self._path(session_id), "a", encoding="utf-8") as f:
                for sid, label in parsed:
                    f.write(json.dumps({"type": "label", "sample_id": sid,
                                        "label": label}, sort_keys=True) + "\n")
                f.flush()
            for sid, label in parsed:
                session.received[sid] = label
            return session

    def export(self, session_id: str, partial: bool = False
               ) -> tuple[Dataset, Dataset, Dataset]:
        """Build the annotated subsets from submitted labels.

        Human labels cannot distinguish ID from covariate, so every in-class
        label lands in the first subset and the third is empty; membership is
        recorded as UNKNOWN. Exporting an incomplete session requires `partial`.
        """
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(session_id)
            session = self._sessions[session_id]
            if session.status != COMPLETE and not partial:
                raise ValidationError(
                    f"session {session_id} is not complete; pass partial=True to export anyway")
            dim = len(session.items[0].features) if session.items else 0
            cls_rows, cls_labels, sem_rows = [], [], []
            for it in session.items:  # items are already ordered by wild index
                if it.sample_id not in session.received:
                    continue
                label = session.received[it.sample_id]
                if label == BOTTOM:
                    sem_rows.append(it.features)
                else:
                    cls_rows.append(it.features)
                    cls_labels.append(label)

            def build(rows, labels, fill):
                feats = np.asarray(rows, dtype=np.float32).reshape(len(rows), dim)
                lab = np.asarray(labels if labels is not None else [fill] * len(rows),
                                 dtype=np.int32)
                mem = np.full(len(rows), MEMBER_UNKNOWN, dtype=np.uint8)
                return Dataset(feats, lab, mem, session.num_classes,
                               class_names=session.class_names)

            cov = build(cls_rows, cls_labels, None)
            sem = build(sem_rows, None, BOTTOM)
            empty = build([], [], None)
            return cov, sem, empty


class LabelRejection(ValidationError):
    """Raised when a label batch contains invalid entries; carries per-item errors."""

    def __init__(self, errors: list[dict]):
        super().__init__(f"{len(errors)} label(s) rejected")
        self.errors = errors
