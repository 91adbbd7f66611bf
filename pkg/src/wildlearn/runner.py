"""End-to-end experiment driver: generate, train, score, select, annotate,
retrain, evaluate; optionally repeated for several feedback rounds with the
annotated sets accumulating and the total budget capped at rounds * k."""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from . import __version__, annotate, gradscore, metrics, nnet, optimize, selection, theorybound
from .config import ORACLE, ExperimentConfig
from .data import (Dataset, concat_datasets, generate_synthetic, mix_wild,
                   write_dataset, CovariateTransform)
from .errors import StageError, ValidationError
from .gradscore import GRADIENT, RANDOM
from .selection import MIXED, NEAR_BOUNDARY, TOP_K


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


def _score_round(cfg: ExperimentConfig, params, id_train, class_acc, wild):
    """Score the wild pool with the configured method.

    Returns (table, ref_grad, direction); the latter two are None for
    baseline methods that have no boundary-threshold notion.
    """
    if cfg.score_method == GRADIENT:
        ref_source = id_train
        if cfg.ref_grad_source == "id_train_plus_cov" and class_acc is not None and class_acc.n:
            ref_source = concat_datasets([id_train, class_acc])
        table, ref, _ = gradscore.score_wild_gradient(
            params, cfg.architecture, ref_source, wild,
            last_layer_only=cfg.last_layer_only, power_seed=cfg.seed)
        return table, ref, table.direction
    seed = cfg.seed if cfg.score_method == RANDOM else 0
    return gradscore.baseline_score(params, cfg.architecture, wild,
                                    cfg.score_method, seed=seed), None, None


def _select_round(cfg: ExperimentConfig, table, params, id_train, ref, direction,
                  exclude: set[int]):
    """Apply the configured strategy over the not-yet-annotated samples."""
    if exclude:
        keep = ~np.isin(table.sample_ids, sorted(exclude))
        table = gradscore.ScoreTable(table.scores[keep], table.method,
                                     table.sample_ids[keep],
                                     direction=table.direction,
                                     sigma1_sq=table.sigma1_sq)
    if cfg.strategy == TOP_K:
        return selection.select_top_k(table, cfg.k)
    if direction is None or ref is None:
        raise ValidationError(
            f"strategy {cfg.strategy!r} needs the gradient score's boundary threshold")
    tau_b = selection.id_boundary_threshold(
        params, cfg.architecture, id_train, direction, ref,
        percentile=cfg.percentile, last_layer_only=cfg.last_layer_only)
    if cfg.strategy == NEAR_BOUNDARY:
        return selection.select_near_boundary(table, tau_b, cfg.k)
    return selection.select_mixed(table, tau_b, cfg.k, cfg.lam)


def _annotate_round(cfg: ExperimentConfig, wild, sel, table, id_train, out_dir,
                    round_idx, store=None, session_hook=None, poll_interval=0.25):
    if cfg.annotation_mode == ORACLE:
        return annotate.oracle_training_sets(wild, sel)
    if store is None:
        store = annotate.SessionStore(Path(out_dir) / "sessions")
    session = store.create_session(wild, sel, scores=table, id_train=id_train,
                                   session_id=f"round-{round_idx}")
    if session_hook is not None:
        session_hook(session, store)
    while store.get(session.session_id).status != annotate.COMPLETE:
        time.sleep(poll_interval)
    cov, sem, _ = store.export(session.session_id)
    return cov, sem


def _maybe_concat(acc: Dataset | None, new: Dataset) -> Dataset:
    if acc is None or acc.n == 0:
        return new
    if new.n == 0:
        return acc
    return concat_datasets([acc, new])


def run_experiment(cfg: ExperimentConfig, out_dir, store=None, session_hook=None,
                   poll_interval: float = 0.25, write_artifacts: bool = True) -> dict:
    """Execute the configured experiment and write report.json plus CSV/binary
    artifacts under out_dir. Returns the report dict.

    Any stage failure raises StageError after persisting whatever artifacts and
    partial report exist so far.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    report: dict = {"config": cfg.to_json_dict(),
                    "versions": {"wildlearn": __version__, "numpy": np.__version__}}
    arch = cfg.architecture
    try:
        bundle = _stage("generate", generate_synthetic, cfg.synthetic)
        wild = _stage("mix_wild", mix_wild, bundle["id_pool"], bundle["cov_pool"],
                      bundle["sem_pool"], cfg.wild, cfg.seed)
        if write_artifacts:
            for name, ds in bundle.items():
                write_dataset(ds, out / f"{name}.wds",
                              spec_echo=cfg.synthetic.to_json_dict(), seed=cfg.synthetic.seed)
            write_dataset(wild, out / "wild.wds", seed=cfg.seed)

        id_train = bundle["id_train"]
        erm_res = _stage("train_erm", optimize.train_erm, arch, id_train, cfg.erm)
        erm_eval = _stage("eval_erm", metrics.evaluate, erm_res.params, arch,
                          bundle["id_test"], bundle["cov_test"], bundle["sem_test"],
                          score=metrics.ENERGY_SCORE)
        report["erm"] = {"eval": erm_eval.to_json_dict(),
                         "final_train_ce": erm_res.history[-1].ce_loss,
                         "detector_score": metrics.ENERGY_SCORE}
        if write_artifacts:
            nnet.save_model(out / "erm.wnn", arch, erm_res.params)

        epochs_rows = [("erm", 0, h) for h in erm_res.history]
        score_rows = []
        hist_blocks = []
        rounds_out = []
        annotated: set[int] = set()
        class_acc: Dataset | None = None
        sem_acc: Dataset | None = None
        scorer_params = erm_res.params
        joint_params = erm_res.params
        stopped_early = False

        for r in range(1, cfg.rounds + 1):
            table, ref, direction = _stage(
                f"score[{r}]", _score_round, cfg, scorer_params, id_train, class_acc, wild)
            sel = _stage(f"select[{r}]", _select_round, cfg, table, scorer_params,
                         id_train, ref, direction, annotated)
            comp = _stage(f"composition[{r}]", metrics.composition, sel, wild)
            class_new, sem_new = _stage(
                f"annotate[{r}]", _annotate_round, cfg, wild, sel, table, id_train,
                out, r, store=store, session_hook=session_hook, poll_interval=poll_interval)
            annotated.update(sel.indices)
            class_acc = _maybe_concat(class_acc, class_new)
            sem_acc = _maybe_concat(sem_acc, sem_new)
            empty = Dataset(np.zeros((0, wild.dim), np.float32), np.zeros(0, np.int32),
                            np.zeros(0, np.uint8), wild.num_classes)
            joint_res = _stage(f"train_joint[{r}]", optimize.train_joint, arch,
                               erm_res.params, id_train,
                               class_acc if class_acc is not None else empty,
                               sem_acc if sem_acc is not None else empty, cfg.joint)
            joint_params = joint_res.params
            scorer_params = joint_res.params
            jeval = _stage(f"eval[{r}]", metrics.evaluate, joint_params, arch,
                           bundle["id_test"], bundle["cov_test"], bundle["sem_test"],
                           selection=sel, wild=wild)
            bound = None
            if class_acc is not None and class_acc.n > 0:
                br = _stage(f"bound[{r}]", theorybound.bound_report, joint_params, arch,
                            id_train, class_acc, delta=cfg.theory.delta,
                            vc_proxy_d=cfg.theory.vc_proxy_d,
                            omega_in=cfg.theory.omega_in, omega_c=cfg.theory.omega_c)
                bound = br.to_json_dict()
            rounds_out.append({
                "round": r,
                "selection": sel.to_json_dict(),
                "composition": comp,
                "annotations": {"class": class_new.n, "sem": sem_new.n},
                "eval": jeval.to_json_dict(),
                "bound": bound,
            })
            epochs_rows.extend(("joint", r, h) for h in joint_res.history)
            score_rows.append((r, table))
            if write_artifacts:
                hist_blocks.append((r, gradscore.score_histogram_by_membership(table, wild)))
                nnet.save_model(out / f"joint_r{r}.wnn", arch, joint_params)
                sel.save(out / f"selection_r{r}.json")
            report["rounds"] = rounds_out
            if cfg.stop_when is not None and cfg.stop_when.satisfied(rounds_out[-1]["eval"]):
                stopped_early = True
                break

        used = sum(len(rd["selection"]["indices"]) for rd in rounds_out)
        report["rounds"] = rounds_out
        report["totals"] = {"annotations_used": used, "budget": cfg.rounds * cfg.k,
                            "within_budget": used <= cfg.rounds * cfg.k}
        report["stopped_early"] = stopped_early
    finally:
        report["wall_clock_sec"] = time.monotonic() - t0
        if write_artifacts:
            _write_report(out / "report.json", report)
            try:
                _write_csvs(out, epochs_rows, score_rows, hist_blocks, rounds_out)
            except NameError:
                pass  # failed before any rows existed
    return report


def _write_report(path, report) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _write_csvs(out: Path, epochs_rows, score_rows, hist_blocks, rounds_out) -> None:
    with open(out / "epochs.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["phase", "round", "epoch", "ce_loss", "detector_loss", "total"])
        for phase, rnd, h in epochs_rows:
            w.writerow([phase, rnd, h.epoch, repr(h.ce_loss), repr(h.detector_loss),
                        repr(h.total_loss)])
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "score", "method"])
        for _, table in score_rows:
            for sid, s in zip(table.sample_ids, table.scores):
                w.writerow([int(sid), repr(float(s)), table.method])
    with open(out / "score_hist.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["round", "membership", "bin_lo", "bin_hi", "count"])
        for rnd, (edges, hists) in hist_blocks:
            for name, counts in sorted(hists.items()):
                for b, c in enumerate(counts):
                    w.writerow([rnd, name, repr(float(edges[b])), repr(float(edges[b + 1])),
                                int(c)])
    with open(out / "bound.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["round", "grad_discrepancy", "id_risk", "cov_risk", "loss_sup_M",
                    "zeta", "ood_acc", "fpr95"])
        for rd in rounds_out:
            if rd["bound"] is None:
                continue
            b = rd["bound"]
            w.writerow([rd["round"], repr(b["grad_discrepancy"]), repr(b["id_risk"]),
                        repr(b["cov_risk"]), repr(b["loss_sup_M"]), repr(b["zeta"]),
                        repr(rd["eval"]["ood_acc"]), repr(rd["eval"]["fpr95"])])


SWEEP_AXES = ("k", "score_method", "strategy", "lambda", "alpha", "covariate_transform")


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "k":
        return dataclasses.replace(cfg, k=int(value))
    if axis == "score_method":
        return dataclasses.replace(cfg, score_method=str(value))
    if axis == "strategy":
        return dataclasses.replace(cfg, strategy=str(value))
    if axis == "lambda":
        return dataclasses.replace(cfg, lam=float(value), strategy=MIXED)
    if axis == "alpha":
        joint = dataclasses.replace(cfg.joint, alpha=float(value))
        return dataclasses.replace(cfg, joint=joint)
    if axis == "covariate_transform":
        if isinstance(value, CovariateTransform):
            t = value
        else:
            t = CovariateTransform(
                kind=value["kind"], sigma=float(value.get("sigma", 0.0)),
                shift=tuple(value.get("shift", ())), angle=float(value.get("angle", 0.0)))
        synthetic = dataclasses.replace(cfg.synthetic, covariate_transform=t)
        return dataclasses.replace(cfg, synthetic=synthetic)
    raise ValidationError(f"unknown sweep axis {axis!r}; valid: {SWEEP_AXES}")


def _axis_label(axis, value) -> str:
    if axis == "covariate_transform":
        return value.kind if isinstance(value, CovariateTransform) else str(value["kind"])
    return str(value)


def run_sweep(base_cfg: ExperimentConfig, axis: str, values, out_dir) -> list[dict]:
    """One experiment per axis value with a shared seed; failures are recorded
    per cell and the sweep continues. Writes sweep.csv and per-cell artifacts."""
    if not values:
        raise ValidationError("sweep axis needs at least one value")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        label = _axis_label(axis, value)
        cell_dir = out / f"{axis}_{label}"
        row = {"axis": axis, "value": label}
        try:
            cfg = apply_axis(base_cfg, axis, value)
            report = run_experiment(cfg, cell_dir)
            last = report["rounds"][-1]
            row.update({
                "id_acc": last["eval"]["id_acc"],
                "ood_acc": last["eval"]["ood_acc"],
                "fpr95": last["eval"]["fpr95"],
                "auroc": last["eval"]["auroc"],
                "grad_discrepancy": None if last["bound"] is None
                else last["bound"]["grad_discrepancy"],
                "zeta": None if last["bound"] is None else last["bound"]["zeta"],
                "error": "",
            })
        except Exception as e:  # keep sweeping; the cell records its failure
            row.update({"id_acc": None, "ood_acc": None, "fpr95": None, "auroc": None,
                        "grad_discrepancy": None, "zeta": None, "error": str(e)})
        rows.append(row)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["axis", "value", "id_acc", "ood_acc", "fpr95",
                                          "auroc", "grad_discrepancy", "zeta", "error"])
        w.writeheader()
        w.writerows(rows)
    return rows
