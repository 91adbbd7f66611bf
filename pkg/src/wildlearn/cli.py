"""Command-line driver.

Subcommands cover the pipeline stage by stage (gen, train-erm, score, select,
annotate-oracle, train-joint, eval, bound), the annotation service (serve),
and the end-to-end loop (run, sweep). Exit codes: 0 ok, 2 validation error,
3 runtime stage failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, annotate, gradscore, metrics, nnet, optimize, selection, theorybound
from .config import default_config, load_config, with_seed, ExperimentConfig, HUMAN
from .data import generate_synthetic, mix_wild, read_dataset, write_dataset
from .errors import StageError, ValidationError, WildlearnError
from .gradscore import GRADIENT
from .runner import run_experiment, run_sweep
from .selection import NEAR_BOUNDARY, TOP_K, SelectionResult
from .service import serve_annotation
from .annotate import SessionStore


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    bundle = generate_synthetic(cfg.synthetic)
    for name, ds in bundle.items():
        write_dataset(ds, out / f"{name}.wds", spec_echo=cfg.synthetic.to_json_dict(),
                      seed=cfg.synthetic.seed)
    wild = mix_wild(bundle["id_pool"], bundle["cov_pool"], bundle["sem_pool"],
                    cfg.wild, cfg.seed)
    write_dataset(wild, out / "wild.wds", seed=cfg.seed)
    print(f"wrote {len(bundle) + 1} datasets to {out}")
    return 0


def cmd_train_erm(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    id_train = read_dataset(Path(args.data) / "id_train.wds")
    res = optimize.train_erm(cfg.architecture, id_train, cfg.erm)
    nnet.save_model(out / "erm.wnn", cfg.architecture, res.params)
    optimize.write_epoch_log(out / "epochs.csv", res.history)
    print(f"final train CE loss {res.history[-1].ce_loss:.6f}")
    return 0


def cmd_score(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    arch, params = nnet.load_model(args.model)
    wild = read_dataset(Path(args.data) / "wild.wds")
    id_train = read_dataset(Path(args.data) / "id_train.wds")
    if cfg.score_method == GRADIENT:
        table, ref, _ = gradscore.score_wild_gradient(
            params, arch, id_train, wild, last_layer_only=cfg.last_layer_only,
            power_seed=cfg.seed)
        np.savez(out / "scoreaux.npz", ref_grad=ref, direction=table.direction,
                 sigma1_sq=table.sigma1_sq)
    else:
        table = gradscore.baseline_score(params, arch, wild, cfg.score_method,
                                         seed=cfg.seed)
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "score", "method"])
        for sid, s in zip(table.sample_ids, table.scores):
            w.writerow([int(sid), repr(float(s)), table.method])
    edges, hists = gradscore.score_histogram_by_membership(table, wild)
    with open(out / "score_hist.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["membership", "bin_lo", "bin_hi", "count"])
        for name, counts in sorted(hists.items()):
            for b, c in enumerate(counts):
                w.writerow([name, repr(float(edges[b])), repr(float(edges[b + 1])), int(c)])
    print(f"scored {wild.n} wild samples with {table.method}")
    return 0


def _load_scores(path) -> gradscore.ScoreTable:
    ids, scores, method = [], [], GRADIENT
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            ids.append(int(row["sample_id"]))
            scores.append(float(row["score"]))
            method = row["method"]
    return gradscore.ScoreTable(np.asarray(scores), method,
                                np.asarray(ids, dtype=np.int64))


def cmd_select(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    table = _load_scores(args.scores)
    if cfg.strategy == TOP_K:
        sel = selection.select_top_k(table, cfg.k)
    else:
        arch, params = nnet.load_model(args.model)
        aux = np.load(Path(args.scores).parent / "scoreaux.npz")
        id_train = read_dataset(Path(args.data) / "id_train.wds")
        tau_b = selection.id_boundary_threshold(
            params, arch, id_train, aux["direction"], aux["ref_grad"],
            percentile=cfg.percentile, last_layer_only=cfg.last_layer_only)
        if cfg.strategy == NEAR_BOUNDARY:
            sel = selection.select_near_boundary(table, tau_b, cfg.k)
        else:
            sel = selection.select_mixed(table, tau_b, cfg.k, cfg.lam)
    sel.save(out / "selection.json")
    print(f"selected {len(sel.indices)} samples with {sel.strategy}")
    return 0


def cmd_annotate_oracle(args) -> int:
    out = _out_dir(args)
    wild = read_dataset(Path(args.data) / "wild.wds")
    sel = SelectionResult.load(args.selection)
    cov, sem, idsel = annotate.oracle_annotate(wild, sel)
    cls_pool, sem_pool = annotate.oracle_training_sets(wild, sel)
    write_dataset(cov, out / "cov_selected.wds")
    write_dataset(sem, out / "sem_selected.wds")
    write_dataset(idsel, out / "id_selected.wds")
    write_dataset(cls_pool, out / "class_pool.wds")
    write_dataset(sem_pool, out / "sem_pool_selected.wds")
    print(f"annotated {len(sel.indices)}: {cov.n} covariate, {sem.n} semantic, {idsel.n} id")
    return 0


def cmd_train_joint(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    arch, params = nnet.load_model(args.model)
    id_train = read_dataset(Path(args.data) / "id_train.wds")
    cls_pool = read_dataset(Path(args.annotated) / "class_pool.wds")
    sem_pool = read_dataset(Path(args.annotated) / "sem_pool_selected.wds")
    res = optimize.train_joint(arch, params, id_train, cls_pool, sem_pool, cfg.joint)
    nnet.save_model(out / "joint.wnn", arch, res.params)
    optimize.write_epoch_log(out / "epochs.csv", res.history)
    print(f"final total loss {res.history[-1].total_loss:.6f}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    arch, params = nnet.load_model(args.model)
    data = Path(args.data)
    rep = metrics.evaluate(params, arch,
                           read_dataset(data / "id_test.wds"),
                           read_dataset(data / "cov_test.wds"),
                           read_dataset(data / "sem_test.wds"),
                           score=args.detector_score)
    (out / "eval.json").write_text(json.dumps(rep.to_json_dict(), indent=2, sort_keys=True),
                                   encoding="utf-8")
    print(json.dumps(rep.to_json_dict(), sort_keys=True))
    return 0


def cmd_bound(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    arch, params = nnet.load_model(args.model)
    id_train = read_dataset(Path(args.data) / "id_train.wds")
    cls_pool = read_dataset(Path(args.annotated) / "class_pool.wds")
    rep = theorybound.bound_report(params, arch, id_train, cls_pool,
                                   delta=cfg.theory.delta,
                                   vc_proxy_d=cfg.theory.vc_proxy_d,
                                   omega_in=cfg.theory.omega_in,
                                   omega_c=cfg.theory.omega_c)
    (out / "bound.json").write_text(json.dumps(rep.to_json_dict(), indent=2, sort_keys=True),
                                    encoding="utf-8")
    print(json.dumps(rep.to_json_dict(), sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    store = SessionStore(args.store)
    print(f"annotation service on http://{args.addr} (store: {args.store})")
    serve_annotation(args.addr, store, static_dir=args.static)
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    if cfg.annotation_mode == HUMAN:
        store = SessionStore(out / "sessions")
        serve_annotation(args.addr, store, static_dir=args.static, background=True)
        print(f"annotation service on http://{args.addr}; waiting for labels")
        report = run_experiment(cfg, out, store=store)
    else:
        report = run_experiment(cfg, out)
    last = report["rounds"][-1]["eval"]
    print(json.dumps({"ood_acc": last["ood_acc"], "id_acc": last["id_acc"],
                      "fpr95": last["fpr95"], "auroc": last["auroc"]}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    values = json.loads(args.values)
    if not isinstance(values, list) or not values:
        raise ValidationError("--values must be a non-empty JSON list")
    rows = run_sweep(cfg, args.axis, values, out)
    failures = [r for r in rows if r["error"]]
    print(f"sweep over {args.axis}: {len(rows)} cells, {len(failures)} failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wildlearn",
                                description="wild-data selection / annotation / training toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, seed=True, out=True):
        if config:
            sp.add_argument("--config", help="experiment config JSON (default: desk benchmark)")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override every seed")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("gen", help="generate the synthetic pools and the wild mixture")
    common(sp)
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("train-erm", help="train the classifier on labeled ID data")
    common(sp)
    sp.add_argument("--data", required=True, help="directory with id_train.wds")
    sp.set_defaults(fn=cmd_train_erm)

    sp = sub.add_parser("score", help="score the wild pool")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_score)

    sp = sub.add_parser("select", help="pick an annotation batch from scores")
    common(sp)
    sp.add_argument("--scores", required=True, help="scores.csv from the score step")
    sp.add_argument("--model", help="model (needed for boundary strategies)")
    sp.add_argument("--data", help="data dir (needed for boundary strategies)")
    sp.set_defaults(fn=cmd_select)

    sp = sub.add_parser("annotate-oracle", help="label a selection from ground truth")
    common(sp, config=False, seed=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--selection", required=True)
    sp.set_defaults(fn=cmd_annotate_oracle)

    sp = sub.add_parser("serve", help="run the annotation HTTP service")
    sp.add_argument("--store", required=True, help="session store directory")
    sp.add_argument("--addr", default="127.0.0.1:8675")
    sp.add_argument("--static", default=None, help="static frontend directory")
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("train-joint", help="train jointly on ID + annotated sets")
    common(sp)
    sp.add_argument("--model", required=True, help="warm-start checkpoint (ERM)")
    sp.add_argument("--data", required=True)
    sp.add_argument("--annotated", required=True, help="directory from annotate-oracle")
    sp.set_defaults(fn=cmd_train_joint)

    sp = sub.add_parser("eval", help="evaluate a model on the test sets")
    common(sp, config=False, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--detector-score", default=metrics.DETECTOR_HEAD,
                    choices=[metrics.DETECTOR_HEAD, metrics.ENERGY_SCORE])
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bound", help="report the computable bound terms")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--annotated", required=True)
    sp.set_defaults(fn=cmd_bound)

    sp = sub.add_parser("run", help="end-to-end experiment")
    common(sp)
    sp.add_argument("--addr", default="127.0.0.1:8675", help="service address (human mode)")
    sp.add_argument("--static", default=None, help="static frontend directory (human mode)")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="run one experiment per axis value")
    common(sp)
    sp.add_argument("--axis", required=True)
    sp.add_argument("--values", required=True, help="JSON list of axis values")
    sp.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValidationError, WildlearnError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
