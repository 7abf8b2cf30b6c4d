"""wisynth command line: check, fit, predict, baseline, simulate, eval, train-end."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import inference as inf
from . import io
from . import synth
from .graph import (ABSTAIN, GraphError, check_consistency, check_distinguishability,
                    check_informativeness)
from .model import UNKNOWN, build_plrm, build_wslg
from .training import TrainConfig, TrainingDivergedError, fit, fit_full_batch

UNKNOWN_NAME = "<unknown>"
log = logging.getLogger("wisynth")


def _load_graph_ilfs(args):
    graph = io.graph_from_dict(io.read_json(args.graph))
    ilfs = io.ilfs_from_dict(graph, io.read_json(args.ilfs)) if getattr(args, "ilfs", None) else None
    return graph, ilfs


def _names(graph, ids):
    return [graph.name_of(i) for i in ids]


def _check_report(graph, cons=None, dist=None) -> tuple[list[str], bool, bool]:
    cons = cons or check_consistency(graph)
    dist = dist or check_distinguishability(graph)
    lines = [f"consistency: {'ok' if cons.consistent else 'FAILED'}"]
    for v in cons.violations:
        lines.append("  inconsistent triangle: " + ", ".join(
            f"{graph.name_of(a)}-{graph.name_of(b)}: {r}" for (a, b), r in
            zip([(v.labels[0], v.labels[1]), (v.labels[1], v.labels[2]),
                 (v.labels[0], v.labels[2])], v.relations)))
    lines.append(f"distinguishability: {'ok' if dist.distinguishable else 'FAILED'}")
    for a, b in dist.indistinct_pairs:
        lines.append(f"  indistinguishable pair: {graph.name_of(a)}, {graph.name_of(b)} "
                     "(add a seen label related differently to the two)")
    return lines, cons.consistent, dist.distinguishable


def _check_json(graph, cons, dist, reports) -> str:
    doc = {
        "consistent": cons.consistent,
        "violations": [{"labels": _names(graph, v.labels), "relations": [str(r) for r in v.relations]}
                       for v in cons.violations],
        "distinguishable": dist.distinguishable,
        "indistinct_pairs": [_names(graph, p) for p in dist.indistinct_pairs],
    }
    if reports is not None:
        doc["ilfs"] = [{"id": r.ilf_id, "structural": r.structural,
                        "structural_failures": _names(graph, r.structural_failures),
                        "empirical": r.empirical,
                        "empirical_failures": _names(graph, r.empirical_failures)}
                       for r in reports]
    return io.dumps(doc) + "\n"


def cmd_check(args) -> int:
    graph, ilfs = _load_graph_ilfs(args)
    cons, dist = check_consistency(graph), check_distinguishability(graph)
    reports = None
    if ilfs is not None:
        outputs = io.read_outputs_csv(args.outputs, ilfs) if args.outputs else None
        reports = check_informativeness(graph, ilfs, outputs)
    ok = cons.consistent and dist.distinguishable
    if args.format == "json":
        _emit(_check_json(graph, cons, dist, reports), args.out)
        return 0 if ok else 1
    lines, _, _ = _check_report(graph, cons, dist)
    if reports is not None:
        for rep in reports:
            status = "ok" if rep.structural else "uninformative for " + ", ".join(
                _names(graph, rep.structural_failures))
            if rep.empirical is False:
                status += "; votes compatible with " + ", ".join(
                    _names(graph, rep.empirical_failures)) + " on every point"
            lines.append(f"ilf {rep.ilf_id}: {status}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if ok else 1


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_fit(args) -> int:
    graph, ilfs = _load_graph_ilfs(args)
    lines, ok_c, ok_d = _check_report(graph)
    if not ok_c or (not ok_d and not args.allow_indistinct):
        sys.stderr.write("\n".join(lines) + "\n")
        sys.stderr.write("refusing to fit: the label graph fails the distinguishability sanity "
                         "test, so some desired labels cannot be told apart by any parameter "
                         "setting (use --allow-indistinct to override)\n" if ok_c else
                         "refusing to fit: the label graph is inconsistent\n")
        return 1
    outputs = io.read_outputs_csv(args.outputs, ilfs)
    builder = build_plrm if args.kind == "plrm" else build_wslg
    model = builder(graph, ilfs, include_unknown=not args.no_unknown)
    try:
        if args.trainer == "full-batch":
            trained, history = fit_full_batch(
                model, outputs, iterations=args.iterations,
                step_size=args.step_size if args.step_size is not None else 2.0,
                eps=args.eps, theta_init=args.theta_init)
        else:
            cfg = TrainConfig(step_size=args.step_size, epochs=args.epochs, burn_in=args.burn_in,
                              eps=args.eps, theta_init=args.theta_init, rng_seed=args.seed,
                              weight_decay=args.weight_decay, sampler=args.sampler,
                              reverse_sign=args.reverse_sign)
            trained, history = fit(model, outputs, cfg)
    except TrainingDivergedError as exc:
        sys.stderr.write(f"training diverged: {exc}\n")
        return 1
    out = Path(args.out)
    io.write_json(out, io.model_to_dict(trained))
    log_path = Path(args.log) if args.log else out.with_name(out.stem + ".log.jsonl")
    io.write_jsonl(log_path, history)
    return 0


def cmd_predict(args) -> int:
    model = io.model_from_dict(io.read_json(args.model))
    outputs = io.read_outputs_csv(args.outputs, model.ilfs)
    post = inf.posterior_labels(model, outputs, args.method, sweeps=args.sweeps,
                                burn_in=args.burn_in, rng_seed=args.seed)
    io.write_jsonl(args.out, io.posteriors_to_records(post.probs, post.names))
    return 0


def _hard_records(graph, pred):
    names = [graph.name_of(y) for y in graph.desired] + [UNKNOWN_NAME]
    pos = {y: i for i, y in enumerate(graph.desired)}
    probs = np.zeros((len(pred), len(names)))
    for r, y in enumerate(pred):
        probs[r, pos.get(int(y), len(names) - 1)] = 1.0
    return io.posteriors_to_records(probs, names)


def cmd_baseline(args) -> int:
    graph, ilfs = _load_graph_ilfs(args)
    outputs = io.read_outputs_csv(args.outputs, ilfs)
    if args.method == "lr-mv":
        pred = bl.lr_mv(graph, outputs).predictions
    elif args.method == "w-lr-mv":
        pred = bl.w_lr_mv(graph, outputs).predictions
    else:
        feats = io.read_matrix_csv(args.features) if args.features else None
        pred = bl.dap(graph, outputs, feats, literal=args.literal,
                      linear_cfg={"seed": args.seed}).predictions
    io.write_jsonl(args.out, _hard_records(graph, pred))
    return 0


def cmd_simulate(args) -> int:
    base = synth.SimSpec.from_dict(io.read_json(args.spec)) if args.spec else synth.SimSpec()
    overrides = {"k": args.k, "k_hat": args.k_hat, "n_ilfs": args.n_ilfs, "m": args.m,
                 "space_size": args.space_size, "abstain_rate": args.abstain}
    kw = {key: v for key, v in overrides.items() if v is not None}
    if args.kind_weights:
        kw["kind_weights"] = tuple(args.kind_weights)
    if args.accuracy_range:
        kw["accuracy_range"] = tuple(args.accuracy_range)
    if args.force_indistinct:
        kw["force_indistinct_pair"] = True
    kw["rng_seed"] = args.seed
    spec = synth.SimSpec(**{**base.to_dict(), **kw}) if kw else base
    spec = synth.SimSpec.from_dict({**spec.to_dict()})
    task = synth.generate_task(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "graph.json", io.graph_to_dict(task.graph))
    io.write_json(out / "ilfs.json", io.ilfs_to_dict(task.graph, task.ilfs))
    io.write_outputs_csv(out / "outputs.csv", task.ilfs, task.outputs)
    io.write_labels_csv(out / "gold.csv", task.gold)
    io.write_json(out / "spec.json", {**spec.to_dict(),
                                       "ilf_accuracies": list(task.accuracies)})
    if args.features_dim:
        feats = synth.gaussian_features(task.gold, task.graph.desired, dim=args.features_dim,
                                        separation=args.separation, rng=args.seed)
        io.write_matrix_csv(out / "features.csv", feats)
    return 0


def _ids_from_names(graph, names):
    ids = []
    for n in names:
        ids.append(UNKNOWN if n == UNKNOWN_NAME else graph.id_of(n))
    return np.array(ids, dtype=np.int64)


def _read_posteriors(graph, path):
    probs, names = io.posteriors_from_records(io.read_jsonl(path))
    # restore model column order: desired ids, then unknown
    ids = _ids_from_names(graph, names)
    order = np.argsort(np.where(ids == UNKNOWN, np.iinfo(np.int64).max, ids), kind="stable")
    return probs[:, order], ids[order]


def cmd_eval(args) -> int:
    graph = io.graph_from_dict(io.read_json(args.graph))
    probs, ids = _read_posteriors(graph, args.pred)
    gold = io.read_labels_csv(args.gold)
    pred = ids[np.argmax(probs, axis=1)] if len(probs) else np.zeros(0, np.int64)
    metrics = synth.evaluate(pred, gold, classes=graph.desired)
    text = io.dumps(metrics.to_dict()) + "\n"
    _emit(text, args.out)
    return 0


def cmd_train_end(args) -> int:
    graph = io.graph_from_dict(io.read_json(args.graph))
    X = io.read_matrix_csv(args.features)
    probs, ids = _read_posteriors(graph, args.posteriors)
    if len(X) != len(probs):
        raise ValueError(f"{len(X)} feature rows but {len(probs)} posteriors")
    desired = np.isin(ids, graph.desired)
    P = probs[:, desired]
    mass = P.sum(axis=1, keepdims=True)
    P = np.where(mass > 0, P / np.where(mass > 0, mass, 1), 1.0 / P.shape[1])
    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(X))
    n_test = int(round(args.test_frac * len(X)))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    mu, sd = X[train].mean(axis=0), X[train].std(axis=0) + 1e-12
    Z = (X - mu) / sd
    clf = bl.train_noise_aware_linear(Z[train], P[train], steps=args.steps, lr=args.lr,
                                      l2=args.l2, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    classes = ids[desired]
    io.write_json(out / "end_model.json", {
        "classes": [graph.name_of(int(c)) for c in classes],
        "weights": clf.weights.tolist(), "feature_mean": mu.tolist(), "feature_scale": sd.tolist(),
        "train_points": train.tolist(), "test_points": test.tolist()})
    result = {"n_train": int(len(train)), "n_test": int(len(test))}
    if args.gold:
        gold = io.read_labels_csv(args.gold)
        end_pred = classes[clf.predict(Z[test])] if len(test) else np.zeros(0, np.int64)
        lm_pred = ids[np.argmax(probs[test], axis=1)] if len(test) else np.zeros(0, np.int64)
        result["end_model"] = synth.evaluate(end_pred, gold[test], classes=graph.desired).to_dict()
        result["label_model"] = synth.evaluate(lm_pred, gold[test], classes=graph.desired).to_dict()
    io.write_json(out / "metrics.json", result)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wisynth", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("check", help="consistency, distinguishability and ILF reports")
    sp.add_argument("graph")
    sp.add_argument("--ilfs")
    sp.add_argument("--outputs")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("fit", help="train a PLRM or WS-LG label model")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--ilfs", required=True)
    sp.add_argument("--outputs", required=True)
    sp.add_argument("--kind", choices=("plrm", "wslg"), default="plrm")
    sp.add_argument("--trainer", choices=("sgd", "full-batch"), default="sgd",
                    help="stochastic updates, or exact full-batch descent on enumerable models")
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--iterations", type=int, default=300, help="full-batch iterations")
    sp.add_argument("--step-size", type=float)
    sp.add_argument("--burn-in", type=int, default=10)
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--theta-init", type=float, default=0.1)
    sp.add_argument("--weight-decay", type=float, default=0.0)
    sp.add_argument("--sampler", choices=("auto", "exact", "gibbs"), default="auto")
    sp.add_argument("--reverse-sign", action="store_true",
                    help="flip the update direction (ascends the objective; for comparison only)")
    sp.add_argument("--no-unknown", action="store_true", help="drop the unknown class")
    sp.add_argument("--allow-indistinct", action="store_true",
                    help="fit even if two desired labels are indistinguishable")
    sp.add_argument("--log", help="training log path (default: next to --out)")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="posterior label distributions from a model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--outputs", required=True)
    sp.add_argument("--method", choices=("auto", "exact", "gibbs"), default="auto")
    sp.add_argument("--sweeps", type=int, default=2000)
    sp.add_argument("--burn-in", type=int, default=200)
    common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("baseline", help="LR-MV, W-LR-MV or DAP predictions")
    sp.add_argument("--method", choices=("lr-mv", "w-lr-mv", "dap"), required=True)
    sp.add_argument("--graph", required=True)
    sp.add_argument("--ilfs", required=True)
    sp.add_argument("--outputs", required=True)
    sp.add_argument("--features")
    sp.add_argument("--literal", action="store_true", help="DAP score without the prior division (ties every label)")
    common(sp)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("simulate", help="write a synthetic task bundle")
    sp.add_argument("--spec")
    sp.add_argument("--k", type=int)
    sp.add_argument("--k-hat", type=int)
    sp.add_argument("--n-ilfs", type=int)
    sp.add_argument("--space-size", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--abstain", type=float)
    sp.add_argument("--accuracy-range", type=float, nargs=2)
    sp.add_argument("--kind-weights", type=float, nargs=3,
                    help="how often a new seen label is a child, a parent or an overlap")
    sp.add_argument("--force-indistinct", action="store_true")
    sp.add_argument("--features-dim", type=int, default=0)
    sp.add_argument("--separation", type=float, default=3.0)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("eval", help="accuracy and macro F1 of predictions")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gold", required=True)
    sp.add_argument("--graph", required=True)
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("train-end", help="noise-aware linear end model")
    sp.add_argument("--features", required=True)
    sp.add_argument("--posteriors", required=True)
    sp.add_argument("--graph", required=True)
    sp.add_argument("--gold")
    sp.add_argument("--test-frac", type=float, default=0.3)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--lr", type=float, default=0.5)
    sp.add_argument("--l2", type=float, default=0.0)
    common(sp)
    sp.set_defaults(func=cmd_train_end)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GraphError, ValueError, inf.BudgetExceededError, OSError, KeyError) as exc:
        sys.stderr.write(f"wisynth {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
