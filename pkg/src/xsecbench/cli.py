"""Command-line front end: generate, train, explain, evaluate, attack, detect, report.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Every file written embeds a run manifest so reruns can be compared byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from typing import Optional

import numpy as np

from . import __version__, datagen, netcore
from .advguard import (Calibration, PgdConfig, ThresholdRule, attribution_statistics, calibrate,
                       evaluate_values, histogram, pgd_attack_batch)
from .attrib import (DISPLAY_NAMES, METHODS, AttribConfig, canonical_method, counterfactual_explain,
                     dump_attributions, explain, load_attributions, make_explainer, rank_features)
from .errors import DegenerateError, NumericalError, XsecError
from .report import (render_counterfactual, render_detector_summary, render_feature_table,
                     render_histogram, render_metric_report, render_ranking_table)
from .xmetrics import METRICS, MetricConfig, MetricReport, aggregate, canonical_metric, evaluate_dataset

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _manifest(args, command: str, outputs: dict, **extra) -> dict:
    return {
        "command": command,
        "model_path": getattr(args, "model", None),
        "data_path": getattr(args, "data", None),
        "methods": extra.pop("methods", None),
        "metric_config": extra.pop("metric_config", None),
        "seed": args.seed,
        "output_paths": outputs,
        "tool_version": __version__,
        **extra,
    }


def _out(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(args, table: str, data: dict) -> None:
    if args.format == "data":
        sys.stdout.write(_dump_json(data))
    else:
        sys.stdout.write(table)


def _require_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise UsageError(f"{flag} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: no such file: {path}")
    return path


def _load_data(args, path_flag: str = "data") -> datagen.Dataset:
    path = _require_file(getattr(args, path_flag), f"--{path_flag}")
    labels = getattr(args, "labels", None)
    if labels:
        return datagen.load_idx(path, _require_file(labels, "--labels"))
    if path.lower().endswith(".csv"):
        return datagen.load_csv(path)
    sessions = datagen.load_sequences(path)
    spec = datagen.SequenceWindowSpec(args.window, args.vocab)
    return datagen.windowize_sessions(sessions, spec)


def _load_model(args) -> netcore.Model:
    return netcore.load_model(_require_file(args.model, "--model"))


def _methods(text: str, allow_deepaid: bool = False) -> list:
    out = []
    for name in [t for t in text.split(",") if t.strip()]:
        if allow_deepaid and name.strip().lower() == "deepaid":
            out.append("deepaid")
            continue
        try:
            out.append(canonical_method(name))
        except XsecError:
            valid = ", ".join(METHODS + (("deepaid",) if allow_deepaid else ()))
            raise UsageError(f"unknown method {name.strip()!r}; valid names: {valid}") from None
    if not out:
        raise UsageError("no methods given")
    return out


def _attrib_config(args, train: Optional[datagen.Dataset] = None) -> AttribConfig:
    mean = None
    if args.baseline == "train_mean":
        if train is None:
            raise UsageError("--baseline train_mean needs the data set")
        mean = train.xs.mean(axis=0)
    return AttribConfig(baseline=args.baseline, train_mean=mean, ig_steps=args.ig_steps,
                        n_samples=args.attr_samples, seed=args.seed)


def _shap_baselines(ds: datagen.Dataset, seed: int, n: int = 16) -> np.ndarray:
    idx = np.random.default_rng(seed).permutation(len(ds))[:n]
    return ds.xs[np.sort(idx)]


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    out = args.output or _out(args, {"planted": "planted.csv", "sequences": "sessions.seq",
                                     "digits": "digits.csv"}[args.kind])
    manifest = _manifest(args, "generate", {"data": out}, kind=args.kind)
    note = [json.dumps({"manifest": manifest}, sort_keys=True)]
    if args.kind == "planted":
        relevant = [int(t) for t in args.relevant.split(",") if t.strip()]
        ds = datagen.gen_planted_tabular(args.n, args.dim, relevant, args.seed)
        datagen.write_csv(ds, out, note)
    elif args.kind == "digits":
        datagen.write_csv(datagen.load_digits_dataset(), out, note)
    else:
        sessions = datagen.gen_event_sessions(args.n, args.vocab, args.length, args.anomaly_rate, args.seed)
        datagen.write_sequences(sessions, out, note)
    sys.stdout.write(f"wrote {out}\n")
    return EXIT_OK


def _binary_prf(pred, truth, positive: int = 1):
    tp = int(np.sum((pred == positive) & (truth == positive)))
    fp = int(np.sum((pred == positive) & (truth != positive)))
    fn = int(np.sum((pred != positive) & (truth == positive)))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def _classification_summary(model, ds) -> dict:
    pred = netcore.predict_batch(model, ds.xs)
    summary = {"n": len(ds), "accuracy": float(np.mean(pred == ds.ys))}
    if model.n_classes == 2:
        p, r, f = _binary_prf(pred, ds.ys)
    else:
        prf = [_binary_prf(pred, ds.ys, c) for c in range(model.n_classes) if np.any(ds.ys == c)]
        p, r, f = (float(np.mean([t[i] for t in prf])) for i in range(3))
    summary.update(precision=p, recall=r, f1=f)
    return summary


def cmd_train(args) -> int:
    ds = _load_data(args)
    try:
        hidden = [int(t) for t in args.arch.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--arch must be comma-separated integers, got {args.arch!r}") from None
    n_classes = max(ds.n_classes, args.n_classes or 0)
    train, test = ds.split(args.test_frac, args.seed) if args.test_frac > 0 else (ds, ds)
    model = netcore.init_model([ds.dim, *hidden, n_classes], args.activation, "softmax", args.seed)
    cfg = netcore.TrainConfig(args.epochs, args.lr, min(args.batch_size, len(train)), args.seed)
    model = netcore.train_sgd(model, train.xs, train.ys, cfg)
    model_path = args.output or _out(args, "model.json")
    summary_path = _out(args, "train_summary.json")
    manifest = _manifest(args, "train", {"model": model_path, "summary": summary_path},
                         arch=model.describe(), train_config=asdict(cfg))
    netcore.save_model(model, model_path, manifest)
    summary = {"train": _classification_summary(model, train), "test": _classification_summary(model, test),
               "manifest": manifest}
    _write(summary_path, _dump_json(summary))
    table = "".join(f"{split}: accuracy {s['accuracy']:.4f}  precision {100 * s['precision']:.2f}%  "
                    f"recall {100 * s['recall']:.2f}%  f1 {100 * s['f1']:.2f}%\n"
                    for split, s in (("train", summary["train"]), ("test", summary["test"])))
    _emit(args, table, summary)
    return EXIT_OK


def _sequence_rows(ds, x) -> tuple:
    window, vocab = ds.meta["window"], ds.meta["vocab_size"]
    events = datagen.decode_window(x, vocab)
    active = np.arange(window) * vocab + events
    labels = [f"pos {p}: event {int(e)}" for p, e in enumerate(events)]
    return labels, active


def cmd_explain(args) -> int:
    model = _load_model(args)
    ds = _load_data(args)
    methods = _methods(args.methods, allow_deepaid=True)
    cfg = _attrib_config(args, ds)
    is_seq = ds.meta.get("kind") == "sequence"
    preds = netcore.predict_batch(model, ds.xs)
    index = args.index
    if index is None:
        index = 0
        if "deepaid" in methods:
            wrong = np.flatnonzero(preds != ds.ys)
            if wrong.size == 0:
                raise UsageError("deepaid: every sample is already predicted as its label; nothing to explain")
            index = int(wrong[0])
    if not 0 <= index < len(ds):
        raise UsageError(f"--index {index} out of range [0, {len(ds)})")
    samples = list(range(index, min(len(ds), index + args.count)))

    records, tables, data_out = [], [], {}
    baselines = _shap_baselines(ds, args.seed)
    for i in samples:
        x = ds.xs[i]
        target = args.target_class
        per_method = {}
        for m in methods:
            if m == "deepaid":
                benign = int(ds.ys[i]) if args.benign_class is None else args.benign_class
                mode = "discrete" if is_seq else "continuous"
                cf = counterfactual_explain(model, x, benign, mode, cfg,
                                            vocab_size=ds.meta.get("vocab_size"))
                records.append({"method": "deepaid", "sample": i, "target_class": benign,
                                "original": np.asarray(cf.original).tolist(),
                                "reference": np.asarray(cf.reference).tolist(),
                                "diff_positions": cf.diff_positions, "success": cf.success})
                if is_seq:
                    tables.append(f"sample {i}: DeepAID ({'flipped' if cf.success else 'no flip found'})\n"
                                  + render_counterfactual(cf.original, cf.reference))
                else:
                    rows = [f"{ds.feature_names[j]}: {cf.original[j]:+.4f} != {cf.reference[j]:+.4f}"
                            for j in cf.diff_positions]
                    tables.append(f"sample {i}: DeepAID ({'flipped' if cf.success else 'no flip found'})\n"
                                  + "\n".join(rows) + "\n")
                continue
            a = explain(model, x, m, target, cfg, baselines if m == "gradient_shap" else None)
            rec = a.to_record()
            rec["sample"] = i
            records.append(rec)
            per_method[m] = a
        if per_method:
            if is_seq:
                labels, active = _sequence_rows(ds, x)
                scores = {m: a.scores[active] for m, a in per_method.items()}
                tables.append(f"sample {i}: predicted {int(preds[i])}, label {int(ds.ys[i])}\n"
                              + render_feature_table(scores, labels, "event"))
            else:
                k = min(args.topk, ds.dim)
                ranks = {m: rank_features(a, k) for m, a in per_method.items()}
                tables.append(f"sample {i}: predicted {int(preds[i])}, label {int(ds.ys[i])}\n"
                              + render_ranking_table(ranks, ds.feature_names, k))
    dump_path = _out(args, "attributions.jsonl")
    table_path = _out(args, "explain.txt")
    manifest = _manifest(args, "explain", {"attributions": dump_path, "table": table_path},
                         methods=methods, attrib_config={"baseline": args.baseline, "ig_steps": args.ig_steps,
                                                         "n_samples": args.attr_samples})
    dump_attributions(records, dump_path, manifest)
    table = "\n".join(tables)
    _write(table_path, f"# manifest: {json.dumps(manifest, sort_keys=True)}\n" + table)
    data_out = {"manifest": manifest, "records": records}
    _emit(args, table, data_out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_model(args)
    ds = _load_data(args)
    methods = _methods(args.methods)
    try:
        metrics = [canonical_metric(m) for m in args.metrics.split(",") if m.strip()]
    except XsecError as exc:
        raise UsageError(str(exc)) from None
    if not metrics:
        raise UsageError("no metrics given")
    cfg = _attrib_config(args, ds)
    mcfg = MetricConfig(n_subsets=args.n_subsets, subset_frac=args.subset_frac, ball_radius=args.radius,
                        n_perturb=args.n_perturb, n_randomizations=args.n_randomizations, seed=args.seed)
    _, test = ds.split(args.test_frac, args.seed) if args.test_frac > 0 else (ds, ds)
    pts = test.xs[: args.n_points]
    classes = netcore.predict_batch(model, pts)
    baselines = _shap_baselines(ds, args.seed)
    explainers = {m: make_explainer(m, cfg, baselines if m == "gradient_shap" else None) for m in methods}
    results = evaluate_dataset(model, explainers, pts, classes, metrics, mcfg)
    report = aggregate(results, metrics)
    data_path, table_path = _out(args, "metric_report.json"), _out(args, "metric_report.txt")
    mc = {k: v for k, v in asdict(mcfg).items() if k != "baseline"}
    manifest = _manifest(args, "evaluate", {"report": data_path, "table": table_path},
                         methods=methods, metric_config=mc, n_points=int(len(pts)))
    _write(data_path, report.dumps(manifest))
    table = render_metric_report(report)
    _write(table_path, f"# manifest: {json.dumps(manifest, sort_keys=True)}\n" + table)
    _emit(args, table, json.loads(report.dumps(manifest)))
    return EXIT_OK


def cmd_attack(args) -> int:
    if args.eps < 0:
        raise UsageError("--eps must be non-negative")
    model = _load_model(args)
    ds = _load_data(args)
    alpha = min(args.alpha, args.eps) if args.eps > 0 else args.alpha
    clamp = None if args.no_clamp else (0.0, 1.0)
    cfg = PgdConfig(args.eps, alpha, args.iters, args.random_start, args.seed, clamp)
    adv = pgd_attack_batch(model, ds.xs, ds.ys, cfg)
    out = args.output or _out(args, "adversarial.csv")
    manifest = _manifest(args, "attack", {"adversarial": out}, pgd_config=asdict(cfg))
    adv_ds = datagen.Dataset(adv, ds.ys, ds.feature_names, ds.n_classes)
    datagen.write_csv(adv_ds, out, [json.dumps({"manifest": manifest}, sort_keys=True)])
    flipped = float(np.mean(netcore.predict_batch(model, adv) != ds.ys))
    summary = {"n": len(ds), "epsilon": args.eps, "misclassified_fraction": flipped, "manifest": manifest}
    _emit(args, f"wrote {out}: {len(ds)} samples, {100 * flipped:.2f}% misclassified\n", summary)
    return EXIT_OK


def cmd_detect(args) -> int:
    model = _load_model(args)
    benign = _load_data(args, "data")
    adversarial = _load_data(args, "adversarial")
    method = _methods(args.method)[0]
    explainer = make_explainer(method, _attrib_config(args, benign))
    ben_vals = attribution_statistics(model, explainer, benign.xs, args.statistic)
    adv_vals = attribution_statistics(model, explainer, adversarial.xs, args.statistic)

    calib_f1 = None
    separable = None
    if args.rule:
        with open(_require_file(args.rule, "--rule"), encoding="utf-8") as fh:
            rule = ThresholdRule.loads(fh.read())
        eval_ben, eval_adv = ben_vals, adv_vals
    elif args.threshold == "auto":
        nb = int(np.floor(args.calib_frac * ben_vals.size))
        na = int(np.floor(args.calib_frac * adv_vals.size))
        if nb == 0 or na == 0:
            raise UsageError("empty calibration split; increase --calib-frac or the sample counts")
        cal: Calibration = calibrate(ben_vals[:nb], adv_vals[:na], args.statistic)
        rule, calib_f1, separable = cal.rule, cal.f1, cal.separable
        eval_ben = ben_vals[nb:] if nb < ben_vals.size else ben_vals
        eval_adv = adv_vals[na:] if na < adv_vals.size else adv_vals
    else:
        try:
            rule = ThresholdRule(args.statistic, float(args.threshold), args.direction)
        except ValueError:
            raise UsageError(f"--threshold must be 'auto' or a number, got {args.threshold!r}") from None
        eval_ben, eval_adv = ben_vals, adv_vals

    result = evaluate_values(rule, eval_ben, eval_adv)
    paths = {k: _out(args, v) for k, v in (("report", "detector_report.json"), ("histogram", "detector_histogram.csv"),
                                           ("rule", "threshold_rule.json"), ("table", "detector_report.txt"))}
    manifest = _manifest(args, "detect", paths, methods=[method], adversarial_path=args.adversarial,
                         statistic=args.statistic)
    per_sample = [{"statistic": args.statistic, "value": float(v),
                   "verdict": "adversarial" if bool(rule.flags(v)) else "benign", "truth": truth}
                  for vals, truth in ((ben_vals, "benign"), (adv_vals, "adversarial")) for v in vals]
    summary = result.summary()
    if calib_f1 is not None:
        summary.update(calibration_f1=calib_f1, separable=separable)
    doc = {"manifest": manifest, "rule": asdict(rule), "summary": summary, "samples": per_sample}
    _write(paths["report"], _dump_json(doc))
    _write(paths["rule"], rule.dumps(manifest))
    hist = histogram(ben_vals, adv_vals, args.bins)
    _write(paths["histogram"], f"# {json.dumps({'manifest': manifest}, sort_keys=True)}\n"
           "bin_lo,bin_hi,benign,adversarial\n"
           + "".join(f"{lo!r},{hi!r},{b},{a}\n" for lo, hi, b, a in hist))
    table = render_detector_summary(summary, asdict(rule))
    if calib_f1 is not None:
        table += f"calibration F1 {calib_f1:.4f} ({'separable' if separable else 'non-separable'})\n"
    _write(paths["table"], f"# manifest: {json.dumps(manifest, sort_keys=True)}\n" + table
           + render_histogram(hist))
    _emit(args, table, doc)
    return EXIT_OK


def cmd_report(args) -> int:
    path = _require_file(args.input, "--input")
    if path.endswith(".jsonl"):
        records = load_attributions(path)
        methods = sorted({r["method"] for r in records if "scores" in r})
        by_method = {m: np.array(next(r["scores"] for r in records if r["method"] == m)) for m in methods}
        dim = len(next(iter(by_method.values()))) if by_method else 0
        table = render_feature_table(by_method, [f"x{i}" for i in range(dim)])
        _emit(args, table, {"records": records})
        return EXIT_OK
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: not JSON (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: not a report produced by this tool")
    if "metrics" in doc and "methods" in doc:
        table = render_metric_report(MetricReport.from_dict(doc))
    elif "summary" in doc and "rule" in doc:
        table = render_detector_summary(doc["summary"], doc["rule"])
    elif "train" in doc and "test" in doc:
        table = "".join(f"{k}: accuracy {doc[k]['accuracy']:.4f}\n" for k in ("train", "test"))
    else:
        raise UsageError(f"{path}: not a report produced by this tool")
    _emit(args, table, doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--format", choices=("table", "data"), default="table")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="CSV, IDX images (with --labels) or event-sequence file")
    data.add_argument("--labels", help="IDX label file accompanying IDX images")
    data.add_argument("--window", type=int, default=10, help="sequence window length")
    data.add_argument("--vocab", type=int, default=datagen.HDFS_VOCAB_SIZE, help="event vocabulary size")

    attr = argparse.ArgumentParser(add_help=False)
    attr.add_argument("--baseline", choices=("zeros", "train_mean"), default="zeros")
    attr.add_argument("--ig-steps", type=int, default=50)
    attr.add_argument("--attr-samples", type=int, default=None, help="samples for LIME/SHAP/GradientShap")

    p = argparse.ArgumentParser(prog="xsecbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"xsecbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic data set")
    g.add_argument("--kind", choices=("planted", "sequences", "digits"), default="planted")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--dim", type=int, default=20)
    g.add_argument("--relevant", default="0,1,2,3")
    g.add_argument("--vocab", type=int, default=datagen.HDFS_VOCAB_SIZE)
    g.add_argument("--length", type=int, default=24)
    g.add_argument("--anomaly-rate", type=float, default=0.0)
    g.add_argument("--output")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common, data], help="train a dense classifier")
    t.add_argument("--arch", default="32", help="hidden layer widths, e.g. 32,16")
    t.add_argument("--activation", choices=("relu", "tanh", "sigmoid", "identity"), default="tanh")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--test-frac", type=float, default=0.25)
    t.add_argument("--n-classes", type=int, default=None)
    t.add_argument("--output", help="model file path (default: OUT_DIR/model.json)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explain", parents=[common, data, attr], help="attribute predictions to features")
    e.add_argument("--model")
    e.add_argument("--methods", default="gradient,integrated_gradients")
    e.add_argument("--topk", type=int, default=10)
    e.add_argument("--index", type=int, default=None, help="first sample to explain")
    e.add_argument("--count", type=int, default=1)
    e.add_argument("--target-class", type=int, default=None)
    e.add_argument("--benign-class", type=int, default=None, help="DeepAID target (default: sample label)")
    e.set_defaults(func=cmd_explain)

    v = sub.add_parser("evaluate", parents=[common, data, attr], help="score explanation methods")
    v.add_argument("--model")
    v.add_argument("--methods", default=",".join(METHODS))
    v.add_argument("--metrics", default=",".join(METRICS))
    v.add_argument("--n-points", type=int, default=10)
    v.add_argument("--test-frac", type=float, default=0.25)
    v.add_argument("--n-subsets", type=int, default=100)
    v.add_argument("--subset-frac", type=float, default=0.25)
    v.add_argument("--radius", type=float, default=0.1)
    v.add_argument("--n-perturb", type=int, default=50)
    v.add_argument("--n-randomizations", type=int, default=10)
    v.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("attack", parents=[common, data], help="PGD adversarial examples")
    a.add_argument("--model")
    a.add_argument("--eps", type=float, default=0.3)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--iters", type=int, default=20)
    a.add_argument("--random-start", action="store_true")
    a.add_argument("--no-clamp", action="store_true", help="do not clamp to [0, 1]")
    a.add_argument("--output")
    a.set_defaults(func=cmd_attack)

    d = sub.add_parser("detect", parents=[common, data, attr], help="attribution-dispersion detector")
    d.add_argument("--model")
    d.add_argument("--adversarial", help="adversarial data set (same format as --data)")
    d.add_argument("--method", default="gradient")
    d.add_argument("--statistic", choices=("mad", "coeff_iqr"), default="mad")
    d.add_argument("--threshold", default="auto", help="'auto' to calibrate, or a number")
    d.add_argument("--direction", choices=("adversarial_if_less", "adversarial_if_greater"),
                   default="adversarial_if_less")
    d.add_argument("--rule", help="load a saved threshold rule instead of calibrating")
    d.add_argument("--calib-frac", type=float, default=0.5)
    d.add_argument("--bins", type=int, default=20)
    d.set_defaults(func=cmd_detect)

    r = sub.add_parser("report", parents=[common], help="render a saved report")
    r.add_argument("--input")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"xsecbench {args.command}: {exc}\n")
        return EXIT_USAGE
    except (NumericalError, DegenerateError) as exc:
        sys.stderr.write(f"xsecbench {args.command}: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (XsecError, OSError) as exc:
        sys.stderr.write(f"xsecbench {args.command}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
