"""Command-line driver: synth, train-teacher, transform, adapt, evaluate.

Exit codes: 2 config/data, 3 plan, 4 class coverage, 5 shape mismatch.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import adapt, data, pipeline
from .errors import ConfigError, CoverageError, DataError, QuickTransferError, ShapeError
from .net2net import TransformPlan
from .nn import atomic_write, dumps_model, load_model

log = logging.getLogger("quicktransfer")


def _widths(text):
    try:
        return [int(w) for w in text.replace("-", ",").split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated widths, got {text!r}") from None


def _require_file(path, what):
    if path is None:
        raise ConfigError(f"no {what} given")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _load_config(args):
    override = pipeline.load_json(_require_file(args.config, "config file")) if args.config else {}
    cfg = pipeline.build_config(args.preset, override)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _class_map(cfg):
    path = cfg["data"]["class_map"]
    return data.load_class_map(_require_file(path, "class map")) if path else None


def _load_set(cfg, path, what):
    _require_file(path, what)
    ts = data.load_samples_csv(path, _class_map(cfg), cfg["data"]["segment_length"])
    if len(ts) == 0:
        raise DataError(f"{what} {path} holds no samples")
    return ts


def _prepare_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------


def cmd_synth(args):
    cfg = _load_config(args)
    for key in ("C", "d", "n_source", "n_target", "n_target_test", "shift", "noise"):
        value = getattr(args, key)
        if value is not None:
            cfg["synth"][key] = value
    spec = data.SynthSpec(**cfg["synth"])
    pair = data.synth_domains(spec, cfg["seed"])
    out = _prepare_out(args.out_dir)
    for name, ts in (("source", pair.source), ("target_train", pair.target_train),
                     ("target_test", pair.target_test)):
        atomic_write(os.path.join(out, f"{name}.csv"), data.samples_csv_text(ts))
    print(f"wrote source/target_train/target_test CSVs to {out}")
    return 0


def cmd_train_teacher(args):
    cfg = _load_config(args)
    if args.source:
        cfg["data"]["source"] = args.source
    if args.arch:
        cfg["teacher"]["arch"] = args.arch
    if args.ft_epochs is not None:
        cfg["teacher"]["ft_epochs"] = args.ft_epochs
    pipeline.sae_params(cfg)
    source = data.minmax_normalize(_load_set(cfg, cfg["data"]["source"], "source data"))

    rows = []
    teacher = pipeline.train_teacher(cfg, source, rows)
    acc = adapt.evaluate(teacher, source.X, source.y)["accuracy"]

    out = _prepare_out(args.out_dir)
    atomic_write(os.path.join(out, "teacher.json"), dumps_model(teacher))
    atomic_write(os.path.join(out, "source_norm.json"), data.dumps_norm_params(source.normalization))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "layer", "epoch", "loss"])
    for stage, layer, epoch, loss in rows:
        w.writerow([stage, layer, epoch, repr(float(loss))])
    atomic_write(os.path.join(out, "teacher_log.csv"), buf.getvalue())
    if not args.no_figures:
        from .plotting import plot_teacher_log
        plot_teacher_log(rows, os.path.join(out, "teacher_log.png"))
    print(f"teacher arch {teacher.arch}; final training accuracy {acc:.4f}")
    return 0


def cmd_transform(args):
    cfg = _load_config(args)
    if args.student_arch:
        cfg["transform"]["student_arch"] = args.student_arch
    if args.noise_eps is not None:
        cfg["transform"]["noise_eps"] = args.noise_eps
    teacher = load_model(_require_file(args.teacher, "teacher model"))
    plan = None
    if args.plan:
        with open(_require_file(args.plan, "plan file"), encoding="utf-8") as fh:
            plan = TransformPlan.loads(fh.read())
        plan.apply_arch(teacher.hidden_arch)
    student, plan, dev = pipeline.transform(cfg, teacher, plan)

    out = _prepare_out(args.out_dir)
    atomic_write(os.path.join(out, "plan.json"), plan.dumps())
    atomic_write(os.path.join(out, "student.json"), dumps_model(student))
    print(f"student arch {student.arch}; max output deviation on "
          f"{cfg['transform']['probes']} probes: {dev:.3e}")
    return 0


def cmd_adapt(args):
    cfg = _load_config(args)
    d = cfg["data"]
    for key in ("source", "target_train", "target_test"):
        if getattr(args, key):
            d[key] = getattr(args, key)
    if args.label_fraction is not None:
        d["label_fraction"] = args.label_fraction
    for key in ("lambda_mmd", "iterations", "eta0", "lr_rule"):
        if getattr(args, key) is not None:
            cfg["adapt"][key] = getattr(args, key)
    pipeline.adapt_config(cfg)
    student = load_model(_require_file(args.student, "student model"))
    source = _load_set(cfg, d["source"], "source data")
    target_train = _load_set(cfg, d["target_train"], "target train data")
    target_test = (_load_set(cfg, d["target_test"], "target test data")
                   if d["target_test"] else target_train)
    C = student.n_classes
    pair = data.DomainPair(source, target_train, target_test, C)
    if pair.source.dim != student.input_dim:
        raise ShapeError(f"data has {pair.source.dim} features but the model expects "
                         f"{student.input_dim}")
    pair = pipeline.prepare_pair(pair, float(d["label_fraction"]), cfg["seed"])
    outcome = pipeline.run_adapt(cfg, student, pair, ablate=args.ablate)

    out = _prepare_out(args.out_dir)
    atomic_write(os.path.join(out, "adapted.json"), dumps_model(outcome.net))
    atomic_write(os.path.join(out, "target_norm.json"),
                 data.dumps_norm_params(pair.target_train.normalization))
    atomic_write(os.path.join(out, "report.csv"), outcome.report.csv_text())
    if args.ablate:
        base_report = outcome.ablation["without_da"][1]
        atomic_write(os.path.join(out, "report_without_da.csv"), base_report.csv_text())
        doc = {"without_da": base_report.to_dict(), "with_da": outcome.report.to_dict()}
    else:
        doc = outcome.report.to_dict()
    _write_json(os.path.join(out, "report.json"), doc)
    if not args.no_figures:
        from .plotting import plot_adapt_reports, plot_confusion
        reports = {"with D.A.": outcome.report}
        if args.ablate:
            reports = {"without D.A.": outcome.ablation["without_da"][1], **reports}
        plot_adapt_reports(reports, os.path.join(out, "report.png"))
        plot_confusion(outcome.metrics["confusion"], os.path.join(out, "confusion.png"))
    if args.ablate:
        print(f"target test accuracy without D.A. {doc['without_da']['metrics']['accuracy']:.4f}, "
              f"with D.A. {doc['with_da']['metrics']['accuracy']:.4f}")
    else:
        print(f"target test accuracy {outcome.metrics['accuracy']:.4f}")
    return 0


def cmd_evaluate(args):
    cfg = _load_config(args)
    net = load_model(_require_file(args.model, "model file"))
    ts = _load_set(cfg, args.data, "dataset")
    if ts.dim != net.input_dim:
        raise ShapeError(f"dataset has {ts.dim} features but the model expects {net.input_dim}")
    if args.norm_params:
        with open(_require_file(args.norm_params, "normalisation file"), encoding="utf-8") as fh:
            params = data.loads_norm_params(fh.read())
        if params[0].shape[0] != ts.dim:
            raise ShapeError("normalisation parameters do not match the feature dimension")
        ts = data.apply_normalization(ts, params)
    elif not args.raw:
        ts = data.minmax_normalize(ts)

    metrics = adapt.evaluate(net, ts.X, ts.y)
    if args.cv:
        folds = data.kfold_split(len(ts), args.cv, cfg["seed"])
        accs = [adapt.evaluate(net, ts.X[te], ts.y[te])["accuracy"] for _, te in folds]
        metrics["cv"] = {
            "folds": args.cv,
            "fold_accuracy": accs,
            "mean": float(np.mean(accs)),
            "std": float(np.std(accs, ddof=1)),
        }
    text = adapt.dumps_metrics(metrics)
    if args.out:
        parent = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(parent, exist_ok=True)
        atomic_write(args.out, text)
        if args.figure:
            from .plotting import plot_confusion
            plot_confusion(metrics["confusion"], os.path.splitext(args.out)[0] + "_confusion.png")
    sys.stdout.write(text)
    return 0


# -- parser ------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="quicktransfer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--preset", default="reference", choices=sorted(pipeline.PRESETS))
        sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("synth", help="write synthetic source/target CSVs"))
    sp.add_argument("--out-dir", required=True)
    for name, typ in (("C", int), ("d", int), ("n_source", int), ("n_target", int),
                      ("n_target_test", int), ("shift", float), ("noise", float)):
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    sp.set_defaults(func=cmd_synth)

    sp = common(sub.add_parser("train-teacher", help="pretrain and fine-tune the teacher"))
    sp.add_argument("--source")
    sp.add_argument("--arch", type=_widths, help="hidden widths, e.g. 70,30,20")
    sp.add_argument("--ft-epochs", type=int)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_train_teacher)

    sp = common(sub.add_parser("transform", help="widen/deepen a teacher into a student"))
    sp.add_argument("--teacher", required=True)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--student-arch", type=_widths)
    g.add_argument("--plan")
    sp.add_argument("--noise-eps", type=float)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_transform)

    sp = common(sub.add_parser("adapt", help="fine-tune with class-wise MMD"))
    sp.add_argument("--student", required=True)
    sp.add_argument("--source")
    sp.add_argument("--target-train")
    sp.add_argument("--target-test")
    sp.add_argument("--label-fraction", type=float)
    sp.add_argument("--lambda-mmd", type=float)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--eta0", type=float)
    sp.add_argument("--lr-rule", choices=adapt.LR_RULES)
    sp.add_argument("--ablate", action="store_true", help="also run without the MMD term")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_adapt)

    sp = common(sub.add_parser("evaluate", help="accuracy and confusion matrix of a model"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--norm-params")
    sp.add_argument("--raw", action="store_true", help="skip min-max scaling")
    sp.add_argument("--cv", type=int)
    sp.add_argument("--out")
    sp.add_argument("--figure", action="store_true")
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CoverageError as exc:
        print(f"error: {exc}; missing classes {exc.missing}", file=sys.stderr)
        return exc.exit_code
    except QuickTransferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
