"""Joint fine-tuning of a student network: source cross-entropy + lambda * class-wise MMD^2."""

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ConvergenceError, DataError, NumericError
from .mmd import KernelSpec, classwise_mmd2, classwise_mmd2_grad, median_bandwidth
from .nn import Gradients, apply_step, backward, forward
from .sae import ce_dlogits, check_labels

ETA_FLOOR = 1e-12
LR_RULES = ("bold_driver", "fixed")


@dataclass
class AdaptConfig:
    lambda_mmd: float = 1.0
    iterations: int = 50
    eta0: float = 0.5
    lr_rule: str = "bold_driver"
    kernel: KernelSpec = None  # None: median heuristic on the initial h-features
    seed: int = 0

    def __post_init__(self):
        if self.lambda_mmd < 0:
            raise ConfigError("lambda_mmd must be non-negative")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError("iterations must be a positive integer")
        self.iterations = int(self.iterations)
        if not self.eta0 > 0:
            raise ConfigError("eta0 must be positive")
        if self.lr_rule not in LR_RULES:
            raise ConfigError(f"lr_rule must be one of {LR_RULES}, got {self.lr_rule!r}")
        if isinstance(self.kernel, dict):
            self.kernel = KernelSpec(**self.kernel)


@dataclass
class AdaptReport:
    lambda_mmd: float
    kernel: KernelSpec
    initial: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    metrics: dict = None

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "loss_total", "loss_class", "loss_mmd", "eta"])
        for r in self.records:
            w.writerow([r["iter"], repr(r["loss_total"]), repr(r["loss_class"]),
                        repr(r["loss_mmd"]), repr(r["eta"])])
        return buf.getvalue()

    def to_dict(self):
        return {
            "lambda_mmd": self.lambda_mmd,
            "kernel": self.kernel.to_dict() if self.kernel else None,
            "initial": self.initial,
            "final": self.records[-1] if self.records else None,
            "metrics": self.metrics,
        }


def cross_entropy_loss(trace, y):
    """Mean of -log p(true class), probabilities floored at 1e-12."""
    p = trace.probabilities
    y = check_labels(y, p.shape[1])
    return float(np.mean(-np.log(np.maximum(p[np.arange(y.size), y], 1e-12))))


def resolve_kernel(net, Xs, Xt, cfg):
    if cfg.kernel is not None:
        return cfg.kernel
    fs = forward(net, Xs).features
    ft = forward(net, Xt).features
    return KernelSpec("rbf", median_bandwidth(fs, ft))


def _prepare(net, ys, yt):
    C = net.n_classes
    return check_labels(ys, C), check_labels(yt, C), C


def joint_loss(net, Xs, ys, Xt, yt, cfg):
    """Return ``(total, class_term, mmd_term)``.

    The class term uses the source batch only; the MMD term compares
    same-class h-level features of both domains. With ``cfg.kernel`` unset
    the bandwidth is the median heuristic at the current parameters.
    """
    ys, yt, C = _prepare(net, ys, yt)
    k = resolve_kernel(net, Xs, Xt, cfg)
    ts = forward(net, Xs)
    tt = forward(net, Xt)
    class_term = cross_entropy_loss(ts, ys)
    mmd_term = classwise_mmd2(ts.features, ys, tt.features, yt, C, k)
    return class_term + cfg.lambda_mmd * mmd_term, class_term, mmd_term


def _joint(net, Xs, ys, Xt, yt, cfg, k):
    ys, yt, C = _prepare(net, ys, yt)
    ts = forward(net, Xs)
    tt = forward(net, Xt)
    class_term = cross_entropy_loss(ts, ys)
    mmd_term, gfs, gft = classwise_mmd2_grad(ts.features, ys, tt.features, yt, C, k)
    lam = cfg.lambda_mmd
    # the classifier only receives the cross-entropy gradient
    gs = backward(net, ts, d_logits=ce_dlogits(ts.probabilities, ys), d_features=lam * gfs)
    gt = backward(net, tt, d_features=lam * gft)
    grads = Gradients([(a + c, b + d) for (a, b), (c, d) in zip(gs.hidden, gt.hidden)],
                      gs.classifier)
    for i, (dw, db) in enumerate(grads.pairs(), start=1):
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            where = "classifier" if i > len(grads.hidden) else f"hidden layer {i}"
            raise NumericError(f"non-finite gradient in {where}")
    return (class_term + lam * mmd_term, class_term, mmd_term), grads


def joint_grad(net, Xs, ys, Xt, yt, cfg):
    """Gradient of the joint loss.

    Feature-extractor layers get dJc + lambda * dJmmd (MMD backpropagated
    through both domains); the classifier gets dJc alone.
    """
    k = resolve_kernel(net, Xs, Xt, cfg)
    return _joint(net, Xs, ys, Xt, yt, cfg, k)[1]


def _record(it, losses, eta):
    total, cls, mmd = losses
    return {"iter": it, "loss_total": float(total), "loss_class": float(cls),
            "loss_mmd": float(mmd), "eta": float(eta)}


def fine_tune(net, Xs, ys, Xt, yt, cfg):
    """Full-batch gradient descent on the joint loss for ``cfg.iterations`` steps.

    With the bold-driver rule, eta grows by 1.05 after a step that lowers
    the total loss; a step that raises it is retried once at half the rate,
    and if that also fails the parameters stay put and eta is halved again.
    An auto-median kernel is resolved once, on the initial features, and
    held fixed for the whole run.

    Records hold the losses after each iteration and the eta that produced
    them; ``report.initial`` holds the losses before the first step.
    """
    Xs, Xt = np.asarray(Xs, dtype=float), np.asarray(Xt, dtype=float)
    k = resolve_kernel(net, Xs, Xt, cfg)
    cfg = replace(cfg, kernel=k)
    report = AdaptReport(cfg.lambda_mmd, k)
    losses, grads = _joint(net, Xs, ys, Xt, yt, cfg, k)
    report.initial = {key: v for key, v in _record(0, losses, cfg.eta0).items() if key != "iter"}
    eta = cfg.eta0
    for it in range(1, cfg.iterations + 1):
        if cfg.lr_rule == "fixed":
            net = apply_step(net, grads, eta)
            losses, grads = _joint(net, Xs, ys, Xt, yt, cfg, k)
            report.records.append(_record(it, losses, eta))
            continue
        accepted = False
        for _attempt in range(2):
            cand = apply_step(net, grads, eta)
            cand_losses, cand_grads = _joint(cand, Xs, ys, Xt, yt, cfg, k)
            if cand_losses[0] < losses[0]:
                net, losses, grads = cand, cand_losses, cand_grads
                report.records.append(_record(it, losses, eta))
                eta *= 1.05
                accepted = True
                break
            eta *= 0.5
            if eta < ETA_FLOOR:
                raise ConvergenceError(f"learning rate underflow at iteration {it}", report)
        if not accepted:
            report.records.append(_record(it, losses, eta))
    return net, report


def evaluate(net, X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot evaluate on an empty dataset")
    C = net.n_classes
    y = check_labels(y, C)
    pred = np.argmax(forward(net, X).probabilities, axis=1)
    conf = np.zeros((C, C), dtype=int)
    np.add.at(conf, (y, pred), 1)
    counts = conf.sum(axis=1)
    per_class = [float(conf[c, c] / counts[c]) if counts[c] else None for c in range(C)]
    return {
        "accuracy": float(np.mean(pred == y)),
        "per_class_accuracy": per_class,
        "confusion": conf.tolist(),
        "n_samples": int(y.size),
    }


def dumps_metrics(metrics):
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"
