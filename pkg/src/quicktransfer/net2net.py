"""Function-preserving widen/deepen transforms and the teacher-to-student planner.

Layer indices in this module are 1-based over the hidden layers, as in the
plan JSON format. Node indices inside :class:`RandomMapping` are 0-based.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, PlanError, ShapeError
from .nn import ActivationKind, Layer, Network


@dataclass
class RandomMapping:
    n_old: int
    n_new: int
    mapping: np.ndarray  # length n_new, entries in 0..n_old-1
    repetition: np.ndarray  # length n_old, r_j = |{i : mapping[i] == j}|


def random_mapping(n_old, n_new, seed=0):
    """Identity on the first ``n_old`` nodes, uniform draws for the rest."""
    n_old, n_new = int(n_old), int(n_new)
    if n_old < 1:
        raise PlanError("layer width must be positive")
    if n_new < n_old:
        raise PlanError(f"cannot narrow a layer from {n_old} to {n_new} nodes")
    rng = np.random.default_rng(seed)
    extra = rng.integers(0, n_old, size=n_new - n_old)
    mapping = np.concatenate([np.arange(n_old), extra])
    repetition = np.bincount(mapping, minlength=n_old)
    return RandomMapping(n_old, n_new, mapping, repetition)


def _check_hidden_index(net, index, what):
    n = len(net.hidden)
    if not 1 <= int(index) <= n:
        raise ShapeError(f"{what} {index} out of range 1..{n}")
    return int(index)


def widen(net, layer_index, new_width, noise_eps=0.0, seed=0):
    """Net2WiderNet on hidden layer ``layer_index``.

    New nodes copy the incoming weights and bias of a randomly chosen
    original node; every outgoing weight of node k (original and replicas)
    is divided by the replication count r_k, so the next layer sees the same
    pre-activation.
    """
    l = _check_hidden_index(net, layer_index, "widen layer")
    layer = net.hidden[l - 1]
    if new_width < layer.n_out:
        raise PlanError(f"cannot narrow hidden layer {l} from {layer.n_out} to {new_width}")
    if noise_eps < 0:
        raise ConfigError("noise_eps must be non-negative")
    rm = random_mapping(layer.n_out, new_width, seed)

    w_in = layer.weights[rm.mapping].copy()
    b_in = layer.bias[rm.mapping].copy()
    if noise_eps > 0 and rm.n_new > rm.n_old:
        noise_rng = np.random.default_rng([int(seed), 1])
        w_in[rm.n_old:] += noise_eps * noise_rng.standard_normal(w_in[rm.n_old:].shape)

    nxt = net.hidden[l] if l < len(net.hidden) else net.classifier
    w_out = nxt.weights[:, rm.mapping] / rm.repetition[rm.mapping]

    hidden = [Layer(h.weights.copy(), h.bias.copy(), h.activation) for h in net.hidden]
    clf = Layer(net.classifier.weights.copy(), net.classifier.bias.copy(), ActivationKind.IDENTITY)
    hidden[l - 1] = Layer(w_in, b_in, layer.activation)
    if l < len(hidden):
        hidden[l] = Layer(w_out, nxt.bias.copy(), nxt.activation)
    else:
        clf = Layer(w_out, nxt.bias.copy(), ActivationKind.IDENTITY)
    return Network(net.input_dim, hidden, clf)


def deepen(net, after_layer_index):
    """Net2DeeperNet: insert an identity-initialised layer after hidden layer ``after_layer_index``.

    Exact for relu and identity activations only.
    """
    l = _check_hidden_index(net, after_layer_index, "deepen position")
    src = net.hidden[l - 1]
    new = Layer(np.eye(src.n_out), np.zeros(src.n_out), src.activation)
    hidden = [Layer(h.weights.copy(), h.bias.copy(), h.activation) for h in net.hidden]
    hidden.insert(l, new)
    clf = Layer(net.classifier.weights.copy(), net.classifier.bias.copy(), ActivationKind.IDENTITY)
    return Network(net.input_dim, hidden, clf)


# -- planning ----------------------------------------------------------------


@dataclass(frozen=True)
class Widen:
    layer: int
    width: int

    def to_dict(self):
        return {"op": "widen", "layer": self.layer, "width": self.width}


@dataclass(frozen=True)
class Deepen:
    after: int

    def to_dict(self):
        return {"op": "deepen", "after": self.after}


@dataclass
class TransformPlan:
    steps: list = field(default_factory=list)

    def to_dict(self):
        return {"steps": [s.to_dict() for s in self.steps]}

    def dumps(self):
        return json.dumps(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, doc):
        steps = []
        try:
            for i, s in enumerate(doc["steps"]):
                if s["op"] == "widen":
                    steps.append(Widen(int(s["layer"]), int(s["width"])))
                elif s["op"] == "deepen":
                    steps.append(Deepen(int(s["after"])))
                else:
                    raise PlanError(f"step {i}: unknown op {s['op']!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanError(f"malformed plan document: {exc}") from exc
        return cls(steps)

    @classmethod
    def loads(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed plan file at offset {exc.pos}: {exc.msg}") from exc
        return cls.from_dict(doc)

    def apply_arch(self, hidden_arch):
        arch = list(hidden_arch)
        for s in self.steps:
            if isinstance(s, Deepen):
                if not 1 <= s.after <= len(arch):
                    raise PlanError(f"deepen position {s.after} out of range")
                arch.insert(s.after, arch[s.after - 1])
            else:
                if not 1 <= s.layer <= len(arch):
                    raise PlanError(f"widen layer {s.layer} out of range")
                if s.width < arch[s.layer - 1]:
                    raise PlanError(f"widen of layer {s.layer} would narrow it")
                arch[s.layer - 1] = s.width
        return arch


def apply_plan(net, plan, noise_eps=0.0, seed=0):
    for i, step in enumerate(plan.steps):
        if isinstance(step, Deepen):
            net = deepen(net, step.after)
        else:
            net = widen(net, step.layer, step.width, noise_eps=noise_eps, seed=seed + i)
    return net


def plan_transform(teacher_arch, student_arch):
    """Plan deepen-then-widen steps turning ``teacher_arch`` into ``student_arch``.

    Both are hidden-width lists. Teacher layers are aligned in order onto
    student positions no narrower than them; every unaligned student
    position is a deepened copy of the layer before it. Among feasible
    alignments the one needing the fewest widen steps is chosen (ties go
    to the smallest total width increase, then to the earliest alignment).
    """
    T = [int(w) for w in teacher_arch]
    S = [int(w) for w in student_arch]
    if not T or any(w < 1 for w in T + S):
        raise PlanError("architectures must be non-empty lists of positive widths")
    if len(S) < len(T):
        raise PlanError(
            f"student has {len(S)} hidden layers, fewer than the teacher's {len(T)} "
            f"(first infeasible position {len(S) + 1})"
        )
    nT, nS = len(T), len(S)
    INF = (float("inf"), float("inf"))

    def cost(base, p):
        return (0, 0) if S[p] == base else (1, S[p] - base)

    # best[p][t]: cheapest way to realise student positions 0..p with teacher
    # layer t the most recent aligned one.
    best = [[INF] * nT for _ in range(nS)]
    back = [[None] * nT for _ in range(nS)]
    if S[0] >= T[0]:
        best[0][0] = cost(T[0], 0)
    else:
        raise PlanError(f"student architecture {S} unreachable from {T}: first infeasible position 1")
    for p in range(1, nS):
        for t in range(nT):
            if nT - 1 - t > nS - 1 - p:
                continue  # not enough positions left for the remaining teacher layers
            cands = []
            # p is a deepened copy of the previous position
            if best[p - 1][t] != INF and S[p] >= T[t]:
                c = cost(T[t], p)
                cands.append(((best[p - 1][t][0] + c[0], best[p - 1][t][1] + c[1]), 1, (t, False)))
            # p is aligned to teacher layer t
            if t > 0 and best[p - 1][t - 1] != INF and S[p] >= T[t]:
                c = cost(T[t], p)
                prev = best[p - 1][t - 1]
                cands.append(((prev[0] + c[0], prev[1] + c[1]), 0, (t - 1, True)))
            if cands:
                cands.sort(key=lambda x: (x[0], x[1]))
                best[p][t] = cands[0][0]
                back[p][t] = cands[0][2]
        if all(v == INF for v in best[p]):
            raise PlanError(f"student architecture {S} unreachable from {T}: "
                            f"first infeasible position {p + 1}")
    if best[nS - 1][nT - 1] == INF:
        raise PlanError(f"student architecture {S} unreachable from {T}: "
                        f"first infeasible position {nS}")

    aligned = [False] * nS
    base = [0] * nS
    t = nT - 1
    for p in range(nS - 1, -1, -1):
        base[p] = T[t]
        if p == 0:
            aligned[p] = True
            break
        prev_t, is_aligned = back[p][t]
        aligned[p] = is_aligned
        t = prev_t

    steps = [Deepen(after=p) for p in range(1, nS) if not aligned[p]]
    steps += [Widen(layer=p + 1, width=S[p]) for p in range(nS) if S[p] != base[p]]
    plan = TransformPlan(steps)
    assert plan.apply_arch(T) == S
    return plan
