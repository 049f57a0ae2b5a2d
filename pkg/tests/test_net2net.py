import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quicktransfer.errors import ParseError, PlanError, ShapeError
from quicktransfer.net2net import (
    Deepen,
    TransformPlan,
    Widen,
    apply_plan,
    deepen,
    plan_transform,
    random_mapping,
    widen,
)
from quicktransfer.nn import Layer, Network, forward, init_random


def max_out_diff(a, b, n=100, seed=0):
    X = np.random.default_rng(seed).uniform(0, 1, size=(n, a.input_dim))
    return np.max(np.abs(forward(a, X).probabilities - forward(b, X).probabilities))


class TestRandomMapping:
    def test_same_width_is_identity(self):
        rm = random_mapping(3, 3, seed=4)
        assert rm.mapping.tolist() == [0, 1, 2]
        assert rm.repetition.tolist() == [1, 1, 1]

    @pytest.mark.parametrize("seed", range(10))
    def test_identity_prefix(self, seed):
        rm = random_mapping(2, 4, seed=seed)
        assert rm.mapping[:2].tolist() == [0, 1]
        assert set(rm.mapping[2:].tolist()) <= {0, 1}
        assert rm.repetition.sum() == 4

    def test_uniform_draws(self):
        rm = random_mapping(2, 1002, seed=0)
        freq = np.mean(rm.mapping[2:] == 0)
        assert 0.45 <= freq <= 0.55

    def test_narrowing_rejected(self):
        with pytest.raises(PlanError):
            random_mapping(4, 3)


class TestWiden:
    def test_two_input_example(self):
        # one hidden node with incoming (0.3, -0.5) and outgoing 0.8, widened by one
        net = Network(2, [Layer([[0.3, -0.5]], [0.0], "sigmoid")], Layer([[0.8]], [0.1]))
        wide = widen(net, 1, 2, seed=0)
        np.testing.assert_array_equal(wide.hidden[0].weights, [[0.3, -0.5], [0.3, -0.5]])
        np.testing.assert_array_equal(wide.classifier.weights, [[0.4, 0.4]])

    def test_70_30_20_preserves(self):
        teacher = init_random([100, 70, 30, 20, 4], seed=1)
        student = widen(teacher, 1, 50 + 20 + 30, seed=3)
        assert student.hidden_arch == [100, 30, 20]
        assert max_out_diff(teacher, student) <= 1e-10

    def test_hidden_widths_70_to_50(self):
        teacher = init_random([100, 30, 20, 4], seed=1)
        student = widen(teacher, 1, 50, seed=2)
        assert student.hidden_arch == [50, 20]
        assert max_out_diff(teacher, student) <= 1e-10

    def test_equal_width_unchanged(self):
        net = init_random([6, 5, 4, 3], seed=0)
        assert widen(net, 2, 4, seed=9) == net

    def test_last_layer_splits_classifier(self):
        net = init_random([5, 4, 3], activation="relu", seed=0)
        wide = widen(net, 1, 7, seed=1)
        assert wide.classifier.weights.shape == (3, 7)
        assert max_out_diff(net, wide) <= 1e-10

    def test_errors(self):
        net = init_random([5, 4, 3], seed=0)
        with pytest.raises(PlanError):
            widen(net, 1, 3)
        with pytest.raises(ShapeError):
            widen(net, 2, 6)

    def test_noise_breaks_symmetry_only_on_replicas(self):
        net = init_random([5, 4, 3], seed=0)
        wide = widen(net, 1, 6, noise_eps=0.01, seed=2)
        np.testing.assert_array_equal(wide.hidden[0].weights[:4], net.hidden[0].weights)
        assert max_out_diff(net, wide) > 0

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.integers(1, 16), min_size=1, max_size=4),
        st.sampled_from(["sigmoid", "relu"]),
        st.data(),
    )
    def test_preservation_property(self, hidden, act, data):
        arch = [20] + hidden + [4]
        net = init_random(arch, activation=act, seed=data.draw(st.integers(0, 1000)))
        layer = data.draw(st.integers(1, len(hidden)))
        width = hidden[layer - 1] + data.draw(st.integers(0, 8))
        wide = widen(net, layer, width, seed=data.draw(st.integers(0, 1000)))
        assert max_out_diff(net, wide) <= 1e-10
        # a second step composes without loss
        layer2 = data.draw(st.integers(1, len(hidden)))
        wider = widen(wide, layer2, wide.hidden_arch[layer2 - 1] + 3, seed=7)
        assert max_out_diff(net, wider) <= 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 10), st.integers(0, 10_000))
    def test_mass_conservation(self, n_old, extra, seed):
        net = init_random([3, n_old, 5, 2], seed=seed)
        layer = net.hidden[0]
        rm = random_mapping(n_old, n_old + extra, seed)
        wide = widen(net, 1, n_old + extra, seed=seed)
        w_out = wide.hidden[1].weights
        for j in range(n_old):
            cols = np.flatnonzero(rm.mapping == j)
            np.testing.assert_allclose(w_out[:, cols].sum(axis=1), net.hidden[1].weights[:, j],
                                       rtol=1e-12, atol=1e-15)
            for c in cols:
                np.testing.assert_array_equal(wide.hidden[0].weights[c], layer.weights[j])


class TestDeepen:
    def test_relu_exact(self):
        net = init_random([8, 6, 4], activation="relu", seed=3)
        deep = deepen(net, 1)
        assert deep.arch == [8, 6, 6, 4]
        assert max_out_diff(net, deep) <= 1e-12

    def test_sigmoid_shape_only(self):
        net = init_random([8, 6, 4], activation="sigmoid", seed=3)
        deep = deepen(net, 1)
        assert deep.arch == [8, 6, 6, 4]
        assert deep.hidden[1].activation == net.hidden[0].activation
        assert max_out_diff(net, deep) > 0

    def test_out_of_range(self):
        with pytest.raises(ShapeError):
            deepen(init_random([4, 3, 2], seed=0), 2)


class TestPlan:
    def test_reference_jump(self):
        plan = plan_transform([70, 30, 20], [70, 50, 30, 20])
        assert plan.steps == [Deepen(after=2), Widen(layer=2, width=50)]
        assert plan.apply_arch([70, 30, 20]) == [70, 50, 30, 20]

    def test_json_layout(self):
        plan = plan_transform([70, 30, 20], [70, 50, 30, 20])
        assert json.loads(plan.dumps()) == {
            "steps": [{"op": "deepen", "after": 2}, {"op": "widen", "layer": 2, "width": 50}]
        }
        assert TransformPlan.loads(plan.dumps()) == plan

    def test_identical_is_empty(self):
        assert plan_transform([5, 4], [5, 4]).steps == []

    def test_shallower_rejected(self):
        with pytest.raises(PlanError, match="first infeasible position"):
            plan_transform([70, 30, 20], [70, 20])

    def test_too_narrow_rejected(self):
        with pytest.raises(PlanError, match="first infeasible position 1"):
            plan_transform([70, 30], [60, 30])

    def test_bad_documents(self):
        with pytest.raises(ParseError):
            TransformPlan.loads("{")
        with pytest.raises(PlanError):
            TransformPlan.from_dict({"steps": [{"op": "twist"}]})

    def test_apply_plan_relu_preserves(self):
        teacher = init_random([40, 30, 20, 4], activation="relu", seed=0)
        plan = plan_transform([30, 20], [30, 35, 20, 26])
        student = apply_plan(teacher, plan, seed=5)
        assert student.hidden_arch == [30, 35, 20, 26]
        assert max_out_diff(teacher, student) <= 1e-10

    @settings(max_examples=1000, deadline=None)
    @given(st.data())
    def test_soundness(self, data):
        teacher = data.draw(st.lists(st.integers(1, 40), min_size=1, max_size=5))
        # build a feasible student: copy layers forward, then widen anywhere
        student = []
        for w in teacher:
            student.append(w)
            student += [w] * data.draw(st.integers(0, 2))
        student = [w + data.draw(st.integers(0, 10)) for w in student]
        plan = plan_transform(teacher, student)
        assert plan.apply_arch(teacher) == student
        ops = [type(s) for s in plan.steps]
        assert ops == sorted(ops, key=lambda t: t is Widen)
