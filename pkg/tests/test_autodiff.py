import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sac.autodiff import (
    GradientReport,
    Tensor,
    affine,
    avg_pool2d,
    conv2d,
    cross_entropy,
    embedding_lookup,
    grad_check,
    matmul,
    relu,
    relative_error,
    sigmoid,
    softmax,
    take_rows,
    tanh,
)


class TestAffine:
    def test_identity_map(self):
        y = affine(Tensor([1.0, 2.0]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(y.data, [1.0, 2.0])

    def test_direct_arithmetic(self):
        y = affine(Tensor([1.0, 1.0]), Tensor([[2.0, 3.0]]), Tensor([-5.0]))
        np.testing.assert_array_equal(y.data, [0.0])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(3,\).*\(2, 2\)"):
            affine(Tensor([1.0, 2.0, 3.0]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))

    def test_gradients_vs_central_differences(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(4)
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(3)
        proj = rng.standard_normal(3)  # fixed projection to a scalar

        for pick, f in [
            ("x", lambda t: matmul(Tensor(proj), affine(t, Tensor(w), Tensor(b)))),
            ("w", lambda t: matmul(Tensor(proj), affine(Tensor(x), t, Tensor(b)))),
            ("b", lambda t: matmul(Tensor(proj), affine(Tensor(x), Tensor(w), t))),
        ]:
            rep = grad_check(f, Tensor({"x": x, "w": w, "b": b}[pick]), eps=1e-5)
            assert rep.max_rel_err < 1e-4, f"d/d{pick}: {rep}"


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_large_inputs_do_not_overflow(self):
        out = softmax(Tensor([1000.0, 1000.0])).data
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_direct_arithmetic(self):
        out = softmax(Tensor([math.log(1.0), math.log(3.0)])).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)

    def test_empty_input_fails(self):
        with pytest.raises(ValueError):
            softmax(Tensor(np.zeros(0)))

    @given(st.lists(st.floats(-300, 300), min_size=1, max_size=20))
    def test_is_probability_vector(self, vals):
        out = softmax(Tensor(np.array(vals))).data
        assert np.all(out > 0) and np.all(out <= 1)
        assert abs(out.sum() - 1.0) < 1e-9

    @given(
        st.lists(st.floats(-50, 50), min_size=2, max_size=10),
        st.floats(-100, 100),
    )
    def test_shift_invariance(self, vals, c):
        v = np.array(vals)
        np.testing.assert_allclose(
            softmax(Tensor(v)).data, softmax(Tensor(v + c)).data, atol=1e-12
        )


class TestCrossEntropy:
    def test_near_certain_correct(self):
        assert cross_entropy(Tensor([10.0, -10.0]), 0).item() < 1e-4

    def test_uniform_case(self):
        assert abs(cross_entropy(Tensor([0.0, 0.0]), 1).item() - math.log(2)) < 1e-12

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor([0.0, 0.0]), 2)
        with pytest.raises(ValueError):
            cross_entropy(Tensor([0.0, 0.0]), -1)

    def test_gradient_vs_central_differences(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal(5)
        rep = grad_check(lambda t: cross_entropy(t, 2), Tensor(logits), eps=1e-5)
        assert rep.max_rel_err < 1e-4, str(rep)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            logits = rng.standard_normal(6) * 5
            assert cross_entropy(Tensor(logits), int(rng.integers(6))).item() >= 0

    def test_batched_mean_matches_single(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((4, 5))
        targets = np.array([0, 3, 2, 1])
        singles = [cross_entropy(Tensor(logits[i]), int(targets[i])).item() for i in range(4)]
        batched = cross_entropy(Tensor(logits), targets).item()
        assert abs(batched - np.mean(singles)) < 1e-12


class TestGradCheck:
    def test_closed_form_quadratic(self):
        rep = grad_check(lambda t: (t * t).sum(), Tensor([1.0, 2.0]))
        assert rep.max_rel_err < 1e-6
        probe = Tensor([1.0, 2.0], requires_grad=True)
        (probe * probe).sum().backward()
        np.testing.assert_allclose(probe.grad, [2.0, 4.0])

    def test_constant_function(self):
        rep = grad_check(lambda t: (t * 0.0).sum(), Tensor([3.0, -1.0, 2.0]))
        assert rep.max_rel_err == 0.0

    def test_composition_cross_entropy_affine(self):
        rng = np.random.default_rng(11)
        w = rng.standard_normal((4, 6))
        b = rng.standard_normal(4)
        x = rng.standard_normal(6)
        for probe, f in [
            (x, lambda t: cross_entropy(affine(t, Tensor(w), Tensor(b)), 1)),
            (w, lambda t: cross_entropy(affine(Tensor(x), t, Tensor(b)), 1)),
        ]:
            rep = grad_check(f, Tensor(probe), eps=1e-5)
            assert rep.max_rel_err < 1e-4, str(rep)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: t.sum(), Tensor([1.0]), eps=0.0)

    def test_report_invariant(self):
        rep = GradientReport(
            max_rel_err=relative_error(2.0, 2.0002), worst_index=0, analytic=2.0, numeric=2.0002
        )
        assert rep.max_rel_err == abs(rep.analytic - rep.numeric) / max(
            abs(rep.analytic), abs(rep.numeric), 1e-8
        )


# Twenty seeded instances per primitive, as the module-level gradient contract.
PRIMITIVES = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_20_seeds(name):
    op = PRIMITIVES[name]
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(7)
        if name == "relu":
            x = x + np.sign(x) * 0.01  # keep clear of the kink at 0
        proj = Tensor(rng.standard_normal(7))
        rep = grad_check(lambda t: (op(t) * proj).sum(), Tensor(x))
        assert rep.max_rel_err < 1e-4, f"{name} seed {seed}: {rep}"


def test_matmul_gradients_20_seeds():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((3, 5))
        proj = Tensor(rng.standard_normal((4, 5)))
        rep = grad_check(lambda t: (matmul(t, Tensor(b)) * proj).sum(), Tensor(a))
        assert rep.max_rel_err < 1e-4, f"dA seed {seed}: {rep}"
        rep = grad_check(lambda t: (matmul(Tensor(a), t) * proj).sum(), Tensor(b))
        assert rep.max_rel_err < 1e-4, f"dB seed {seed}: {rep}"


def test_conv2d_matches_naive_loop():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for bi in range(2):
        for o in range(4):
            for i in range(5):
                for j in range(5):
                    ref[bi, o, i, j] = (
                        np.sum(xp[bi, :, i : i + 3, j : j + 3] * w[o]) + b[o]
                    )
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_gradients():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    proj = rng.standard_normal((1, 3, 4, 4))
    for probe, f in [
        (x, lambda t: (conv2d(t, Tensor(w), Tensor(b)) * Tensor(proj)).sum()),
        (w, lambda t: (conv2d(Tensor(x), t, Tensor(b)) * Tensor(proj)).sum()),
        (b, lambda t: (conv2d(Tensor(x), Tensor(w), t) * Tensor(proj)).sum()),
    ]:
        rep = grad_check(f, Tensor(probe))
        assert rep.max_rel_err < 1e-4, str(rep)


def test_avg_pool_and_gather_gradients():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 2, 4, 4))
    proj = rng.standard_normal((1, 2, 2, 2))
    rep = grad_check(lambda t: (avg_pool2d(t, 2) * Tensor(proj)).sum(), Tensor(x))
    assert rep.max_rel_err < 1e-4, str(rep)

    table = rng.standard_normal((5, 3))
    idx = np.array([[1, 2], [2, 4]])
    proj2 = rng.standard_normal((2, 2, 3))
    rep = grad_check(lambda t: (take_rows(t, idx) * Tensor(proj2)).sum(), Tensor(table))
    assert rep.max_rel_err < 1e-4, str(rep)


def test_embedding_lookup_pads_with_zeros_and_masks_gradient():
    rng = np.random.default_rng(9)
    table = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    out = embedding_lookup(table, np.array([0, 2, 0]))
    np.testing.assert_array_equal(out.data[0], np.zeros(3))
    np.testing.assert_array_equal(out.data[2], np.zeros(3))
    out.sum().backward()
    np.testing.assert_array_equal(table.grad[0], np.zeros(3))
    np.testing.assert_array_equal(table.grad[2], np.ones(3))


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(123)
        x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        loss = (avg_pool2d(relu(conv2d(x, w, b)), 2)).mean()
        loss.backward()
        return loss.data.copy(), w.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert np.array_equal(l1, l2)
    assert np.array_equal(g1, g2)


def test_rejects_nonfinite_leaf():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])
