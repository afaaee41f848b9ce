import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sac.autodiff import Tensor, grad_check, matmul
from sac.joint_attention import (
    FULL_BILINEAR_BUDGET,
    attention_map,
    couple_joint,
    factorized_param_count,
    full_bilinear_reference,
    full_param_count,
    init_joint_params,
    joint_representation,
)


def _softmax_all(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def loop_attention(feat, emb, t_m):
    f, k = feat.shape[1], emb.shape[1]
    logits = np.zeros((f, k))
    for i in range(f):
        for j in range(k):
            for a in range(feat.shape[0]):
                for b in range(emb.shape[0]):
                    logits[i, j] += feat[a, i] * t_m[a, b] * emb[b, j]
    return _softmax_all(logits)


def loop_couple(fcol, ecol, t_u):
    d_f, d_e, d_j = t_u.shape
    out = np.zeros(d_j)
    for a in range(d_f):
        for b in range(d_e):
            out += t_u[a, b] * fcol[a] * ecol[b]
    return out


def loop_joint(feat, emb, t_u, m):
    out = np.zeros(t_u.shape[2])
    for i in range(feat.shape[1]):
        for j in range(emb.shape[1]):
            out += m[i, j] * loop_couple(feat[:, i], emb[:, j], t_u)
    return out


class TestAttentionMap:
    def test_zero_tensor_gives_uniform_map(self):
        rng = np.random.default_rng(0)
        amap = attention_map(rng.standard_normal((3, 4)), rng.standard_normal((2, 5)), np.zeros((3, 2)))
        np.testing.assert_allclose(amap.M.data, np.full((4, 5), 1 / 20.0))

    def test_single_couple_is_one(self):
        rng = np.random.default_rng(1)
        amap = attention_map(rng.standard_normal((3, 1)), rng.standard_normal((2, 1)), rng.standard_normal((3, 2)))
        np.testing.assert_allclose(amap.M.data, [[1.0]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(21)
        feat = rng.standard_normal((3, 4))
        emb = rng.standard_normal((2, 3))
        t_m = rng.standard_normal((3, 2))
        amap = attention_map(feat, emb, t_m)
        np.testing.assert_allclose(amap.M.data, loop_attention(feat, emb, t_m), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="rows"):
            attention_map(np.zeros((3, 4)), np.zeros((2, 5)), np.zeros((4, 2)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_normalized_and_positive(self, seed):
        rng = np.random.default_rng(seed)
        f, k = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        amap = attention_map(
            rng.standard_normal((3, f)), rng.standard_normal((4, k)), rng.standard_normal((3, 4))
        )
        assert np.all(amap.M.data > 0) and np.all(amap.M.data <= 1)
        assert abs(amap.M.data.sum() - 1.0) < 1e-9


class TestCoupleJoint:
    def test_zero_feature_column(self):
        rng = np.random.default_rng(2)
        out = couple_joint(np.zeros(3), rng.standard_normal(4), rng.standard_normal((3, 4, 5)))
        np.testing.assert_array_equal(out.data, np.zeros(5))

    def test_scalar_case(self):
        out = couple_joint(np.array([3.0]), np.array([5.0]), np.full((1, 1, 1), 2.0))
        np.testing.assert_allclose(out.data, [30.0])

    def test_bilinearity_in_feature(self):
        rng = np.random.default_rng(4)
        fcol, ecol = rng.standard_normal(3), rng.standard_normal(4)
        t_u = rng.standard_normal((3, 4, 5))
        once = couple_joint(fcol, ecol, t_u).data
        twice = couple_joint(2.0 * fcol, ecol, t_u).data
        np.testing.assert_allclose(twice, 2.0 * once, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(12)
        fcol, ecol = rng.standard_normal(3), rng.standard_normal(4)
        t_u = rng.standard_normal((3, 4, 5))
        np.testing.assert_allclose(
            couple_joint(fcol, ecol, t_u).data, loop_couple(fcol, ecol, t_u), atol=1e-12
        )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            couple_joint(np.zeros(2), np.zeros(4), np.zeros((3, 4, 5)))


class TestJointRepresentation:
    def test_uniform_attention_of_identical_couples(self):
        rng = np.random.default_rng(3)
        fcol, ecol = rng.standard_normal(3), rng.standard_normal(4)
        t_u = rng.standard_normal((3, 4, 5))
        feat = np.tile(fcol[:, None], (1, 4))
        emb = np.tile(ecol[:, None], (1, 2))
        m = np.full((4, 2), 1 / 8.0)
        out = joint_representation(feat, emb, t_u, m)
        np.testing.assert_allclose(out.J.data, couple_joint(fcol, ecol, t_u).data, atol=1e-12)

    def test_one_hot_attention_selects_one_couple(self):
        rng = np.random.default_rng(5)
        feat = rng.standard_normal((3, 4))
        emb = rng.standard_normal((4, 2))
        t_u = rng.standard_normal((3, 4, 5))
        m = np.zeros((4, 2))
        m[2, 1] = 1.0
        out = joint_representation(feat, emb, t_u, m)
        np.testing.assert_allclose(
            out.J.data, couple_joint(feat[:, 2], emb[:, 1], t_u).data, atol=1e-12
        )

    def test_contraction_matches_double_loop(self):
        rng = np.random.default_rng(8)
        feat = rng.standard_normal((3, 4))
        emb = rng.standard_normal((4, 3))
        t_u = rng.standard_normal((3, 4, 5))
        m = attention_map(feat, emb, rng.standard_normal((3, 4))).M.data
        got = joint_representation(feat, emb, t_u, m).J.data
        want = loop_joint(feat, emb, t_u, m)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10 * np.abs(want).max())

    def test_attention_shape_guard(self):
        with pytest.raises(ValueError, match="attention map"):
            joint_representation(np.zeros((3, 4)), np.zeros((4, 2)), np.zeros((3, 4, 5)), np.zeros((2, 4)))


class TestFullBilinearReference:
    def test_zero_tensor(self):
        out = full_bilinear_reference(np.ones((2, 2)), np.ones((3, 1)), np.zeros((4, 3, 5)))
        np.testing.assert_array_equal(out.J.data, np.zeros(5))

    def test_scalar_case(self):
        out = full_bilinear_reference(np.array([[3.0]]), np.array([[5.0]]), np.full((1, 1, 1), 2.0))
        np.testing.assert_allclose(out.J.data, [30.0])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(6)
        feat = rng.standard_normal((2, 3))
        emb = rng.standard_normal((3, 2))
        t_full = rng.standard_normal((6, 6, 4))
        got = full_bilinear_reference(feat, emb, t_full).J.data
        vf, ve = feat.reshape(-1), emb.reshape(-1)
        want = np.zeros(4)
        for a in range(6):
            for b in range(6):
                want += t_full[a, b] * vf[a] * ve[b]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_budget_enforced(self):
        n = int(np.ceil(FULL_BILINEAR_BUDGET ** (1 / 3))) + 1
        with pytest.raises(ValueError, match="budget"):
            full_bilinear_reference(np.zeros((n, 1)), np.zeros((n, 1)), np.zeros((n, n, n)))


def test_factorization_identity_50_seeds():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        d_f, d_e, d_j = (int(rng.integers(1, 9)) for _ in range(3))
        f, k = int(rng.integers(1, 17)), int(rng.integers(1, 11))
        feat = rng.standard_normal((d_f, f))
        emb = rng.standard_normal((d_e, k))
        t_u = rng.standard_normal((d_f, d_e, d_j))
        m = attention_map(feat, emb, rng.standard_normal((d_f, d_e))).M.data
        got = joint_representation(feat, emb, t_u, m).J.data
        want = loop_joint(feat, emb, t_u, m)
        np.testing.assert_allclose(
            got, want, rtol=1e-10, atol=1e-10 * max(1e-30, np.abs(want).max()),
            err_msg=f"seed {seed}",
        )


def test_permutation_equivariance():
    rng = np.random.default_rng(44)
    feat = rng.standard_normal((3, 5))
    emb = rng.standard_normal((4, 6))
    t_m = rng.standard_normal((3, 4))
    t_u = rng.standard_normal((3, 4, 5))
    perm = rng.permutation(6)
    m1 = attention_map(feat, emb, t_m).M.data
    m2 = attention_map(feat, emb[:, perm], t_m).M.data
    np.testing.assert_allclose(m2, m1[:, perm], rtol=1e-10, atol=1e-12)
    j1 = joint_representation(feat, emb, t_u, m1).J.data
    j2 = joint_representation(feat, emb[:, perm], t_u, m2).J.data
    np.testing.assert_allclose(j1, j2, rtol=1e-10, atol=1e-10 * np.abs(j1).max())


def test_gradients_through_attention_and_joint():
    rng = np.random.default_rng(31)
    d_f, d_e, d_j, f, k = 3, 4, 5, 4, 3
    feat = rng.standard_normal((d_f, f))
    emb = rng.standard_normal((d_e, k))
    params = init_joint_params(d_f, d_e, d_j, rng)
    proj = Tensor(rng.standard_normal(d_j))

    def full_path(feat_t, emb_t, t_u_t, t_m_t):
        amap = attention_map(feat_t, emb_t, t_m_t)
        joint = joint_representation(feat_t, emb_t, t_u_t, amap)
        return matmul(proj, joint.J)

    cases = {
        "feat": (feat, lambda t: full_path(t, Tensor(emb), params["t_u"], params["t_m"])),
        "emb": (emb, lambda t: full_path(Tensor(feat), t, params["t_u"], params["t_m"])),
        "t_u": (params["t_u"].data, lambda t: full_path(Tensor(feat), Tensor(emb), t, params["t_m"])),
        "t_m": (params["t_m"].data, lambda t: full_path(Tensor(feat), Tensor(emb), params["t_u"], t)),
    }
    for name, (value, fn) in cases.items():
        rep = grad_check(fn, Tensor(value), eps=1e-5)
        assert rep.max_rel_err < 1e-4, f"{name}: {rep}"


@given(
    st.integers(1, 64), st.integers(1, 64), st.integers(1, 64),
    st.integers(1, 128), st.integers(1, 32),
)
def test_factorized_parameter_count_claim(d_f, d_e, d_j, f, k):
    fact = factorized_param_count(d_f, d_e, d_j)
    assert fact == d_f * d_e * d_j + d_f * d_e
    if f * k > 1:
        assert fact < full_param_count(d_f, d_e, d_j, f, k)
