import numpy as np
import pytest

from tripath.dataio import TripletDataset, one_hot
from tripath.network import (
    ArchSpec, CheckpointError, Layer, TriPathNet, backward, decode_image,
    decode_label, encode, flatten, init_from_pretrain, init_random,
    joint_loss, load, loss_and_gradient, param_count, predict, save,
    unflatten,
)
from tripath.numerics import Rng, ShapeError
from tripath.rbm import pretrain_stack


def ref_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def make_triplets(seed, n, d, k):
    rng = np.random.default_rng(seed)
    clean = rng.uniform(0.1, 0.9, size=(n, d))
    noisy = rng.uniform(0.1, 0.9, size=(n, d))
    labels = one_hot(rng.integers(0, k, size=n), k)
    return TripletDataset(clean, noisy, labels, d, 1)


def zero_net(d, h, k, lam=1.0):
    def layer(i, o):
        return Layer(np.zeros((i, o)), np.zeros((1, o)))

    return TriPathNet((layer(d, h),), (layer(h, d),), (layer(h, k),), lam)


class TestForward:
    def test_zero_net_outputs_half(self):
        net = zero_net(4, 3, 2)
        v = np.random.default_rng(0).uniform(size=(5, 4))
        h = encode(net, v)
        np.testing.assert_array_equal(h, np.full((5, 3), 0.5))
        np.testing.assert_array_equal(decode_image(net, h), np.full((5, 4), 0.5))
        np.testing.assert_array_equal(decode_label(net, h), np.full((5, 2), 0.5))

    def test_single_layer_is_sigmoid_affine(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=(1, 3))
        net = TriPathNet((Layer(w, b),),
                         (Layer(np.zeros((3, 4)), np.zeros((1, 4))),),
                         (Layer(np.zeros((3, 2)), np.zeros((1, 2))),), 1.0)
        v = rng.uniform(size=(6, 4))
        np.testing.assert_allclose(encode(net, v), ref_sigmoid(v @ w + b),
                                   rtol=0, atol=1e-15)

    def test_three_layer_encoder_matches_unrolled_composition(self):
        net = init_random(ArchSpec((5, 4, 3, 2), 3), seed=7)
        v = np.random.default_rng(2).uniform(size=(4, 5))
        x = v
        for layer in net.encoder:
            x = ref_sigmoid(x @ layer.w + layer.b)
        np.testing.assert_allclose(encode(net, v), x, rtol=0, atol=1e-12)

    def test_decoders_match_unrolled_composition(self):
        net = init_random(ArchSpec((5, 4, 2), 3), seed=8)
        h = np.random.default_rng(3).uniform(0.1, 0.9, size=(4, 2))
        x = h
        for layer in net.decoder_img:
            x = ref_sigmoid(x @ layer.w + layer.b)
        np.testing.assert_allclose(decode_image(net, h), x, rtol=0, atol=1e-12)
        x = h
        for layer in net.decoder_lab:
            x = ref_sigmoid(x @ layer.w + layer.b)
        np.testing.assert_allclose(decode_label(net, h), x, rtol=0, atol=1e-12)

    def test_outputs_strictly_inside_unit_interval(self):
        net = TriPathNet((Layer(np.full((2, 2), 500.0), np.zeros((1, 2))),),
                         (Layer(np.full((2, 2), -500.0), np.zeros((1, 2))),),
                         (Layer(np.full((2, 1), 500.0), np.zeros((1, 1))),), 1.0)
        v = np.ones((1, 2))
        h = encode(net, v)
        assert np.all(h > 0) and np.all(h < 1)
        assert np.all(decode_image(net, h) > 0)
        assert np.all(decode_label(net, h) < 1)

    def test_shape_mismatch_raises(self):
        net = zero_net(4, 3, 2)
        with pytest.raises(ShapeError):
            encode(net, np.zeros((2, 5)))

    def test_predict_batch_equals_single_calls(self):
        net = init_random(ArchSpec((6, 4, 3), 4), seed=9)
        v = np.random.default_rng(4).uniform(size=(5, 6))
        v_hat, cls = predict(net, v)
        for i in range(5):
            vi, ci = predict(net, v[i:i + 1])
            np.testing.assert_allclose(v_hat[i:i + 1], vi, rtol=0, atol=1e-14)
            assert cls[i] == ci[0]
        v_hat2, cls2 = predict(net, v)
        np.testing.assert_array_equal(v_hat, v_hat2)
        np.testing.assert_array_equal(cls, cls2)


class TestJointLoss:
    def test_half_predictions_give_ln2_per_element(self):
        net = zero_net(4, 3, 2, lam=0.0)
        rng = np.random.default_rng(5)
        clean = (rng.uniform(size=(6, 4)) > 0.5).astype(float)
        trip = TripletDataset(clean, rng.uniform(size=(6, 4)),
                              one_hot(rng.integers(0, 2, size=6), 2), 4, 1)
        lb = joint_loss(net, trip)
        assert abs(lb.image - 6 * 4 * np.log(2.0)) < 1e-12
        assert abs(lb.total - lb.image) < 1e-15  # lam = 0

    def test_saturated_perfect_predictions_near_zero(self):
        # identical rows let per-column biases saturate both decoders onto
        # the targets; the clamp then floors each element at ~1e-7 nats
        v = np.array([[1.0, 0.0, 1.0]])
        y = np.array([[0.0, 1.0]])
        n = 3
        trip = TripletDataset(np.repeat(v, n, axis=0), np.repeat(v, n, axis=0),
                              np.repeat(y, n, axis=0), 3, 1)
        net = TriPathNet(
            (Layer(np.zeros((3, 2)), np.zeros((1, 2))),),
            (Layer(np.zeros((2, 3)), 1000.0 * (2 * v - 1)),),
            (Layer(np.zeros((2, 2)), 1000.0 * (2 * y - 1)),), 1.0)
        lb = joint_loss(net, trip)
        assert 0.0 <= lb.total <= n * (3 + 2) * 1.1e-7

    def test_image_term_independent_of_lambda(self):
        trip = make_triplets(6, 5, 4, 3)
        net1 = init_random(ArchSpec((4, 3), 3), lam=1.0, seed=10)
        net2 = TriPathNet(net1.encoder, net1.decoder_img, net1.decoder_lab, 3.5)
        a, b = joint_loss(net1, trip), joint_loss(net2, trip)
        assert a.image == b.image
        assert b.total == pytest.approx(a.image + 3.5 * a.label, rel=1e-15)

    def test_loss_nonnegative(self):
        for seed in range(5):
            net = init_random(ArchSpec((5, 3), 2), seed=seed)
            assert joint_loss(net, make_triplets(seed, 4, 5, 2)).total >= 0.0

    def test_term_flags_ablate_total_but_keep_breakdown(self):
        trip = make_triplets(7, 4, 5, 3)
        net = init_random(ArchSpec((5, 4), 3), seed=11)
        full = joint_loss(net, trip)
        img_only = joint_loss(net, trip, label_term=False)
        lab_only = joint_loss(net, trip, image_term=False)
        assert img_only.total == full.image
        assert lab_only.total == net.lam * full.label
        assert img_only.label == full.label

    def test_nan_parameters_raise(self):
        net = zero_net(3, 2, 2)
        bad = unflatten(net, np.full(param_count(net), np.nan))
        with pytest.raises(FloatingPointError):
            joint_loss(bad, make_triplets(8, 2, 3, 2))


def numeric_gradient(net, trip, eps=1e-5, **flags):
    base = flatten(net)
    grad = np.zeros_like(base)
    for i in range(base.size):
        hi, lo = base.copy(), base.copy()
        hi[i] += eps
        lo[i] -= eps
        lp = joint_loss(unflatten(net, hi), trip, **flags).total
        lm = joint_loss(unflatten(net, lo), trip, **flags).total
        grad[i] = (lp - lm) / (2.0 * eps)
    return grad


def max_rel_err(analytic, numeric):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


class TestBackward:
    @pytest.mark.parametrize("sizes,k,lam,head", [
        ((6, 4), 3, 1.0, "deep"),
        ((6, 5, 4), 3, 1.0, "deep"),
        ((8, 5, 4, 3), 4, 1.0, "deep"),
        ((6, 4, 3), 2, 0.0, "deep"),
        ((6, 4, 3), 2, 2.5, "deep"),
        ((6, 5, 3), 4, 1.0, "shallow"),
    ])
    def test_matches_central_differences(self, sizes, k, lam, head):
        net = init_random(ArchSpec(sizes, k, head), lam=lam, seed=sum(sizes))
        trip = make_triplets(sum(sizes) + k, 5, sizes[0], k)
        analytic = backward(net, trip)
        numeric = numeric_gradient(net, trip)
        assert max_rel_err(analytic, numeric) <= 1e-5

    def test_ablated_terms_match_central_differences(self):
        net = init_random(ArchSpec((6, 4, 3), 3), seed=21)
        trip = make_triplets(22, 4, 6, 3)
        for flags in ({"image_term": False}, {"label_term": False}):
            analytic = backward(net, trip, **flags)
            numeric = numeric_gradient(net, trip, **flags)
            assert max_rel_err(analytic, numeric) <= 1e-5

    def test_lambda_zero_kills_label_gradient_everywhere(self):
        net = init_random(ArchSpec((5, 4, 3), 2), lam=0.0, seed=12)
        trip = make_triplets(13, 6, 5, 2)
        g = backward(net, trip)
        g_img_only = backward(net, trip, label_term=False)
        np.testing.assert_array_equal(g, g_img_only)
        # label-decoder block of the vector is exactly zero
        n_lab = sum(l.w.size + l.b.size for l in net.decoder_lab)
        np.testing.assert_array_equal(g[-n_lab:], np.zeros(n_lab))

    def test_duplicating_rows_doubles_gradient(self):
        net = init_random(ArchSpec((5, 3), 3), seed=14)
        trip = make_triplets(15, 4, 5, 3)
        doubled = TripletDataset(
            np.repeat(trip.clean, 2, axis=0), np.repeat(trip.noisy, 2, axis=0),
            np.repeat(trip.labels_onehot, 2, axis=0), trip.width, trip.height)
        g1 = backward(net, trip)
        g2 = backward(net, doubled)
        np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-13, atol=1e-15)

    def test_shared_gradient_decomposition(self):
        # gradient(lam=1) == gradient(lam=0) + label-only gradient(lam=1)
        arch = ArchSpec((6, 5, 4), 3)
        trip = make_triplets(16, 5, 6, 3)
        net1 = init_random(arch, lam=1.0, seed=17)
        net0 = TriPathNet(net1.encoder, net1.decoder_img, net1.decoder_lab, 0.0)
        g_joint = backward(net1, trip)
        g_image = backward(net0, trip)
        g_label = backward(net1, trip, image_term=False)
        np.testing.assert_allclose(g_joint, g_image + g_label,
                                   rtol=1e-12, atol=1e-12)

    def test_loss_and_gradient_consistent_with_joint_loss(self):
        net = init_random(ArchSpec((5, 4), 2), seed=18)
        trip = make_triplets(19, 3, 5, 2)
        lb, g = loss_and_gradient(net, trip)
        assert lb.total == joint_loss(net, trip).total
        np.testing.assert_array_equal(g, backward(net, trip))


class TestInit:
    def test_from_pretrain_copies_encoder_and_mirrors_decoder(self):
        stack = pretrain_stack([6, 4, 3], np.zeros((2, 6)), epochs=0,
                               lr=0.1, batch_size=2, seed=20)
        net = init_from_pretrain(stack, ArchSpec((6, 4, 3), 2), seed=21)
        for layer, rbm in zip(net.encoder, stack):
            np.testing.assert_array_equal(layer.w, rbm.w)
            np.testing.assert_array_equal(layer.b, rbm.b_hid)
            assert not np.shares_memory(layer.w, rbm.w)
        np.testing.assert_array_equal(net.decoder_img[0].w, net.encoder[-1].w.T)
        np.testing.assert_array_equal(net.decoder_img[1].w, net.encoder[0].w.T)
        np.testing.assert_array_equal(net.decoder_img[0].b, stack[-1].b_vis)
        assert not np.shares_memory(net.decoder_img[0].w, net.encoder[-1].w)

    def test_mnist_architecture_dimensions(self):
        sizes = [784, 400, 200, 250, 100]
        stack = pretrain_stack(sizes, np.zeros((2, 784)), epochs=0,
                               lr=0.1, batch_size=2, seed=0)
        net = init_from_pretrain(stack, ArchSpec(sizes, 10), seed=1)
        assert [(l.in_dim, l.out_dim) for l in net.encoder] == \
            [(784, 400), (400, 200), (200, 250), (250, 100)]
        assert [(l.in_dim, l.out_dim) for l in net.decoder_img] == \
            [(100, 250), (250, 200), (200, 400), (400, 784)]
        assert [(l.in_dim, l.out_dim) for l in net.decoder_lab] == \
            [(100, 250), (250, 200), (200, 400), (400, 10)]

    def test_shallow_label_head(self):
        stack = pretrain_stack([6, 4, 3], np.zeros((2, 6)), epochs=0,
                               lr=0.1, batch_size=2, seed=3)
        net = init_from_pretrain(stack, ArchSpec((6, 4, 3), 5, "shallow"),
                                 seed=4)
        assert [(l.in_dim, l.out_dim) for l in net.decoder_lab] == [(3, 5)]
        assert np.all(net.decoder_lab[0].b == 0.0)
        assert np.all(np.abs(net.decoder_lab[0].w) < 0.1)

    def test_stack_size_mismatch_raises(self):
        stack = pretrain_stack([6, 4], np.zeros((2, 6)), epochs=0,
                               lr=0.1, batch_size=2, seed=5)
        with pytest.raises(ShapeError):
            init_from_pretrain(stack, ArchSpec((6, 4, 3), 2), seed=6)

    def test_init_random_deterministic(self):
        a = init_random(ArchSpec((5, 4, 3), 2), seed=30)
        b = init_random(ArchSpec((5, 4, 3), 2), seed=30)
        np.testing.assert_array_equal(flatten(a), flatten(b))
        assert np.any(flatten(a) != 0.0)


class TestParamVector:
    def test_flatten_unflatten_roundtrip(self):
        net = init_random(ArchSpec((6, 5, 4), 3), lam=0.7, seed=40)
        pv = flatten(net)
        assert pv.shape == (param_count(net),)
        back = unflatten(net, pv)
        np.testing.assert_array_equal(flatten(back), pv)
        assert back.lam == net.lam
        for la, lb in zip(back.encoder, net.encoder):
            np.testing.assert_array_equal(la.w, lb.w)

    def test_flatten_order_is_documented(self):
        # encoder first, w row-major then b, then the decoders
        w_enc = np.arange(6, dtype=float).reshape(2, 3)
        net = TriPathNet(
            (Layer(w_enc, np.array([[9.0, 10.0, 11.0]])),),
            (Layer(np.full((3, 2), 2.0), np.zeros((1, 2))),),
            (Layer(np.full((3, 1), 3.0), np.zeros((1, 1))),), 1.0)
        pv = flatten(net)
        np.testing.assert_array_equal(pv[:6], np.arange(6.0))
        np.testing.assert_array_equal(pv[6:9], [9.0, 10.0, 11.0])
        np.testing.assert_array_equal(pv[9:15], np.full(6, 2.0))

    def test_wrong_length_rejected(self):
        net = init_random(ArchSpec((4, 3), 2), seed=41)
        with pytest.raises(ShapeError):
            unflatten(net, np.zeros(param_count(net) + 1))


class TestCheckpoint:
    def test_save_load_roundtrip(self, tmp_path):
        net = init_random(ArchSpec((6, 5, 4), 3, "shallow"), lam=0.25, seed=50)
        path = tmp_path / "model.tpn"
        save(net, path)
        back = load(path)
        np.testing.assert_array_equal(flatten(back), flatten(net))
        assert back.lam == net.lam
        assert [(l.in_dim, l.out_dim) for l in back.decoder_lab] == \
            [(l.in_dim, l.out_dim) for l in net.decoder_lab]

    def test_tampered_magic_rejected(self, tmp_path):
        net = init_random(ArchSpec((4, 3), 2), seed=51)
        path = tmp_path / "model.tpn"
        save(net, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load(path)

    def test_truncated_file_rejected(self, tmp_path):
        net = init_random(ArchSpec((4, 3), 2), seed=52)
        path = tmp_path / "model.tpn"
        save(net, path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(CheckpointError):
            load(path)
