"""Networks: parameter accounting, shared-shape gradients, checkpoints."""

import numpy as np
import pytest

from paflab import tensor as T
from paflab.activations import ActivationSpec
from paflab.nnet import build_cnn, build_mlp, init_to_nonparametric, load_checkpoint


def net_loss(net, x, y):
    return T.softmax_cross_entropy(net.forward(T.Tensor(x)), y)


class TestParameterAccounting:
    def test_mlp_theta_count(self):
        net = build_mlp([2, 8, 2], ActivationSpec("relu"))
        n_theta, n_paf = net.parameter_counts()
        assert n_theta == 2 * 8 + 8 + 8 * 2 + 2 == 42
        assert n_paf == 0

    def test_pssilu_adds_two_scalars(self):
        spec = ActivationSpec("pssilu", alpha_learnable=True, beta_learnable=True)
        assert build_mlp([2, 8, 2], spec).parameter_counts()[1] == 2

    def test_single_parameter_families_add_one(self):
        for family in ("prelu", "pelu", "psilu", "psoftplus", "prelu_plus", "reblu"):
            spec = ActivationSpec(family, alpha_learnable=True)
            assert build_mlp([2, 8, 2], spec).parameter_counts()[1] == 1

    def test_fixed_shape_adds_zero_learnables(self):
        spec = ActivationSpec("psilu", alpha=2.0)
        assert build_mlp([2, 8, 2], spec).parameter_counts()[1] == 0

    def test_cnn_counts_follow_family_rule(self):
        for family, expected in [("relu", 0), ("psilu", 1), ("pssilu", 2)]:
            spec = ActivationSpec(family,
                                  alpha_learnable=family != "relu",
                                  beta_learnable=family == "pssilu")
            net = build_cnn((4, 8), 3, 10, spec)
            assert net.parameter_counts()[1] == expected

    def test_every_site_reads_the_same_tensors(self):
        spec = ActivationSpec("psilu", alpha_learnable=True)
        net = build_mlp([2, 8, 8, 8, 2], spec)
        assert len([t for _, t in net.paf_parameters()]) == 1


class TestBuilders:
    def test_mlp_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            build_mlp([2], ActivationSpec("relu"))
        with pytest.raises(ValueError):
            build_mlp([2, 0, 2], ActivationSpec("relu"))

    def test_cnn_forward_shape(self):
        net = build_cnn((4, 8), 3, 5, ActivationSpec("relu"), in_hw=8)
        out = net.forward(T.Tensor(np.zeros((3, 1, 8, 8))))
        assert out.shape == (3, 5)

    def test_cnn_zero_input_zero_bias_gives_equal_logits(self):
        net = build_cnn((4, 8), 3, 5, ActivationSpec("relu"), in_hw=8)
        for _, t in net.theta_parameters():
            if t.data.ndim == 1:
                t.data = np.zeros_like(t.data)
        out = net.forward(T.Tensor(np.zeros((2, 1, 8, 8)))).data
        assert np.allclose(out, out[:, :1])

    def test_cnn_kernel_must_fit(self):
        with pytest.raises(ValueError, match="does not fit"):
            build_cnn((4, 8), 9, 5, ActivationSpec("relu"), in_hw=8)

    def test_fixed_seed_identical_init(self):
        a = build_mlp([2, 8, 2], ActivationSpec("relu"), seed=5)
        b = build_mlp([2, 8, 2], ActivationSpec("relu"), seed=5)
        for (_, ta), (_, tb) in zip(a.parameters(), b.parameters()):
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_single_dense_layer_is_affine_map(self):
        net = build_mlp([3, 2], ActivationSpec("relu"), seed=1)
        x = np.random.default_rng(0).normal(size=(4, 3))
        out = net.forward(T.Tensor(x)).data
        w, b = net.layers[0].weight.data, net.layers[0].bias.data
        np.testing.assert_allclose(out, x @ w + b, atol=1e-15)


class TestForwardGradients:
    def test_identity_reduced_pair_gives_identical_logits(self):
        x = np.random.default_rng(2).uniform(size=(6, 2))
        a = build_mlp([2, 8, 2], ActivationSpec("psilu", alpha=1.0), seed=3)
        b = build_mlp([2, 8, 2], ActivationSpec("silu"), seed=3)
        ga = a.forward(T.Tensor(x)).data
        gb = b.forward(T.Tensor(x)).data
        assert np.max(np.abs(ga - gb)) <= 1e-10

    def test_shared_alpha_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(size=(8, 2))
        y = rng.integers(0, 2, size=8)
        spec = ActivationSpec("psilu", alpha=1.3, alpha_learnable=True)
        net = build_mlp([2, 6, 6, 2], spec, seed=7)
        net.zero_grad()
        net_loss(net, x, y).backward()
        got = float(net.paf_params["alpha"].grad)
        h = 1e-5
        alpha = net.paf_params["alpha"]
        alpha.data = alpha.data + h
        up = net_loss(net, x, y).item()
        alpha.data = alpha.data - 2 * h
        down = net_loss(net, x, y).item()
        alpha.data = alpha.data + h
        fd = (up - down) / (2 * h)
        assert got == pytest.approx(fd, rel=1e-4)

    @pytest.mark.parametrize("family,kwargs", [
        ("psilu", dict(alpha=1.2, alpha_learnable=True)),
        ("pssilu", dict(alpha=1.1, beta=0.2, alpha_learnable=True, beta_learnable=True)),
        ("psoftplus", dict(alpha=0.9, alpha_learnable=True)),
    ])
    def test_whole_network_gradient_all_parameters(self, family, kwargs):
        rng = np.random.default_rng(11)
        x = rng.uniform(size=(5, 3))
        y = rng.integers(0, 3, size=5)
        net = build_mlp([3, 5, 3], ActivationSpec(family, **kwargs), seed=2)
        net.zero_grad()
        net_loss(net, x, y).backward()
        h = 1e-5
        for name, t in net.learnable_parameters():
            grad = t.grad.reshape(-1)
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = net_loss(net, x, y).item()
                flat[i] = old - h
                down = net_loss(net, x, y).item()
                flat[i] = old
                fd = (up - down) / (2 * h)
                assert abs(grad[i] - fd) <= 1e-4 * max(1.0, abs(fd)), (name, i)

    def test_frozen_blocks_grad_accumulation(self):
        net = build_mlp([2, 4, 2], ActivationSpec("relu"), seed=0)
        x = np.random.default_rng(1).uniform(size=(3, 2))
        with net.frozen():
            net_loss(net, x, np.array([0, 1, 0])).backward()
        assert all(t.grad is None for _, t in net.parameters())


class TestInitToNonparametric:
    def test_anchor_values(self):
        cases = {"prelu": 0.0, "pelu": 1.0, "psilu": 1.0, "psoftplus": 1.0,
                 "prelu_plus": 1.0, "reblu": 0.0}
        for family, anchor in cases.items():
            net = build_mlp([2, 4, 2], ActivationSpec(family, alpha=anchor + 0.5 if family != "psoftplus" else 2.0,
                                                      alpha_learnable=True))
            init_to_nonparametric(net)
            assert float(net.paf_params["alpha"].data) == anchor

    def test_pssilu_resets_to_silu_shape(self):
        spec = ActivationSpec("pssilu", alpha=2.0, beta=0.4,
                              alpha_learnable=True, beta_learnable=True)
        net = build_mlp([2, 4, 2], spec)
        init_to_nonparametric(net)
        assert float(net.paf_params["alpha"].data) == 1.0
        assert float(net.paf_params["beta"].data) == 0.0


class TestCheckpoint:
    def test_round_trip_preserves_forward(self, tmp_path):
        spec = ActivationSpec("pssilu", alpha=1.4, beta=0.2,
                              alpha_learnable=True, beta_learnable=True)
        net = build_mlp([2, 6, 2], spec, seed=9)
        net.paf_params["alpha"].data = np.asarray(1.8)
        path = tmp_path / "ckpt.json"
        net.save_checkpoint(path)
        loaded = load_checkpoint(path)
        x = np.random.default_rng(3).uniform(size=(4, 2))
        np.testing.assert_array_equal(net.forward(T.Tensor(x)).data,
                                      loaded.forward(T.Tensor(x)).data)
        assert float(loaded.paf_params["alpha"].data) == 1.8

    def test_round_trip_bytes_stable(self, tmp_path):
        net = build_mlp([2, 4, 2], ActivationSpec("relu"), seed=1)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        net.save_checkpoint(p1)
        load_checkpoint(p1).save_checkpoint(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_field_checked(self, tmp_path):
        net = build_mlp([2, 4, 2], ActivationSpec("relu"), seed=1)
        state = net.state_dict()
        state["format_version"] = 99
        with pytest.raises(ValueError, match="version"):
            net.load_state_dict(state)

    def test_cnn_round_trip(self, tmp_path):
        net = build_cnn((3, 4), 3, 4, ActivationSpec("psilu", alpha_learnable=True), in_hw=8)
        path = tmp_path / "cnn.json"
        net.save_checkpoint(path)
        loaded = load_checkpoint(path)
        x = np.random.default_rng(5).uniform(size=(2, 1, 8, 8))
        np.testing.assert_array_equal(net.forward(T.Tensor(x)).data,
                                      loaded.forward(T.Tensor(x)).data)
