"""Network container, goal conversions, and JSON round-trips."""

import json

import numpy as np
import pytest

from relucert.errors import ParseError
from relucert.network import (
    Ball,
    CertInstance,
    Halfspace,
    Network,
    attack_instance,
    ball_from_halfspace,
    forward,
    halfspace_to_ball,
    load_instance,
    load_network,
    save_instance,
    save_network,
    truncate,
)


def identity_chain(depth=1):
    layers = [(np.array([[1.0]]), np.array([0.0])) for _ in range(depth)]
    return Network(layers=layers, output=(np.eye(1), np.zeros(1)))


def random_net(rng, dims):
    layers = [
        (rng.standard_normal((dims[k + 1], dims[k])), rng.standard_normal(dims[k + 1]))
        for k in range(len(dims) - 2)
    ]
    return Network(
        layers=layers,
        output=(rng.standard_normal((dims[-1], dims[-2])), rng.standard_normal(dims[-1])),
    )


def spectral_norm(M, iters=200):
    """Independent power iteration, deliberately not np.linalg.norm."""
    M = np.atleast_2d(M)
    v = np.ones(M.shape[1]) / np.sqrt(M.shape[1])
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(M @ v))


class TestForward:
    def test_single_neuron_clamps_negative_input(self):
        acts, s = forward(identity_chain(1), np.array([-1.0]))
        assert acts[-1][0] == 0.0
        assert s[0] == 0.0

    def test_single_neuron_passes_positive_input(self):
        acts, s = forward(identity_chain(1), np.array([0.7]))
        assert acts[-1][0] == 0.7
        assert s[0] == 0.7

    def test_relu_chain_is_idempotent(self):
        """Stacking a second identity ReLU layer changes nothing pointwise."""
        single, double = identity_chain(1), identity_chain(2)
        for x in np.linspace(-2.0, 2.0, 41):
            a1, s1 = forward(single, np.array([x]))
            a2, s2 = forward(double, np.array([x]))
            assert a1[-1][0] == a2[-1][0]
            assert s1[0] == s2[0]

    def test_activations_and_readout_are_consistent(self):
        rng = np.random.default_rng(0)
        net = random_net(rng, [3, 4, 2, 5])
        x = rng.standard_normal(3)
        acts, s = forward(net, x)
        assert len(acts) == net.depth == 2
        # recompute the chain by hand
        h = x
        for (W, b), a in zip(net.layers, acts):
            h = np.maximum(0.0, W @ h + b)
            np.testing.assert_array_equal(a, h)
        W_out, b_out = net.output
        np.testing.assert_allclose(s, W_out @ acts[-1] + b_out, rtol=0, atol=0)

    def test_wrong_input_shape_rejected(self):
        with pytest.raises(ValueError):
            forward(identity_chain(1), np.array([1.0, 2.0]))

    def test_lipschitz_product_bound(self):
        """The readout is Lipschitz with constant prod_k ||W_k||_2.

        Spectral norms come from an independent power iteration; ReLU is
        1-Lipschitz, so the product over all layers plus the readout bounds
        every difference quotient.
        """
        rng = np.random.default_rng(7)
        for _ in range(5):
            dims = [int(d) for d in rng.integers(1, 5, size=4)]
            net = random_net(rng, dims)
            L = spectral_norm(net.output[0])
            for W, _ in net.layers:
                L *= spectral_norm(W)
            for _ in range(50):
                x = rng.standard_normal(dims[0]) * 3
                y = rng.standard_normal(dims[0]) * 3
                _, sx = forward(net, x)
                _, sy = forward(net, y)
                lhs = np.linalg.norm(sx - sy)
                rhs = L * np.linalg.norm(x - y)
                assert lhs <= rhs * (1 + 1e-9) + 1e-12


class TestAttackInstance:
    def setup_method(self):
        self.net = Network(
            layers=[(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2))],
            output=(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, -1.0])),
        )

    def test_goal_is_readout_row_difference(self):
        inst = attack_instance(self.net, np.array([0.2, 0.1]), 0, 1)
        assert isinstance(inst.goal, Halfspace)
        np.testing.assert_array_equal(inst.goal.w, np.array([1.0, -1.0]))
        assert inst.goal.b == 2.0
        assert inst.goal.true_class == 0
        assert inst.goal.target_class == 1

    def test_margin_positive_while_correctly_classified(self):
        inst = attack_instance(self.net, np.array([0.2, 0.1]), 0, 1)
        acts, _ = forward(self.net, inst.x_hat)
        assert float(inst.goal.w @ acts[-1]) + inst.goal.b > 0

    def test_same_classes_rejected(self):
        with pytest.raises(ValueError):
            attack_instance(self.net, np.zeros(2), 1, 1)

    def test_class_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            attack_instance(self.net, np.zeros(2), 0, 5)


class TestHalfspaceToBall:
    def test_unit_halfspace(self):
        z = halfspace_to_ball(np.array([1.0]), 0.0, 1.0)
        np.testing.assert_allclose(z, [-1.0], atol=1e-15)

    def test_scaled_offset_halfspace(self):
        z = halfspace_to_ball(np.array([2.0]), -4.0, 1.0)
        np.testing.assert_allclose(z, [1.0], atol=1e-15)

    def test_tangency_identity(self):
        """<w, z_hat> + b = -rho ||w|| to near machine precision."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(1, 6))
            w = rng.standard_normal(n)
            if not np.any(w):
                continue
            b = float(rng.standard_normal())
            rho = float(rng.uniform(0.01, 3.0))
            z = halfspace_to_ball(w, b, rho)
            lhs = float(w @ z) + b
            rhs = -rho * np.linalg.norm(w)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))

    def test_ball_contained_in_halfspace(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(4)
        b, rho = 0.7, 0.9
        z_hat = halfspace_to_ball(w, b, rho)
        for _ in range(100):
            d = rng.standard_normal(4)
            z = z_hat + rho * d / np.linalg.norm(d) * rng.uniform(0, 1)
            assert float(w @ z) + b <= 1e-12

    def test_monotone_inclusion(self):
        """Smaller-radius balls nest inside larger ones.

        The centers move along -w/||w|| at unit speed in rho, so the center
        gap equals the radius gap exactly and the balls are internally
        tangent.
        """
        rng = np.random.default_rng(5)
        w = rng.standard_normal(3)
        b = -0.4
        z1 = halfspace_to_ball(w, b, 0.3)
        z2 = halfspace_to_ball(w, b, 1.1)
        gap = np.linalg.norm(z2 - z1)
        assert abs(gap - (1.1 - 0.3)) <= 1e-12
        for _ in range(50):
            d = rng.standard_normal(3)
            z = z1 + 0.3 * rng.uniform(0, 1) * d / np.linalg.norm(d)
            assert np.linalg.norm(z - z2) <= 1.1 + 1e-12

    def test_zero_w_rejected(self):
        with pytest.raises(ValueError):
            halfspace_to_ball(np.zeros(2), 0.0, 1.0)

    def test_nonpositive_rho_rejected(self):
        with pytest.raises(ValueError):
            halfspace_to_ball(np.array([1.0]), 0.0, 0.0)


class TestBallFromHalfspace:
    def test_conversion_records_source(self):
        net = identity_chain(1)
        inst = CertInstance(net=net, x_hat=np.array([-1.0]),
                            goal=Halfspace(w=np.array([-1.0]), b=0.6))
        ball = ball_from_halfspace(inst, rho=0.4)
        assert isinstance(ball.goal, Ball)
        np.testing.assert_allclose(ball.goal.z_hat, [1.0], atol=1e-15)
        assert ball.goal.source_halfspace is inst.goal

    def test_radius_defaults_to_stored_rho(self):
        net = identity_chain(1)
        inst = CertInstance(net=net, x_hat=np.array([0.0]),
                            goal=Halfspace(w=np.array([-1.0]), b=0.5, rho=0.25))
        ball = ball_from_halfspace(inst)
        assert ball.goal.rho == 0.25

    def test_missing_radius_rejected(self):
        net = identity_chain(1)
        inst = CertInstance(net=net, x_hat=np.array([0.0]),
                            goal=Halfspace(w=np.array([-1.0]), b=0.5))
        with pytest.raises(ValueError):
            ball_from_halfspace(inst)

    def test_ball_goal_rejected(self):
        net = identity_chain(1)
        inst = CertInstance(net=net, x_hat=np.array([0.0]),
                            goal=Ball(z_hat=np.array([1.0]), rho=0.5))
        with pytest.raises(ValueError):
            ball_from_halfspace(inst)


class TestTruncate:
    def test_prefix_readout_is_identity_on_kth_activation(self):
        rng = np.random.default_rng(2)
        net = random_net(rng, [2, 3, 4, 2])
        sub = truncate(net, 1)
        x = rng.standard_normal(2)
        acts_full, _ = forward(net, x)
        acts_sub, s_sub = forward(sub, x)
        np.testing.assert_array_equal(acts_sub[-1], acts_full[0])
        np.testing.assert_array_equal(s_sub, acts_full[0])

    def test_full_depth_returns_original(self):
        net = identity_chain(2)
        assert truncate(net, 2) is net

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            truncate(identity_chain(2), 3)
        with pytest.raises(ValueError):
            truncate(identity_chain(2), 0)


class TestSerialization:
    def test_network_roundtrip_is_exact(self):
        rng = np.random.default_rng(9)
        net = random_net(rng, [3, 4, 2])
        text = save_network(net)
        back = load_network(text)
        assert back.dims == net.dims
        for (W, b), (W2, b2) in zip(net.layers, back.layers):
            np.testing.assert_array_equal(W, W2)
            np.testing.assert_array_equal(b, b2)
        np.testing.assert_array_equal(net.output[0], back.output[0])
        np.testing.assert_array_equal(net.output[1], back.output[1])

    def test_ball_instance_roundtrip_is_exact(self):
        rng = np.random.default_rng(10)
        net = random_net(rng, [2, 3, 2])
        inst = CertInstance(net=net, x_hat=rng.standard_normal(2),
                            goal=Ball(z_hat=rng.standard_normal(3), rho=0.37))
        back = load_instance(save_instance(inst), net)
        np.testing.assert_array_equal(back.x_hat, inst.x_hat)
        np.testing.assert_array_equal(back.goal.z_hat, inst.goal.z_hat)
        assert back.goal.rho == inst.goal.rho

    def test_halfspace_instance_roundtrip_keeps_classes_and_rho(self):
        rng = np.random.default_rng(12)
        net = random_net(rng, [2, 3, 4])
        inst = attack_instance(net, rng.standard_normal(2), 1, 3)
        goal = Halfspace(w=inst.goal.w, b=inst.goal.b, rho=0.5,
                         true_class=inst.goal.true_class,
                         target_class=inst.goal.target_class)
        inst = CertInstance(net=net, x_hat=inst.x_hat, goal=goal)
        back = load_instance(save_instance(inst), net)
        np.testing.assert_array_equal(back.goal.w, goal.w)
        assert back.goal.b == goal.b
        assert back.goal.rho == 0.5
        assert back.goal.true_class == 1
        assert back.goal.target_class == 3

    def test_parse_error_names_offending_path(self):
        doc = {
            "dims": [3, 3, 3],
            "layers": [{"weights": [[1, 0, 0], [0, 1, 0], [0, 0]], "bias": [0, 0, 0]}],
            "output": {"weights": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "bias": [0, 0, 0]},
        }
        with pytest.raises(ParseError) as exc:
            load_network(json.dumps(doc))
        assert exc.value.path == "layers[0].weights[2]"

    def test_parse_error_on_missing_field(self):
        with pytest.raises(ParseError) as exc:
            load_network(json.dumps({"dims": [1, 1, 1], "layers": [{"bias": [0]}],
                                     "output": {"weights": [[1]], "bias": [0]}}))
        assert "weights" in exc.value.path

    def test_parse_error_on_non_numeric_entry(self):
        doc = {
            "dims": [1, 1, 1],
            "layers": [{"weights": [["x"]], "bias": [0]}],
            "output": {"weights": [[1]], "bias": [0]},
        }
        with pytest.raises(ParseError) as exc:
            load_network(json.dumps(doc))
        assert exc.value.path == "layers[0].weights[0][0]"

    def test_parse_error_on_malformed_json(self):
        with pytest.raises(ParseError):
            load_network("{not json")

    def test_seventeen_digit_floats_roundtrip_bit_exact(self):
        # 0.1 + 0.2 is the classic repr casualty; 17 significant digits
        # must bring back the identical double
        v = 0.1 + 0.2
        net = Network(layers=[(np.array([[v]]), np.array([v * 7]))],
                      output=(np.array([[1.0 / 3.0]]), np.array([0.0])))
        back = load_network(save_network(net))
        assert back.layers[0][0][0, 0] == v
        assert back.layers[0][1][0] == v * 7
        assert back.output[0][0, 0] == 1.0 / 3.0


class TestValidation:
    def test_goal_dimension_mismatch_rejected(self):
        net = identity_chain(1)
        with pytest.raises(ValueError):
            CertInstance(net=net, x_hat=np.array([0.0]),
                         goal=Ball(z_hat=np.array([1.0, 2.0]), rho=0.5))

    def test_anchor_dimension_mismatch_rejected(self):
        net = identity_chain(1)
        with pytest.raises(ValueError):
            CertInstance(net=net, x_hat=np.array([0.0, 1.0]),
                         goal=Ball(z_hat=np.array([1.0]), rho=0.5))

    def test_ball_requires_positive_radius(self):
        with pytest.raises(ValueError):
            Ball(z_hat=np.array([1.0]), rho=-0.1)

    def test_halfspace_requires_nonzero_w(self):
        with pytest.raises(ValueError):
            Halfspace(w=np.zeros(3), b=1.0)
