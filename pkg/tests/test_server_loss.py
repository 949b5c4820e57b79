import math

import numpy as np
import pytest

from fedgma import nn, server_loss


class TestMseIdentity:
    def test_equal_weights_zero_residual(self):
        out = server_loss.mse_server_identity(0.3, 0.3, 1.7, -0.4)
        assert out.residual == 0.0

    def test_hand_computed_residual(self):
        # w_a=0.01, w_b=-0.01, x=1, y=1: avg weight 0 -> J=1,
        # J_a=(1-0.01)^2, J_b=(1+0.01)^2, residual = 1 - (1+1e-4) = -1e-4
        out = server_loss.mse_server_identity(0.01, -0.01, 1.0, 1.0)
        assert out.server_loss == 1.0
        assert out.residual == pytest.approx(-1e-4, abs=1e-15)

    def test_closed_form_holds_over_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            w_a, w_b, x, y = rng.uniform(-2, 2, 4)
            out = server_loss.mse_server_identity(w_a, w_b, x, y)
            w = 0.5 * (w_a + w_b)
            closed = (w * w - 0.5 * (w_a * w_a + w_b * w_b)) * x * x
            assert abs(out.residual - closed) <= 1e-12

    def test_small_weight_regime_bound(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            w_a, w_b = rng.uniform(-0.01, 0.01, 2)
            x = rng.uniform(-1, 1)
            y = rng.uniform(-1, 1)
            out = server_loss.mse_server_identity(w_a, w_b, x, y)
            assert abs(out.residual) <= 1e-4


class TestCeIdentity:
    def test_equal_weights_zero_residual(self):
        out = server_loss.ce_server_identity(0.7, 0.7, 2.0, 1.0)
        assert out.residual == 0.0

    def test_hand_computed_residual(self):
        # AM(1,4)=2.5, GM=2 -> residual = log(1.25)
        out = server_loss.ce_server_identity(1.0, 4.0, 1.0, 1.0)
        assert out.residual == pytest.approx(math.log(1.25), abs=1e-12)

    def test_non_negative_for_non_negative_y(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            w_a, w_b = rng.uniform(0.01, 5, 2)
            x = rng.uniform(0.01, 3)
            y = rng.uniform(0, 2)
            assert server_loss.ce_server_identity(w_a, w_b, x, y).residual >= 0.0

    def test_vector_inputs_summed(self):
        out = server_loss.ce_server_identity(1.0, 4.0, np.array([1.0, 1.0]),
                                             np.array([1.0, 2.0]))
        assert out.residual == pytest.approx(3 * math.log(1.25), abs=1e-12)

    def test_non_positive_inputs_rejected(self):
        with pytest.raises(ValueError):
            server_loss.ce_server_identity(-1.0, 2.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            server_loss.ce_server_identity(1.0, 2.0, 0.0, 1.0)


class TestEmpiricalGap:
    def test_identical_clients_zero_gap(self):
        spec = nn.ModelSpec(1, (), 1, "mse", bias=False)
        batch = nn.Batch([[1.0], [2.0]], [0.5, 1.0])
        params = np.array([0.3])
        out = server_loss.empirical_server_loss_check(spec, [batch, batch],
                                                      [params, params])
        assert out.gap == pytest.approx(0.0, abs=1e-15)

    def test_near_zero_weights_small_gap(self):
        spec = nn.ModelSpec(1, (), 1, "mse", bias=False)
        rng = np.random.default_rng(3)
        batches = [
            nn.Batch(rng.uniform(0, 1, (20, 1)), rng.uniform(0, 0.02, 20))
            for _ in range(2)
        ]
        out = server_loss.empirical_server_loss_check(
            spec, batches, [np.array([0.01]), np.array([-0.01])])
        assert out.gap < 1e-3

    def test_requires_two_clients(self):
        spec = nn.ModelSpec(1, (), 1, "mse", bias=False)
        with pytest.raises(ValueError):
            server_loss.empirical_server_loss_check(spec, [nn.Batch([[1.0]], [1.0])],
                                                    [np.array([0.0])])
