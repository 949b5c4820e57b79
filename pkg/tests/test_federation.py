import numpy as np
import pytest

from fedgma import data, federation, nn
from fedgma.synth import synthetic_digits

TOY = nn.ModelSpec(1, (), 1, "mse", bias=False)


def toy_client(cid, xs, ys):
    return data.ClientState(cid, nn.Batch([[x] for x in xs], ys), len(xs))


def mask_oracle(grads, p):
    """Brute-force sign counting, independent of the vectorized path."""
    k = len(grads)
    out = []
    for j in range(len(grads[0])):
        pos = sum(1 for g in grads if g[j] > 0)
        neg = sum(1 for g in grads if g[j] < 0)
        out.append(1.0 if abs(pos - neg) >= p * k else 0.0)
    return np.array(out)


class TestClientUpdate:
    def test_single_step_analytic(self):
        # w=1, x=1, y=2: grad = 2(w*x - y)*x = -2; w' = 1 - 0.5*(-2) = 2
        res = federation.client_update(
            np.array([1.0]), toy_client(0, [1.0], [2.0]), TOY,
            client_lr=0.5, local_epochs=1, seed=0)
        assert res.grad[0] == -2.0
        assert res.params[0] == 2.0
        assert res.sample_count == 1

    def test_stationary_point_unmoved(self):
        client = toy_client(0, [1.0, 2.0], [0.5, 1.0])  # exact fit at w=0.5
        res = federation.client_update(
            np.array([0.5]), client, TOY, client_lr=0.1, local_epochs=4, seed=1)
        assert np.array_equal(res.grad, [0.0])
        assert np.array_equal(res.params, [0.5])

    def test_identical_clients_same_seed_identical_results(self):
        spec = nn.ModelSpec(2, ((3, "tanh"),), 1, "cross-entropy")
        w = nn.init_params(spec, 0)
        rng = np.random.default_rng(2)
        shard = nn.Batch(rng.uniform(0, 1, (10, 2)), rng.integers(0, 2, 10))
        a = federation.client_update(w, data.ClientState(0, shard, 10), spec,
                                     0.05, 3, seed=77, batch_size=4)
        b = federation.client_update(w, data.ClientState(0, shard, 10), spec,
                                     0.05, 3, seed=77, batch_size=4)
        assert np.array_equal(a.params, b.params)
        assert np.array_equal(a.grad, b.grad)
        assert a.train_loss == b.train_loss

    def test_pseudo_gradient_reconstructs_net_update(self):
        client = toy_client(0, [1.0], [2.0])
        res = federation.client_update(
            np.array([1.0]), client, TOY, client_lr=0.5, local_epochs=2,
            seed=0, gradient_source="pseudo-gradient")
        # (w_start - w_end) / lr
        assert res.grad[0] == pytest.approx((1.0 - res.params[0]) / 0.5, abs=1e-15)

    def test_server_params_not_mutated(self):
        w = np.array([1.0])
        federation.client_update(w, toy_client(0, [1.0], [2.0]), TOY, 0.5, 1, seed=0)
        assert w[0] == 1.0

    def test_bad_epochs_rejected(self):
        with pytest.raises(ValueError):
            federation.client_update(np.array([1.0]), toy_client(0, [1.0], [2.0]),
                                     TOY, 0.5, 0, seed=0)


class TestComputeMask:
    def test_unanimous_signs_survive(self):
        grads = np.array([[0.1], [0.2], [0.3], [0.4], [0.5]])
        assert federation.compute_mask(grads, 0.8)[0] == 1.0

    def test_one_dissenter_killed_at_point_eight(self):
        grads = np.array([[0.1], [0.2], [0.3], [0.4], [-0.5]])
        assert federation.compute_mask(grads, 0.8)[0] == 0.0

    def test_zero_counts_toward_neither_sign(self):
        grads = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [-1.0, -1.0, 1.0], [0.0, -1.0, -1.0]])
        assert np.array_equal(federation.compute_mask(grads, 0.5), [0.0, 0.0, 1.0])

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            k = int(rng.integers(1, 9))
            dim = int(rng.integers(1, 17))
            grads = rng.normal(size=(k, dim))
            grads[rng.random(size=grads.shape) < 0.2] = 0.0
            for p in (0.0, 0.5, 0.8, 1.0):
                assert np.array_equal(
                    federation.compute_mask(grads, p), mask_oracle(grads, p))

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        grads = rng.normal(size=(6, 40))
        prev = federation.compute_mask(grads, 0.0)
        for p in (0.3, 0.6, 0.9, 1.0):
            cur = federation.compute_mask(grads, p)
            assert np.all(cur <= prev)
            prev = cur

    def test_scale_invariant(self):
        rng = np.random.default_rng(4)
        grads = rng.normal(size=(5, 20))
        scales = rng.uniform(0.1, 10, size=(5, 1))
        assert np.array_equal(
            federation.compute_mask(grads, 0.8),
            federation.compute_mask(grads * scales, 0.8))

    def test_idempotent_on_survivors(self):
        rng = np.random.default_rng(5)
        grads = rng.normal(size=(7, 30))
        mask = federation.compute_mask(grads, 0.8)
        again = federation.compute_mask(grads * mask, 0.8)
        assert np.all(again[mask == 1.0] == 1.0)

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            federation.compute_mask(np.ones((2, 2)), 1.5)


def result(cid, grad, params, count):
    return federation.RoundResult(cid, np.asarray(grad, float), np.asarray(params, float),
                                  count, 0.0)


class TestAggregation:
    def test_symmetric_average(self):
        out = federation.aggregate_params([result(0, [0], [1.0], 1), result(1, [0], [3.0], 1)])
        assert out[0] == 2.0

    def test_weighted_average(self):
        out = federation.aggregate_params([result(0, [0], [0.0], 1), result(1, [0], [4.0], 3)])
        assert out[0] == 3.0

    def test_single_client_identity(self):
        out = federation.aggregate_params([result(0, [0], [1.5, -2.5], 7)])
        assert np.array_equal(out, [1.5, -2.5])

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(6)
        results = [result(i, [0] * 5, rng.normal(size=5), int(rng.integers(1, 100)))
                   for i in range(6)]
        out = federation.aggregate_params(results)
        stack = np.stack([r.params for r in results])
        assert np.all(out >= stack.min(axis=0) - 1e-12)
        assert np.all(out <= stack.max(axis=0) + 1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            federation.aggregate_params([])

    def test_masked_grads_all_agree_equals_plain_average(self):
        rng = np.random.default_rng(7)
        signs = np.sign(rng.normal(size=12))
        signs[signs == 0] = 1.0
        results = [result(i, np.abs(rng.normal(size=12)) * signs, [0] * 12,
                          int(rng.integers(1, 50))) for i in range(5)]
        masked = federation.aggregate_masked_grads(results, 1.0)
        weights = np.array([r.sample_count for r in results], float)
        plain = (weights / weights.sum()) @ np.stack([r.grad for r in results])
        assert np.array_equal(masked, plain)

    def test_masked_grads_disagreement_zeroed(self):
        results = [result(0, [1.0, -1.0], [0, 0], 1), result(1, [-1.0, -1.0], [0, 0], 1)]
        out = federation.aggregate_masked_grads(results, 1.0)
        assert np.array_equal(out, [0.0, -1.0])

    def test_threshold_zero_equals_plain_average(self):
        rng = np.random.default_rng(9)
        results = [result(i, rng.normal(size=8), [0] * 8, int(rng.integers(1, 9)))
                   for i in range(4)]
        out = federation.aggregate_masked_grads(results, 0.0)
        weights = np.array([r.sample_count for r in results], float)
        plain = (weights / weights.sum()) @ np.stack([r.grad for r in results])
        assert np.array_equal(out, plain)


class TestSelectClients:
    def test_full_participation(self):
        assert federation.select_clients(10, 10, seed=0, round_index=0) == list(range(10))

    def test_deterministic_singleton(self):
        a = federation.select_clients(10, 1, seed=5, round_index=3)
        assert a == federation.select_clients(10, 1, seed=5, round_index=3)
        assert len(a) == 1

    def test_uniform_frequency(self):
        counts = np.zeros(10)
        for t in range(10000):
            (c,) = federation.select_clients(10, 1, seed=42, round_index=t)
            counts[c] += 1
        assert np.all(np.abs(counts / 10000 - 0.1) < 0.02)

    def test_too_many_rejected(self):
        with pytest.raises(ValueError):
            federation.select_clients(3, 4, seed=0, round_index=0)


def fed_config(**kw):
    base = dict(client_lr=0.1, server_lr=0.5, local_epochs=1,
                mask_threshold=0.8, clients_per_round=2)
    base.update(kw)
    return federation.FederationConfig(**base)


class TestServerRounds:
    def test_hand_traced_round(self):
        # clients (x=1,y=2) and (x=1,y=3) from w=1, lr_c=0.1, one epoch:
        #   grads -2 and -4, locals 1.2 and 1.4 -> avg 1.3
        #   both negative -> mask 1 -> masked avg -3
        #   w_t = 1.3 - 0.5*(-3) = 2.8
        state = federation.ServerState(0, np.array([1.0]), fed_config())
        clients = [toy_client(0, [1.0], [2.0]), toy_client(1, [1.0], [3.0])]
        new, results = federation.server_round_gma(state, clients, TOY, seed=0)
        assert [r.grad[0] for r in results] == [-2.0, -4.0]
        assert [r.params[0] for r in results] == [pytest.approx(1.2), pytest.approx(1.4)]
        assert new.params[0] == pytest.approx(2.8, abs=1e-12)
        assert new.round == 1

    def test_fedavg_hand_traced(self):
        state = federation.ServerState(0, np.array([1.0]), fed_config())
        clients = [toy_client(0, [1.0], [2.0]), toy_client(1, [1.0], [3.0])]
        new, _ = federation.server_round_fedavg(state, clients, TOY, seed=0)
        assert new.params[0] == pytest.approx(1.3, abs=1e-12)

    def test_zero_server_lr_reduces_to_fedavg(self):
        spec = nn.ModelSpec(3, ((4, "relu"),), 1, "cross-entropy")
        rng = np.random.default_rng(1)
        clients = [
            data.ClientState(i, nn.Batch(rng.uniform(0, 1, (8, 3)), rng.integers(0, 2, 8)), 8)
            for i in range(3)
        ]
        w0 = nn.init_params(spec, 3)
        a = federation.ServerState(0, w0, fed_config(server_lr=0.0, local_epochs=2))
        b = federation.ServerState(0, w0, fed_config(server_lr=0.0, local_epochs=2))
        for _ in range(5):
            a, _ = federation.server_round_gma(a, clients, spec, seed=10)
            b, _ = federation.server_round_fedavg(b, clients, spec, seed=10)
            assert np.array_equal(a.params, b.params)

    def test_single_client_fedavg_keeps_local_params(self):
        state = federation.ServerState(0, np.array([1.0]), fed_config())
        client = toy_client(0, [1.0], [2.0])
        new, results = federation.server_round_fedavg(state, [client], TOY, seed=0)
        assert new.params[0] == results[0].params[0]

    def test_results_sorted_by_client_id(self):
        state = federation.ServerState(0, np.array([1.0]), fed_config())
        clients = [toy_client(5, [1.0], [2.0]), toy_client(2, [1.0], [3.0])]
        _, results = federation.server_round_gma(state, clients, TOY, seed=0)
        assert [r.client_id for r in results] == [2, 5]

    def test_real_data_round_runs(self):
        corpus = synthetic_digits(100, seed=0)
        shards = data.partition_noniid(corpus, 5, seed=0)
        clients = [
            data.ClientState(c.client_id,
                             data.colorize_binary(c.shard, 0.1, False, seed=c.client_id),
                             c.sample_count)
            for c in shards
        ]
        spec = nn.ModelSpec(3 * 28 * 28, ((8, "relu"),), 1, "cross-entropy")
        state = federation.ServerState(
            0, nn.init_params(spec, 0),
            fed_config(client_lr=0.001, local_epochs=1, clients_per_round=5))
        new, results = federation.server_round_gma(state, clients, spec, seed=0)
        assert new.round == 1
        assert len(results) == 5
        assert np.all(np.isfinite(new.params))
