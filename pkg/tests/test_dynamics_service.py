"""
Tests for the discrete spread dynamics in all three representations
"""

import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from config.app_config import AppConfig
from services.activation_service import ActivationKind, psi
from services.dynamics_service import (
    Representation,
    predict_effective_prob,
    simulate,
    simulate_streaming,
    step_effective_info,
    step_effective_prob,
    step_general_info,
    step_general_prob,
    step_multi_info,
    step_multi_prob,
    step_single_info,
    step_single_log_healthy,
    step_single_prob,
)
from services.exceptions import DomainError, ValidationError
from services.network_service import NetworkKind, TransmissionNetwork, info_to_prob, prob_to_info


def path_graph(n: int) -> np.ndarray:
    a = np.eye(n)
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return a


class TestEffective:
    def test_identity_keeps_state(self):
        net = TransmissionNetwork(a=np.eye(3), w=None, kind=NetworkKind.EFFECTIVE)
        s = np.array([0.2, 1.5, 0.0])
        np.testing.assert_allclose(step_effective_info(net, s), s, rtol=1e-14)

    def test_complete_pair(self):
        net = TransmissionNetwork(a=np.ones((2, 2)), w=None, kind=NetworkKind.EFFECTIVE)
        np.testing.assert_allclose(step_effective_info(net, [1.0, 0.0]), [1.0, 1.0])

    def test_infinite_information_is_absorbing(self):
        net = TransmissionNetwork(a=path_graph(3), w=None, kind=NetworkKind.EFFECTIVE)
        s = step_effective_info(net, [math.inf, 0.0, 0.0])
        assert s[0] == math.inf and s[1] == math.inf and s[2] == 0.0

    def test_prob_step_matches_info_step(self, rng):
        net = TransmissionNetwork(a=path_graph(5), w=None, kind=NetworkKind.EFFECTIVE)
        p = rng.uniform(0.0, 0.9, size=5)
        np.testing.assert_allclose(step_effective_prob(net, p),
                                   info_to_prob(step_effective_info(net, prob_to_info(p))), atol=1e-14)

    def test_zero_steps_predict_input(self):
        net = TransmissionNetwork(a=path_graph(3), w=None, kind=NetworkKind.EFFECTIVE)
        p = np.array([0.1, 0.7, 0.25])
        np.testing.assert_allclose(predict_effective_prob(net, p, 0), p, atol=1e-15)

    def test_isolated_node_is_constant(self):
        net = TransmissionNetwork(a=np.ones((1, 1)), w=None, kind=NetworkKind.EFFECTIVE)
        assert predict_effective_prob(net, [0.3], 2)[0] == pytest.approx(0.3, abs=1e-15)

    def test_path_reaches_far_end_in_two_steps(self):
        net = TransmissionNetwork(a=path_graph(3), w=None, kind=NetworkKind.EFFECTIVE)
        assert predict_effective_prob(net, [1.0, 0.0, 0.0], 2)[2] == 1.0

    def test_negative_steps_rejected(self):
        net = TransmissionNetwork(a=np.eye(2), w=None, kind=NetworkKind.EFFECTIVE)
        with pytest.raises(DomainError):
            predict_effective_prob(net, [0.0, 0.0], -1)

    def test_kind_mismatch(self, two_node_net):
        with pytest.raises(ValidationError) as info:
            step_effective_info(two_node_net, [0.0, 0.0])
        assert info.value.location == "kind"


class TestSingleParticle:
    def test_no_infection_is_fixed_point(self, rng, make_single_net):
        net = make_single_net(rng, 7)
        np.testing.assert_array_equal(step_single_prob(net, np.zeros(7)), np.zeros(7))
        np.testing.assert_array_equal(step_single_info(net, np.zeros(7)), np.zeros(7))

    def test_two_node_hand_evaluation(self, two_node_net):
        np.testing.assert_allclose(step_single_prob(two_node_net, [1.0, 0.0]), [0.5, 0.5], atol=1e-15)

    def test_geometric_decay_of_isolated_node(self):
        net = TransmissionNetwork(a=np.ones((1, 1)), w=np.full((1, 1), 0.9))
        trajectory = simulate(net, [0.8], 200)
        expected = 0.8 * 0.9 ** np.arange(201)
        assert np.max(np.abs(trajectory.probabilities()[:, 0] - expected)) < 1e-12

    def test_only_self_transmission_decays_geometrically(self):
        w = np.array([[0.7, 0.0], [0.0, 0.4]])
        net = TransmissionNetwork(a=np.ones((2, 2)), w=w)
        p = simulate(net, [0.5, 1.0], 6).probabilities()
        np.testing.assert_allclose(p[6], [0.5 * 0.7 ** 6, 0.4 ** 6], atol=1e-15)

    def test_full_pass_reduces_to_linear_information(self):
        a = path_graph(4)
        net = TransmissionNetwork(a=a, w=np.ones((4, 4)))
        s = np.array([0.3, 0.0, 1.2, 0.5])
        np.testing.assert_allclose(step_single_info(net, s), a @ s, rtol=1e-14)

    @pytest.mark.slow
    def test_representations_agree(self, rng, make_single_net):
        for _ in range(500):
            n = int(rng.integers(2, 51))
            net = make_single_net(rng, n, density=float(rng.uniform(0.05, 0.5)))
            p0 = rng.uniform(0.0, 1.0, size=n)
            p_traj = simulate(net, p0, 100, Representation.PROBABILITY).probabilities()
            s_traj = simulate(net, p0, 100, Representation.INFO, initial_representation="prob")
            assert np.max(np.abs(p_traj - s_traj.probabilities())) < 1e-10

    def test_log_healthy_form_agrees(self, rng, make_single_net):
        net = make_single_net(rng, 12)
        p = rng.uniform(0.0, 0.95, size=12)
        s_bar = np.log1p(-p)
        np.testing.assert_allclose(step_single_log_healthy(net, s_bar), np.log1p(-step_single_prob(net, p)),
                                   rtol=1e-10, atol=1e-12)

    def test_log_healthy_rejects_positive(self, two_node_net):
        with pytest.raises(DomainError):
            step_single_log_healthy(two_node_net, [0.1, -1.0])

    def test_large_network_uses_log_space(self, rng, make_single_net):
        net = make_single_net(rng, 120, density=0.05)
        p = rng.uniform(0.0, 1.0, size=120)
        p_next = step_single_prob(net, p)
        np.testing.assert_allclose(p_next, info_to_prob(step_single_info(net, prob_to_info(p))), atol=1e-12)

    def test_sparse_star_step(self, make_star_net):
        net = make_star_net(3000, spoke=0.01)
        p = np.zeros(3000)
        p[0] = 0.5
        p_next = step_single_prob(net, p)
        assert p_next[0] == pytest.approx(0.15, abs=1e-15)
        np.testing.assert_allclose(p_next[1:], 0.005, atol=1e-15)
        np.testing.assert_allclose(info_to_prob(step_single_info(net, prob_to_info(p))), p_next, atol=1e-15)

    def test_sparse_and_dense_storage_agree(self, rng, make_single_net, monkeypatch):
        dense = make_single_net(rng, 30)
        monkeypatch.setattr(AppConfig, "SPARSE_DENSITY_THRESHOLD", 1.0)
        sparse = TransmissionNetwork(a=dense.a, w=dense.w)
        assert sparse.storage == "sparse"
        p = rng.uniform(size=30)
        np.testing.assert_array_equal(step_single_prob(sparse, p), step_single_prob(dense, p))
        s = prob_to_info(p)
        np.testing.assert_array_equal(step_single_info(sparse, s), step_single_info(dense, s))


class TestMultiParticle:
    def test_counts_act_as_exponents(self):
        a = np.array([[1.0, 2.0], [0.0, 3.0]])
        w = np.array([[0.5, 0.3], [0.0, 0.2]])
        net = TransmissionNetwork(a=a, w=w, kind=NetworkKind.MULTI)
        p = np.array([0.4, 0.6])
        expected = [1.0 - (1.0 - 0.5 * 0.4) * (1.0 - 0.3 * 0.6) ** 2, 1.0 - (1.0 - 0.2 * 0.6) ** 3]
        np.testing.assert_allclose(step_multi_prob(net, p), expected, atol=1e-15)

    def test_unit_counts_match_single_particle(self, rng, make_single_net):
        single = make_single_net(rng, 9)
        multi = TransmissionNetwork(a=single.a, w=single.w, kind=NetworkKind.MULTI)
        p = rng.uniform(size=9)
        np.testing.assert_allclose(step_multi_prob(multi, p), step_single_prob(single, p), atol=1e-15)

    def test_fractional_counts_in_information_space(self):
        net = TransmissionNetwork(a=np.array([[1.5]]), w=np.array([[0.6]]), kind=NetworkKind.MULTI)
        p = 0.3
        s_next = step_multi_info(net, prob_to_info([p]))
        assert info_to_prob(s_next)[0] == pytest.approx(1.0 - (1.0 - 0.6 * p) ** 1.5, abs=1e-15)

    @staticmethod
    def doubled_links(rng, n):
        """Count-2 multi network and its single-particle expansion with a mirror node per node."""
        counts = rng.integers(0, 3, size=(n, n)).astype(float)
        np.fill_diagonal(counts, 2.0)
        w = rng.random((n, n))
        multi = TransmissionNetwork(a=counts, w=w, kind=NetworkKind.MULTI)
        # node j + n mirrors node j; a count of 2 becomes links to both copies
        row = np.hstack([counts >= 1.0, counts == 2.0]).astype(float)
        single = TransmissionNetwork(a=np.vstack([row, row]), w=np.tile(w, (2, 2)), kind=NetworkKind.SINGLE)
        return multi, single

    @pytest.mark.parametrize("n", [5, 40])
    def test_count_two_is_doubled_link_prob(self, rng, n):
        multi, single = self.doubled_links(rng, n)
        p_multi = rng.uniform(size=n)
        p_single = np.concatenate([p_multi, p_multi])
        for _ in range(5):
            p_multi = step_multi_prob(multi, p_multi)
            p_single = step_single_prob(single, p_single)
            np.testing.assert_allclose(p_single[:n], p_multi, atol=1e-12)
            np.testing.assert_allclose(p_single[n:], p_multi, atol=1e-12)

    @pytest.mark.parametrize("n", [5, 40])
    def test_count_two_is_doubled_link_info(self, rng, n):
        multi, single = self.doubled_links(rng, n)
        s_multi = prob_to_info(rng.uniform(size=n))
        s_single = np.concatenate([s_multi, s_multi])
        for _ in range(5):
            s_multi = step_multi_info(multi, s_multi)
            s_single = step_single_info(single, s_single)
            np.testing.assert_allclose(s_single[:n], s_multi, rtol=1e-12)
            np.testing.assert_allclose(s_single[n:], s_multi, rtol=1e-12)

    def test_no_infection_is_fixed_point(self):
        net = TransmissionNetwork(a=np.full((3, 3), 2.0), w=np.full((3, 3), 0.4), kind=NetworkKind.MULTI)
        np.testing.assert_array_equal(step_multi_prob(net, np.zeros(3)), np.zeros(3))


class TestGeneralForm:
    def layers(self, a, w, bias=None, activation=ActivationKind.TLOG_SIGMOID):
        return SimpleNamespace(a=a, w=w, bias=bias, activation=activation)

    def test_identity_wiring_at_full_pass(self):
        layers = self.layers([np.eye(3)], [np.ones((3, 3))])
        s = np.array([0.4, -2.0, 3.0])
        np.testing.assert_allclose(step_general_info(layers, s, 0), s, rtol=1e-14)

    def test_negative_states_propagate(self):
        layers = self.layers([np.array([[1.0, -2.0], [0.5, 0.0]])], [np.full((2, 2), 0.5)], [np.array([0.1, -0.3])])
        s = np.array([-1.0, 2.0])
        out = step_general_info(layers, s, 0)
        expected = [psi(0.5, -1.0) - 2.0 * psi(0.5, 2.0) + 0.1, 0.5 * psi(0.5, -1.0) - 0.3]
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_rectangular_layers(self):
        layers = self.layers([np.ones((2, 3)), np.ones((1, 2))], [np.ones((2, 3)), np.ones((1, 2))])
        hidden = step_general_info(layers, [1.0, 2.0, 3.0], 0)
        np.testing.assert_allclose(step_general_info(layers, hidden, 1), [12.0])

    def test_probability_form_agrees(self, rng):
        a = rng.uniform(0.0, 2.0, size=(4, 4))
        w = rng.uniform(size=(4, 4))
        bias = rng.uniform(0.0, 0.5, size=4)
        layers = self.layers([a], [w], [bias])
        p = rng.uniform(0.0, 0.9, size=4)
        from_info = info_to_prob(step_general_info(layers, prob_to_info(p), 0))
        np.testing.assert_allclose(step_general_prob(layers, p, 0), from_info, atol=1e-14)

    def test_probability_form_requires_tlogsigmoid(self):
        layers = self.layers([np.eye(2)], [np.ones((2, 2))], activation=ActivationKind.TSOFT_AFFINE)
        with pytest.raises(DomainError):
            step_general_prob(layers, [0.1, 0.2], 0)

    def test_layer_index_checked(self):
        with pytest.raises(DomainError):
            step_general_info(self.layers([np.eye(2)], [np.ones((2, 2))]), [0.0, 0.0], 1)


class TestSimulation:
    def test_zero_horizon(self, two_node_net):
        trajectory = simulate(two_node_net, [0.3, 0.1], 0)
        assert trajectory.horizon == 0
        assert trajectory.states.shape == (1, 2)

    def test_horizon_above_streaming_limit(self, two_node_net, monkeypatch):
        monkeypatch.setattr(AppConfig, "STREAMING_HORIZON_LIMIT", 5)
        with pytest.raises(DomainError):
            simulate(two_node_net, [0.3, 0.1], 6)

    def test_streaming_matches_batch(self, rng, make_single_net):
        net = make_single_net(rng, 5)
        p0 = rng.uniform(size=5)
        seen = []
        final = simulate_streaming(net, p0, 30, lambda step, state: seen.append(step))
        assert seen == list(range(31))
        np.testing.assert_array_equal(final, simulate(net, p0, 30).states[-1])

    def test_log_healthy_simulation(self, two_node_net):
        trajectory = simulate(two_node_net, [1.0, 0.0], 1, Representation.LOG_HEALTHY, initial_representation="prob")
        np.testing.assert_allclose(trajectory.probabilities()[1], [0.5, 0.5], atol=1e-15)

    def test_general_network_rejected(self):
        net = TransmissionNetwork(a=np.eye(2), w=np.ones((2, 2)), kind=NetworkKind.GENERAL)
        with pytest.raises(ValidationError):
            simulate(net, [0.0, 0.0], 3)

    def test_initial_length_checked(self, two_node_net):
        with pytest.raises(DomainError):
            simulate(two_node_net, [0.1, 0.2, 0.3], 2)

    def test_contracting_network_dies_out_monotonically(self):
        a = np.ones((4, 4))
        w = np.full((4, 4), 0.2)
        net = TransmissionNetwork(a=a, w=w)
        p = simulate(net, np.ones(4), 150).probabilities()
        peaks = p.max(axis=1)
        assert np.all(np.diff(peaks) <= 0.0)
        assert peaks[-1] < 1e-6

    def test_save_csv_and_json(self, tmp_path, two_node_net):
        trajectory = simulate(two_node_net, [1.0, 0.0], 2)
        csv_path = trajectory.save(tmp_path / "t.csv")
        lines = csv_path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "step,node,p,s"
        assert len(lines) == 1 + 3 * 2
        assert lines[3].startswith("1,0,0.5,")
        payload = json.loads(trajectory.save(tmp_path / "t.json", fmt="json").read_text(encoding="utf-8"))
        assert payload["horizon"] == 2 and len(payload["steps"]) == 3
