import numpy as np
import pytest

from latentda.branch import DomainBranch, attach_point
from latentda.errors import DimensionError, UsageError
from latentda.gradcheck import check_network
from latentda.network import Network, NetworkConfig
from latentda.train import Trainer


class TestAttachPoint:
    def test_defaults(self):
        assert attach_point(1) == 0
        assert attach_point(2) == 1
        assert attach_point(5) == 1

    def test_override(self):
        assert attach_point(3, 2) == 2
        with pytest.raises(ValueError):
            attach_point(3, 3)
        with pytest.raises(ValueError):
            attach_point(0)


class TestBranch:
    def test_pools_use_their_own_heads(self, rng):
        br = DomainBranch(4, 6, 2, 3, rng)
        p_s, p_t = br.forward(rng.normal(size=(7, 4)), 3)
        assert p_s.shape == (3, 2) and p_t.shape == (4, 3)
        np.testing.assert_allclose(p_s.sum(axis=1), 1.0)
        np.testing.assert_allclose(p_t.sum(axis=1), 1.0)

    def test_empty_pool(self, rng):
        br = DomainBranch(4, 6, 2, 1, rng)
        p_s, p_t = br.forward(rng.normal(size=(5, 4)), 5)
        assert p_t.shape == (0, 1)
        dx = br.backward(np.ones((5, 2)), np.zeros((0, 1)))
        assert dx.shape == (5, 4)

    def test_small_heads_start_near_uniform(self, rng):
        br = DomainBranch(4, 16, 3, 1, rng, head_scale=0.01)
        p_s, _ = br.forward(rng.normal(size=(10, 4)), 10)
        assert np.max(np.abs(p_s - 1 / 3)) < 0.05

    def test_predict_assignments(self, rng):
        br = DomainBranch(4, 6, 2, 2, rng)
        a = br.predict_assignments(rng.normal(size=(5, 4)), "target")
        a.validate()
        assert len(a) == 5

    def test_backward_before_forward(self, rng):
        with pytest.raises(UsageError):
            DomainBranch(2, 2, 1, 1, rng).backward(np.zeros((1, 1)), np.zeros((0, 1)))


class TestNetwork:
    def make(self, rng, **kw):
        cfg = NetworkConfig(n_in=3, num_classes=2, hidden=[5, 4], k_source=2, k_target=1,
                            branch_width=4, **kw)
        return Network(cfg, rng)

    def test_assignment_layout(self, rng):
        net = self.make(rng)
        fwd = net.forward(rng.normal(size=(6, 3)), 4)
        w = fwd.assignments.w
        assert w.shape == (6, 3)
        assert not w[:4, 2].any() and not w[4:, :2].any()
        fwd.assignments.validate()

    def test_whole_network_gradients(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            errors = check_network(rng, int(rng.integers(4, 12)), int(rng.integers(1, 5)))
            assert max(errors.values()) <= 1e-4, max(errors, key=errors.get)

    def test_known_rows_are_clamped(self, rng):
        net = self.make(rng)
        fwd = net.forward(rng.normal(size=(6, 3)), 4, known_domains=np.array([1, -1, 0, -1]))
        assert fwd.assignments.w[0].tolist() == [0.0, 1.0, 0.0]
        assert fwd.assignments.clamped.tolist() == [True, False, True, False, False, False]

    def test_fixed_assignments_bypass_branch(self, rng):
        net = self.make(rng)
        fixed = np.eye(3)[[0, 1, 0, 1, 2, 2]]
        fwd = net.forward(rng.normal(size=(6, 3)), 4, fixed_assignments=fixed)
        assert fwd.source_domain_probs is None
        net.zero_grad()
        net.backward(rng.normal(size=(6, 2)))
        for _, layer in net.branch.layers():
            for g in layer.grads.values():
                assert not g.any()

    def test_state_round_trip(self, rng):
        a, b = self.make(rng), self.make(np.random.default_rng(5))
        x = rng.normal(size=(6, 3))
        a.forward(x, 3)  # moves running statistics
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.forward(x, 3, train=False).class_probs,
                                      b.forward(x, 3, train=False).class_probs)

    def test_state_mismatch(self, rng):
        net = self.make(rng)
        state = net.state_dict()
        state.pop(next(iter(state)))
        with pytest.raises(DimensionError):
            net.load_state_dict(state)

    def test_input_width_checked(self, rng):
        with pytest.raises(DimensionError):
            self.make(rng).forward(np.zeros((4, 2)), 2)


def test_unified_mode_matches_plain_split_batchnorm(tiny_config):
    """With one latent domain per pool, mDA is per-pool batch normalization."""
    base = tiny_config.replace(k_source=1, k_target=1, total_steps=40)
    unified = Trainer(base.replace(mode="unified"))
    plain = Trainer(base.replace(normalization="split_bn"))
    for _ in range(40):
        ru, _ = unified.train_step()
        rp, _ = plain.train_step()
        for k, v in ru.as_dict().items():
            assert abs(v - rp.as_dict()[k]) <= 1e-10, k
