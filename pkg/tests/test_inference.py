"""Sliding-window relabeling and attention extraction tests."""

import numpy as np
import pytest

from preflab import envs
from preflab import inference as inf
from preflab import models as mz
from preflab.data import Trajectory
from preflab.errors import ContractError, UnsupportedVariantError


def trained_like_model(variant="multimodal", seed=0, d_model=8, heads=2, t_max=8, dtype=np.float32):
    cfg = mz.ModelConfig(
        variant=variant, d_s=3, d_a=2, d_model=d_model, n_heads=heads,
        n_intra_layers=2, n_inter_layers=1, t_max=t_max, dropout=0.0,
    )
    model = mz.RewardModel.create(cfg, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 500)
    model.params["reward_head.w"].data[:] = rng.normal(scale=0.3, size=(d_model, 1)).astype(dtype)
    return model


def episode(rng, t=12, d_s=3, d_a=2):
    return Trajectory(
        id=f"ep{rng.integers(1 << 30)}",
        states=rng.normal(size=(t, d_s)),
        actions=rng.normal(size=(t, d_a)),
    )


class TestRelabel:
    def test_length_one_episode(self):
        model = trained_like_model()
        ep = episode(np.random.default_rng(0), t=1)
        out = inf.relabel([ep], model, window=4)[0]
        assert out.learned_rewards.shape == (1,)
        assert out.learned_rewards[0] == pytest.approx(model.score(ep).rewards[0])

    def test_markov_relabel_equals_direct_scores(self):
        cfg = mz.ModelConfig(variant="markov", d_s=3, d_a=2, mlp_hidden=(8, 8), dropout=0.0)
        model = mz.RewardModel.create(cfg, seed=1)
        rng = np.random.default_rng(1)
        model.params["mlp.w3"].data[:] = rng.normal(size=(8, 1)).astype(np.float32)
        ep = episode(rng, t=10)
        for window in (1, 4, 10):
            out = inf.relabel([ep], model, window=window)[0]
            np.testing.assert_allclose(out.learned_rewards, model.score(ep).rewards, atol=1e-9)

    def test_windows_match_independent_slicing(self):
        model = trained_like_model(seed=2)
        rng = np.random.default_rng(2)
        eps = [episode(rng, t=12) for _ in range(3)]
        window = 5
        out = inf.relabel(eps, model, window=window)
        for ep, labeled in zip(eps, out):
            for t in range(ep.length):
                start = max(0, t - window + 1)
                sliced = Trajectory(id="w", states=ep.states[start : t + 1], actions=ep.actions[start : t + 1])
                want = model.score(sliced).rewards[-1]
                assert labeled.learned_rewards[t] == pytest.approx(want, abs=1e-9)

    def test_relabel_bit_deterministic(self):
        model = trained_like_model(seed=3)
        eps = [episode(np.random.default_rng(3), t=9)]
        a = inf.relabel(eps, model, window=4)[0].learned_rewards
        b = inf.relabel(eps, model, window=4)[0].learned_rewards
        assert a.tobytes() == b.tobytes()

    def test_deployment_causality_via_truncation(self):
        model = trained_like_model(seed=4)
        ep = episode(np.random.default_rng(4), t=10)
        full = inf.relabel([ep], model, window=6)[0].learned_rewards
        for k in (3, 7):
            head = Trajectory(id="h", states=ep.states[:k], actions=ep.actions[:k])
            short = inf.relabel([head], model, window=6)[0].learned_rewards
            np.testing.assert_allclose(short, full[:k], atol=1e-9)

    def test_empty_input_rejected(self):
        with pytest.raises(ContractError):
            inf.relabel([], trained_like_model(), window=4)

    def test_window_beyond_t_max_rejected(self):
        with pytest.raises(ContractError):
            inf.relabel([episode(np.random.default_rng(5))], trained_like_model(t_max=8), window=9)


class TestExtractAttention:
    def test_single_step_all_series_one(self):
        model = trained_like_model(seed=5)
        seg = episode(np.random.default_rng(6), t=1)
        rec = inf.extract_attention(model, seg)
        np.testing.assert_array_equal(rec.state_weights, [1.0])
        np.testing.assert_array_equal(rec.action_weights, [1.0])
        np.testing.assert_array_equal(rec.inter_weights, [1.0])

    def test_uniform_attention_counts_attending_positions(self):
        model = trained_like_model(seed=6)
        # Zeroed query/key projections force uniform causal attention.
        for name, p in model.params.items():
            if ".attn.wq" in name or ".attn.wk" in name or name.endswith((".bq", ".bk")):
                p.data[:] = 0.0
        t = 6
        seg = episode(np.random.default_rng(7), t=t)
        rec = inf.extract_attention(model, seg)
        # Mass received by position j under uniform causal attention.
        want = np.array([sum(1.0 / (r + 1) for r in range(j, t)) for j in range(t)])
        want /= want.max()
        np.testing.assert_allclose(rec.state_weights, want, atol=1e-5)
        np.testing.assert_allclose(rec.inter_weights, want, atol=1e-5)
        assert rec.state_weights.argmax() == 0

    @pytest.mark.parametrize("variant", ["multimodal", "intra_only", "inter_only"])
    def test_bounds_and_normalization_sweep(self, variant):
        model = trained_like_model(variant=variant, seed=7)
        rng = np.random.default_rng(8)
        for _ in range(20):
            rec = inf.extract_attention(model, episode(rng, t=int(rng.integers(2, 9))))
            for series in (rec.state_weights, rec.action_weights, rec.inter_weights):
                assert series.min() >= 0.0 and series.max() <= 1.0 + 1e-12
                if np.any(series > 0):
                    assert series.max() == pytest.approx(1.0, abs=1e-9)

    def test_markov_unsupported(self):
        cfg = mz.ModelConfig(variant="markov", d_s=3, d_a=2)
        model = mz.RewardModel.create(cfg, seed=0)
        with pytest.raises(UnsupportedVariantError):
            inf.extract_attention(model, episode(np.random.default_rng(9), t=4))

    def test_csv_export(self, tmp_path):
        model = trained_like_model(seed=8)
        rec = inf.extract_attention(model, episode(np.random.default_rng(10), t=5))
        path = tmp_path / "att.csv"
        inf.write_attention_csv(rec, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,w_state,w_action,w_inter,reward"
        assert len(lines) == 6
