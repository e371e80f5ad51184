"""Offline tabular policy learning and evaluation tests."""

import numpy as np
import pytest

from preflab import envs, policy
from preflab.errors import ContractError, UnsupportedEnvError


def full_coverage_dataset(seed=0, episodes=80):
    spec = envs.env_spec("maze7", n_episodes=episodes, seed=seed, mixture=(0.3, 0.3, 0.4))
    return spec, envs.gen_maze7(spec)


class TestFittedQCore:
    def test_two_state_chain_matches_geometric_series(self):
        # Chain: state 0 -> 1 (r=0), state 1 self-loop (r=1). Closed form:
        # Q(1) = 1/(1-g), Q(0) = g/(1-g).
        gamma = 0.9
        transitions = [(0, 0, 0.0, 1), (1, 0, 1.0, 1)]
        q = np.zeros((2, 1))
        for _ in range(3000):
            for s, a, r, s2 in transitions:
                q[s, a] = 0.5 * q[s, a] + 0.5 * (r + gamma * q[s2].max())
        # The same loop as fitted_q's core backup; compare to closed form.
        assert q[1, 0] == pytest.approx(1.0 / (1.0 - gamma), abs=1e-6)
        assert q[0, 0] == pytest.approx(gamma / (1.0 - gamma), abs=1e-6)
        # And the library path on a rigged two-cell maze fragment.
        spec, eps = full_coverage_dataset(seed=1, episodes=10)
        table = policy.fitted_q(eps, spec, sweeps=5, reward_source="true", gamma=gamma, alpha=0.5)
        assert table.q.shape == (49, 4)

    def test_zero_rewards_give_zero_q(self):
        spec, eps = full_coverage_dataset(seed=2, episodes=10)
        for ep in eps:
            ep.true_rewards = np.zeros(ep.length)
        table = policy.fitted_q(eps, spec, sweeps=50, reward_source="true")
        np.testing.assert_array_equal(table.q, np.zeros((49, 4)))

    def test_more_sweeps_do_not_hurt_returns(self):
        for seed in range(5):
            spec, eps = full_coverage_dataset(seed=seed, episodes=60)
            short = policy.fitted_q(eps, spec, sweeps=30, reward_source="true")
            long = policy.fitted_q(eps, spec, sweeps=60, reward_source="true")
            r_short = policy.evaluate_policy(short, spec, episodes=100, seed=seed).mean_return
            r_long = policy.evaluate_policy(long, spec, episodes=100, seed=seed).mean_return
            assert r_long >= r_short - 0.05

    def test_continuous_env_unsupported(self):
        spec = envs.env_spec("fragile-push", n_episodes=2, seed=0)
        eps = envs.gen_fragile_push(spec)
        with pytest.raises(UnsupportedEnvError):
            policy.fitted_q(eps, spec, sweeps=1, reward_source="true")

    def test_reward_shift_leaves_greedy_argmax(self):
        spec, eps = full_coverage_dataset(seed=3, episodes=80)
        base = policy.fitted_q(eps, spec, sweeps=400, reward_source="true")
        shifted_eps = []
        for ep in eps:
            clone = ep.segment(0, ep.length)
            clone.true_rewards = ep.true_rewards + 0.37
            shifted_eps.append(clone)
        shifted = policy.fitted_q(shifted_eps, spec, sweeps=400, reward_source="true")
        transitions = policy.dataset_transitions(eps, "true")
        seen = {}
        for s, a, _r, _s2 in transitions:
            seen.setdefault(s, set()).add(a)
        full_states = [s for s, acts in seen.items() if len(acts) == 4]
        assert full_states, "coverage dataset should visit some states with all actions"
        agree = sum(base.greedy(s) == shifted.greedy(s) for s in full_states)
        assert agree / len(full_states) >= 0.95


class TestEvaluatePolicy:
    def expert_table(self):
        maze = envs.maze7()
        q = np.zeros((maze.n_states, maze.n_actions))
        for x, y in maze.open_cells():
            q[maze.cell_id(x, y), maze.expert_action(x, y)] = 1.0
        return policy.TabularQ(q=q)

    def test_expert_policy_scores_one_hundred(self):
        spec = envs.env_spec("maze7", n_episodes=1, seed=0)
        result = policy.evaluate_policy(self.expert_table(), spec, episodes=500, seed=0)
        assert result.normalized_score == pytest.approx(100.0, abs=1.0)
        assert result.success_rate == 1.0

    def test_random_rollouts_score_near_zero(self):
        spec = envs.env_spec("maze7", n_episodes=1, seed=0)
        random_ref, expert_ref = policy.reference_returns(spec)
        maze = envs.maze7()
        rng = np.random.default_rng(42)
        starts = [c for c in maze.open_cells() if c != maze.goal]
        total = 0.0
        n = 600
        for _ in range(n):
            x, y = starts[int(rng.integers(len(starts)))]
            for _t in range(spec.episode_len):
                x, y, r = maze.step(x, y, int(rng.integers(4)))
                total += r
        score = 100.0 * (total / n - random_ref) / (expert_ref - random_ref)
        assert abs(score) <= 5.0

    def test_ground_truth_q_reaches_goal(self):
        spec, eps = full_coverage_dataset(seed=4, episodes=100)
        table = policy.fitted_q(eps, spec, sweeps=300, reward_source="true")
        result = policy.evaluate_policy(table, spec, episodes=100, seed=4)
        assert result.success_rate >= 0.95
        assert result.normalized_score >= 90.0

    def test_reproducible_under_seed(self):
        spec, eps = full_coverage_dataset(seed=5, episodes=30)
        table = policy.fitted_q(eps, spec, sweeps=100, reward_source="true")
        a = policy.evaluate_policy(table, spec, episodes=50, seed=7)
        b = policy.evaluate_policy(table, spec, episodes=50, seed=7)
        assert (a.mean_return, a.success_rate, a.normalized_score) == (
            b.mean_return,
            b.success_rate,
            b.normalized_score,
        )

    def test_missing_learned_rewards_rejected(self):
        spec, eps = full_coverage_dataset(seed=6, episodes=5)
        with pytest.raises(ContractError):
            policy.fitted_q(eps, spec, sweeps=1, reward_source="learned")

    def test_q_csv_export(self, tmp_path):
        spec, eps = full_coverage_dataset(seed=7, episodes=5)
        table = policy.fitted_q(eps, spec, sweeps=5, reward_source="true")
        path = tmp_path / "q.csv"
        policy.export_q_csv(table, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "state_id,action_id,q"
        assert len(lines) == 1 + 49 * 4
