"""Offline policy learning on relabeled rewards: fitted tabular Q-iteration
restricted to dataset transitions, plus greedy-policy evaluation under the
environment's ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .envs import EnvSpec, maze7
from .errors import ContractError, UnsupportedEnvError


@dataclass
class TabularQ:
    q: np.ndarray  # [n_states, n_actions]
    gamma: float = 0.99
    alpha: float = 0.1
    env_name: str = "maze7"

    def greedy(self, state_id: int) -> int:
        return int(np.argmax(self.q[state_id]))


@dataclass
class PolicyEval:
    mean_return: float
    success_rate: float
    normalized_score: float


def _require_maze(env_name: str):
    if env_name != "maze7":
        raise UnsupportedEnvError(f"tabular policy learning needs a discrete env, got {env_name!r}")


def dataset_transitions(episodes, reward_source: str):
    """(s, a, r, s') tuples from consecutive steps; the final step of each
    episode has no recorded successor and is dropped."""
    maze = maze7()
    transitions = []
    for ep in episodes:
        rewards = ep.learned_rewards if reward_source == "learned" else ep.true_rewards
        if rewards is None:
            raise ContractError(f"episode {ep.id} lacks {reward_source} rewards")
        ids = [maze.state_id_from_features(row) for row in ep.states]
        acts = np.argmax(ep.actions, axis=1)
        for t in range(ep.length - 1):
            transitions.append((ids[t], int(acts[t]), float(rewards[t]), ids[t + 1]))
    return transitions


def fitted_q(
    episodes,
    spec: EnvSpec,
    sweeps: int,
    reward_source: str = "learned",
    gamma: float = 0.99,
    alpha: float = 0.1,
) -> TabularQ:
    """Offline Bellman backups over the fixed dataset, in dataset order:
    Q(s,a) <- (1-alpha) Q(s,a) + alpha [r + gamma max_a' Q(s',a')]."""
    _require_maze(spec.name)
    if not episodes:
        raise ContractError("fitted_q: empty dataset")
    if sweeps < 1:
        raise ContractError("fitted_q: sweeps must be >= 1")
    maze = maze7()
    transitions = dataset_transitions(episodes, reward_source)
    if not transitions:
        raise ContractError("fitted_q: dataset has no transitions")
    q = np.zeros((maze.n_states, maze.n_actions))
    for _sweep in range(sweeps):
        for s, a, r, s_next in transitions:
            target = r + gamma * q[s_next].max()
            q[s, a] = (1.0 - alpha) * q[s, a] + alpha * target
    return TabularQ(q=q, gamma=gamma, alpha=alpha, env_name=spec.name)


_RANDOM_REF_CACHE = {}
_RANDOM_REF_SEED = 123457
_RANDOM_REF_EPISODES = 2000


def reference_returns(spec: EnvSpec):
    """(random, expert) mean ground-truth returns used by the normalized
    score; the random reference is a seeded Monte-Carlo estimate."""
    _require_maze(spec.name)
    maze = maze7()
    expert = maze.expert_reference_return(spec.episode_len)
    key = spec.episode_len
    if key not in _RANDOM_REF_CACHE:
        rng = np.random.default_rng(_RANDOM_REF_SEED)
        starts = [c for c in maze.open_cells() if c != maze.goal]
        total = 0.0
        for _ in range(_RANDOM_REF_EPISODES):
            x, y = starts[int(rng.integers(len(starts)))]
            ep_return = 0.0
            for _t in range(spec.episode_len):
                x, y, r = maze.step(x, y, int(rng.integers(4)))
                ep_return += r
            total += ep_return
        _RANDOM_REF_CACHE[key] = total / _RANDOM_REF_EPISODES
    random_ref = _RANDOM_REF_CACHE[key]
    if expert <= random_ref:
        raise ContractError("reference returns degenerate: expert <= random")
    return random_ref, expert


def rollout_greedy(table: TabularQ, spec: EnvSpec, episodes: int, seed: int):
    """Greedy rollouts in the real environment under ground-truth reward."""
    _require_maze(spec.name)
    maze = maze7()
    rng = np.random.default_rng(seed)
    starts = [c for c in maze.open_cells() if c != maze.goal]
    returns = np.zeros(episodes)
    successes = 0
    for i in range(episodes):
        x, y = starts[int(rng.integers(len(starts)))]
        ep_return = 0.0
        for _t in range(spec.episode_len):
            a = table.greedy(maze.cell_id(x, y))
            x, y, r = maze.step(x, y, a)
            ep_return += r
        returns[i] = ep_return
        successes += (x, y) == maze.goal
    return returns, successes / episodes


def evaluate_policy(table: TabularQ, spec: EnvSpec, episodes: int, seed: int) -> PolicyEval:
    if table.env_name != spec.name:
        raise ContractError(f"policy trained on {table.env_name!r}, evaluating on {spec.name!r}")
    random_ref, expert_ref = reference_returns(spec)
    returns, success_rate = rollout_greedy(table, spec, episodes, seed)
    mean_return = float(returns.mean())
    normalized = 100.0 * (mean_return - random_ref) / (expert_ref - random_ref)
    return PolicyEval(mean_return=mean_return, success_rate=success_rate, normalized_score=normalized)


def export_q_csv(table: TabularQ, path) -> None:
    rows = [
        {"state_id": s, "action_id": a, "q": table.q[s, a]}
        for s in range(table.q.shape[0])
        for a in range(table.q.shape[1])
    ]
    metrics.write_csv(path, rows, ["state_id", "action_id", "q"])
