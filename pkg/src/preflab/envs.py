"""Synthetic environments with known ground-truth reward, plus the scripted
preference oracle that stands in for a human labeler.

maze7        7x7 gridworld, discrete, long-horizon credit assignment:
             -0.01 per step, +1 on entering the fixed goal, absorbing goal.
fragile-push point mass pushing an object whose fragility is revealed in
             the state exactly once (step k) and must be remembered: pushes
             harder than the fragility are penalized afterwards. The true
             reward is non-Markovian in the observable state and couples
             the two modalities (fragility x push strength).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .data import Trajectory
from .errors import ContractError, GenerationError

MAZE7_LAYOUT = (
    ".......",
    "##.###.",
    "...#...",
    ".###.#.",
    ".....#.",
    ".###.#.",
    "...#...",
)
MAZE7_GOAL = (6, 6)  # (x, y)
MAZE7_SIZE = 7
# Action order: up, down, left, right (dy first, matching one-hot columns).
MAZE7_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))

STEP_COST = 0.01
GOAL_BONUS = 1.0

PUSH_STEP = 0.15
PUSH_FRAGILITY_RANGE = (0.2, 1.0)
# Fragility is drawn bimodally: clearly fragile or clearly sturdy objects,
# uniform within each band. Handling preferences flip between the bands.
PUSH_FRAGILE_BAND = (0.2, 0.35)
PUSH_STURDY_BAND = (0.85, 1.0)
PUSH_REVEAL_STEP = 2  # the one step whose state exposes the fragility
PUSH_CONTACT_MIN = 0.2  # pushes at or below this never engage the object
PUSH_FIRMNESS_MID = 0.6  # fragility above this wants firm handling, below gentle
PUSH_MAGNITUDE_CENTER = 0.65  # handling is judged against this mean push strength
PUSH_HANDLING_WEIGHT = 1.0
PUSH_PENALTY_WEIGHT = 0.1
PUSH_MEDIUM_STYLES = (0.3, 1.0)  # per-episode push-strength style range
PUSH_MEDIUM_JITTER = 0.08
PUSH_RANDOM_MAGNITUDES = (0.3, 1.0)

ENV_DIMS = {"maze7": (6, 4), "fragile-push": (6, 2)}
DEFAULT_EPISODE_LEN = {"maze7": 60, "fragile-push": 32}


@dataclass(frozen=True)
class EnvSpec:
    name: str
    d_s: int
    d_a: int
    episode_len: int
    n_episodes: int
    seed: int
    mixture: tuple  # (expert, medium, random) fractions

    def __post_init__(self):
        if self.name not in ENV_DIMS:
            raise ContractError(f"unknown env {self.name!r}; expected one of {sorted(ENV_DIMS)}")
        if abs(sum(self.mixture) - 1.0) > 1e-9 or any(w < 0 for w in self.mixture):
            raise ContractError(f"mixture weights {self.mixture} must be nonnegative and sum to 1")
        if self.episode_len < 1:
            raise ContractError("episode_len must be >= 1")
        if self.n_episodes < 1:
            raise ContractError("n_episodes must be >= 1")


def env_spec(name, n_episodes, seed, episode_len=None, mixture=(0.34, 0.33, 0.33)) -> EnvSpec:
    if name not in ENV_DIMS:
        raise ContractError(f"unknown env {name!r}; expected one of {sorted(ENV_DIMS)}")
    d_s, d_a = ENV_DIMS[name]
    return EnvSpec(
        name=name,
        d_s=d_s,
        d_a=d_a,
        episode_len=episode_len or DEFAULT_EPISODE_LEN[name],
        n_episodes=n_episodes,
        seed=seed,
        mixture=tuple(mixture),
    )


def generate(spec: EnvSpec) -> list:
    if spec.name == "maze7":
        return gen_maze7(spec)
    return gen_fragile_push(spec)


# ---------------------------------------------------------------------------
# maze7
# ---------------------------------------------------------------------------


class Maze7:
    """Fixed 7x7 blocked-cell maze shared by generation, policy learning and
    evaluation. States are cells; cell id = y * 7 + x."""

    def __init__(self):
        self.open = np.array(
            [[MAZE7_LAYOUT[y][x] == "." for x in range(MAZE7_SIZE)] for y in range(MAZE7_SIZE)]
        )
        self.goal = MAZE7_GOAL
        self.dist = self._bfs_from_goal()
        open_ids = [self.cell_id(x, y) for x, y in self.open_cells()]
        unreachable = [c for c in open_ids if not math.isfinite(self.dist_of_id(c))]
        if unreachable:
            raise GenerationError(f"maze layout has open cells that cannot reach the goal: {unreachable}")

    @property
    def n_states(self) -> int:
        return MAZE7_SIZE * MAZE7_SIZE

    @property
    def n_actions(self) -> int:
        return 4

    def cell_id(self, x: int, y: int) -> int:
        return y * MAZE7_SIZE + x

    def id_cell(self, cid: int):
        return cid % MAZE7_SIZE, cid // MAZE7_SIZE

    def open_cells(self):
        return [(x, y) for y in range(MAZE7_SIZE) for x in range(MAZE7_SIZE) if self.open[y, x]]

    def is_open(self, x: int, y: int) -> bool:
        return 0 <= x < MAZE7_SIZE and 0 <= y < MAZE7_SIZE and bool(self.open[y, x])

    def _bfs_from_goal(self):
        dist = np.full((MAZE7_SIZE, MAZE7_SIZE), np.inf)
        gx, gy = self.goal
        dist[gy, gx] = 0
        queue = deque([(gx, gy)])
        while queue:
            x, y = queue.popleft()
            for dx, dy in MAZE7_MOVES:
                nx, ny = x + dx, y + dy
                if self.is_open(nx, ny) and dist[ny, nx] == np.inf:
                    dist[ny, nx] = dist[y, x] + 1
                    queue.append((nx, ny))
        return dist

    def dist_of_id(self, cid: int) -> float:
        x, y = self.id_cell(cid)
        return float(self.dist[y, x])

    def step(self, x: int, y: int, action: int):
        """Deterministic dynamics: bumping a wall leaves the agent in place.
        The goal is absorbing with zero reward."""
        if (x, y) == self.goal:
            return x, y, 0.0
        dx, dy = MAZE7_MOVES[action]
        nx, ny = (x + dx, y + dy) if self.is_open(x + dx, y + dy) else (x, y)
        reward = -STEP_COST + (GOAL_BONUS if (nx, ny) == self.goal else 0.0)
        return nx, ny, reward

    def features(self, x: int, y: int) -> np.ndarray:
        blocked = [0.0 if self.is_open(x + dx, y + dy) else 1.0 for dx, dy in MAZE7_MOVES]
        return np.array([x / (MAZE7_SIZE - 1), y / (MAZE7_SIZE - 1), *blocked])

    def state_id_from_features(self, row: np.ndarray) -> int:
        x = int(round(float(row[0]) * (MAZE7_SIZE - 1)))
        y = int(round(float(row[1]) * (MAZE7_SIZE - 1)))
        return self.cell_id(x, y)

    def expert_action(self, x: int, y: int) -> int:
        """First action (in fixed order) that strictly reduces BFS distance."""
        for a, (dx, dy) in enumerate(MAZE7_MOVES):
            nx, ny = x + dx, y + dy
            if self.is_open(nx, ny) and self.dist[ny, nx] < self.dist[y, x]:
                return a
        return 0

    def expert_reference_return(self, episode_len: int) -> float:
        """Exact mean return of the shortest-path policy over uniform starts."""
        total = 0.0
        starts = [c for c in self.open_cells() if c != self.goal]
        for x, y in starts:
            d = self.dist[y, x]
            total += GOAL_BONUS - STEP_COST * min(d, episode_len) if d <= episode_len else -STEP_COST * episode_len
        return total / len(starts)


_MAZE = None


def maze7() -> Maze7:
    global _MAZE
    if _MAZE is None:
        _MAZE = Maze7()
    return _MAZE


MEDIUM_EPSILON = 0.35


def gen_maze7(spec: EnvSpec) -> list:
    """Episodes from a mixture of shortest-path, epsilon-greedy and random
    walkers, uniformly random open starts."""
    if spec.name != "maze7":
        raise ContractError(f"gen_maze7 called with env {spec.name!r}")
    maze = maze7()
    rng = np.random.default_rng(spec.seed)
    starts = [c for c in maze.open_cells() if c != maze.goal]
    episodes = []
    for ep in range(spec.n_episodes):
        policy = rng.choice(3, p=spec.mixture)
        x, y = starts[int(rng.integers(len(starts)))]
        states, actions, rewards, render = [], [], [], []
        for _t in range(spec.episode_len):
            if policy == 0:
                a = maze.expert_action(x, y)
            elif policy == 1:
                a = int(rng.integers(4)) if rng.random() < MEDIUM_EPSILON else maze.expert_action(x, y)
            else:
                a = int(rng.integers(4))
            states.append(maze.features(x, y))
            actions.append(np.eye(4)[a])
            render.append([float(x), float(y)])
            x, y, r = maze.step(x, y, a)
            rewards.append(r)
        rewards = np.array(rewards)
        episodes.append(
            Trajectory(
                id=f"maze7-s{spec.seed}-ep{ep:03d}",
                states=np.array(states),
                actions=np.array(actions),
                env_name="maze7",
                render=np.array(render),
                true_return=float(rewards.sum()),
                true_rewards=rewards,
            )
        )
    return episodes


# ---------------------------------------------------------------------------
# fragile-push
# ---------------------------------------------------------------------------


def _push_reward(p, p_next, goal, action, fragility, t, reveal_step):
    """Progress toward the goal, plus handling terms once the object's
    fragility is known (t > reveal).

    Handling couples the two modalities: sturdy objects (fragility above
    the midpoint) respond to firmer-than-average pushes, fragile ones to
    gentler-than-average pushes, and pushes harder than the fragility
    itself additionally damage the object. Both handling terms are mean
    zero across episodes by construction, so the trajectory return cannot
    be reproduced from any single step's observables alone."""
    progress = float(np.linalg.norm(p - goal) - np.linalg.norm(p_next - goal))
    reward = progress
    if t > reveal_step:
        mag = float(np.linalg.norm(action))
        if mag > PUSH_CONTACT_MIN:
            firmness_pref = (fragility - PUSH_FIRMNESS_MID) / (
                PUSH_FRAGILITY_RANGE[1] - PUSH_FIRMNESS_MID
            )
            reward += PUSH_HANDLING_WEIGHT * firmness_pref * (mag - PUSH_MAGNITUDE_CENTER)
            reward -= PUSH_PENALTY_WEIGHT * max(0.0, mag - fragility)
    return reward


def gen_fragile_push(spec: EnvSpec) -> list:
    """Point mass pushes an object toward a target. The object's fragility is
    visible in the state only at the reveal step; from then on pushes whose
    magnitude exceeds it are penalized.

    State features are goal-relative (no absolute coordinates), so a model
    cannot fingerprint episodes by start position: [dx, dy, dist,
    fragility-at-reveal, reveal-flag, t/T]. Absolute positions live in the
    render track only."""
    if spec.name != "fragile-push":
        raise ContractError(f"gen_fragile_push called with env {spec.name!r}")
    if spec.episode_len <= PUSH_REVEAL_STEP:
        raise ContractError(
            f"episode_len {spec.episode_len} leaves no room for the reveal at step {PUSH_REVEAL_STEP}"
        )
    rng = np.random.default_rng(spec.seed)
    episodes = []
    for ep in range(spec.n_episodes):
        policy = rng.choice(3, p=spec.mixture)
        p = rng.uniform(-1.0, 1.0, size=2)
        goal = rng.uniform(-1.0, 1.0, size=2)
        band = PUSH_FRAGILE_BAND if rng.random() < 0.5 else PUSH_STURDY_BAND
        fragility = float(rng.uniform(*band))
        reveal = PUSH_REVEAL_STEP
        # Medium pushers carry an episode-wide strength style, oblivious to
        # the object: the style x fragility interaction drives their returns.
        style = float(rng.uniform(*PUSH_MEDIUM_STYLES))
        states, actions, rewards, render = [], [], [], []
        for t in range(spec.episode_len):
            toward = goal - p
            norm = float(np.linalg.norm(toward))
            direction = toward / norm if norm > 1e-9 else np.zeros(2)
            if policy == 0:  # expert: knows the fragility, pushes just under it
                magnitude = min(0.95 * fragility, 1.0)
                a = direction * magnitude
            elif policy == 1:  # medium: right direction, style-driven magnitude
                magnitude = float(
                    np.clip(style + rng.uniform(-PUSH_MEDIUM_JITTER, PUSH_MEDIUM_JITTER),
                            PUSH_CONTACT_MIN + 0.05, 1.0)
                )
                jitter = rng.normal(scale=0.2, size=2)
                blend = direction + jitter
                blend_norm = float(np.linalg.norm(blend))
                a = (blend / blend_norm if blend_norm > 1e-9 else direction) * magnitude
            else:  # random walker
                angle = float(rng.uniform(0.0, 2.0 * math.pi))
                magnitude = float(rng.uniform(*PUSH_RANDOM_MAGNITUDES))
                a = np.array([math.cos(angle), math.sin(angle)]) * magnitude
            revealed = 1.0 if t == reveal else 0.0
            states.append(np.array([
                goal[0] - p[0],
                goal[1] - p[1],
                norm,
                fragility * revealed,
                revealed,
                t / max(spec.episode_len - 1, 1),
            ]))
            actions.append(a.copy())
            render.append(p.copy())
            p_next = p + PUSH_STEP * a
            rewards.append(_push_reward(p, p_next, goal, a, fragility, t, reveal))
            p = p_next
        rewards = np.array(rewards)
        episodes.append(
            Trajectory(
                id=f"fragile-push-s{spec.seed}-ep{ep:03d}",
                states=np.array(states),
                actions=np.array(actions),
                env_name="fragile-push",
                render=np.array(render),
                true_return=float(rewards.sum()),
                true_rewards=rewards,
            )
        )
    return episodes


def replay_push_return(traj: Trajectory) -> float:
    """Independent step-by-step replay of the fragile-push reward from the
    recorded features (positions from the render track, fragility and reveal
    step read off the state)."""
    if traj.render is None:
        raise ContractError("replay requires the render track for positions")
    reveal_rows = np.where(traj.states[:, 4] == 1.0)[0]
    if reveal_rows.size != 1:
        raise ContractError("replay requires exactly one reveal step in the segment")
    reveal = int(reveal_rows[0])
    fragility = float(traj.states[reveal, 3])
    total = 0.0
    for t in range(traj.length):
        p = traj.render[t]
        goal = p + traj.states[t, 0:2]
        a = traj.actions[t]
        p_next = p + PUSH_STEP * a
        total += _push_reward(p, p_next, goal, a, fragility, t, reveal)
    return total


# ---------------------------------------------------------------------------
# scripted preference oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleConfig:
    tie_eps: float = 0.0  # return difference below which the oracle says 0.5
    noise: float = 0.0  # probability of flipping a hard label
    mode: str = "deterministic"  # or "bradley-terry"
    beta: float = 1.0

    def __post_init__(self):
        if self.tie_eps < 0:
            raise ContractError("tie_eps must be >= 0")
        if not 0.0 <= self.noise < 0.5:
            raise ContractError("noise must lie in [0, 0.5)")
        if self.mode not in ("deterministic", "bradley-terry"):
            raise ContractError(f"unknown oracle mode {self.mode!r}")
        if self.beta <= 0:
            raise ContractError("beta must be positive")


def oracle_label(seg0: Trajectory, seg1: Trajectory, cfg: OracleConfig, seed: int) -> float:
    """Scripted preference label from ground-truth returns."""
    for seg in (seg0, seg1):
        if seg.true_rewards is None:
            raise ContractError(f"segment {seg.id} carries no ground-truth rewards")
    r0 = float(seg0.true_rewards.sum())
    r1 = float(seg1.true_rewards.sum())
    rng = np.random.default_rng(seed)
    if cfg.mode == "bradley-terry":
        p1 = 1.0 / (1.0 + math.exp(-cfg.beta * (r1 - r0))) if abs(cfg.beta * (r1 - r0)) < 700 else (
            1.0 if r1 > r0 else 0.0
        )
        label = 1.0 if rng.random() < p1 else 0.0
    else:
        if r0 > r1 + cfg.tie_eps:
            label = 0.0
        elif r1 > r0 + cfg.tie_eps:
            label = 1.0
        else:
            label = 0.5
    if cfg.noise > 0.0 and label != 0.5 and rng.random() < cfg.noise:
        label = 1.0 - label
    return label


def default_tie_eps(segments) -> float:
    """5% of the observed segment-return range."""
    returns = [float(s.true_rewards.sum()) for s in segments if s.true_rewards is not None]
    if not returns:
        raise ContractError("default_tie_eps: no segments with ground-truth rewards")
    return 0.05 * (max(returns) - min(returns))


def label_pairs(pairs, cfg: OracleConfig, seed: int):
    """Label a list of segment pairs; one derived sub-seed per pair keeps the
    labels independent of list length."""
    triples = []
    for i, (seg0, seg1) in enumerate(pairs):
        triples.append((seg0, seg1, oracle_label(seg0, seg1, cfg, seed=seed * 100003 + i)))
    return triples
