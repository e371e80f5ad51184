"""Deploy a trained reward model over offline episodes.

Relabeling slides a window of at most T past transitions up to each step t
(shorter prefixes near the episode start rather than zero-padding) and takes
the final element of the model's reward sequence as that step's reward.

Attention extraction reduces the captured attention tensors to one scalar
series per mechanism: the total attention mass received by each timestep in
the final layer, averaged over heads (and over both directions for the
cross-modal weights), then max-normalized to peak at 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .data import Trajectory
from .errors import ContractError, UnsupportedVariantError
from .models import RewardModel, batch_rewards, score


@dataclass
class AttentionRecord:
    state_weights: np.ndarray  # [T], intra-modal, state stream
    action_weights: np.ndarray  # [T], intra-modal, action stream
    inter_weights: np.ndarray  # [T], cross-modal, both directions averaged
    rewards: np.ndarray  # [T], model rewards for the segment

    def validate(self):
        t = self.rewards.shape[0]
        for name in ("state_weights", "action_weights", "inter_weights"):
            series = getattr(self, name)
            if series.shape != (t,):
                raise ContractError(f"{name} has shape {series.shape}, expected ({t},)")
            if series.size and (series.min() < 0.0 or series.max() > 1.0 + 1e-12):
                raise ContractError(f"{name} outside [0, 1]")
            if np.any(series > 0) and abs(series.max() - 1.0) > 1e-9:
                raise ContractError(f"nonzero {name} must peak at 1")


def relabel(episodes, model: RewardModel, window: int):
    """Return copies of `episodes` with learned per-step rewards attached."""
    if not episodes:
        raise ContractError("relabel: no episodes")
    if window < 1:
        raise ContractError("relabel: window must be >= 1")
    if window > model.config.t_max and model.config.variant != "markov":
        raise ContractError(f"window {window} exceeds model t_max {model.config.t_max}")
    for ep in episodes:
        if ep.length < 1:
            raise ContractError(f"relabel: empty episode {ep.id}")

    # Group (episode, step) slices by window length for stacked forwards.
    jobs = {}
    for i, ep in enumerate(episodes):
        for t in range(ep.length):
            start = max(0, t - window + 1)
            jobs.setdefault(t - start + 1, []).append((i, t, start))
    learned = [np.zeros(ep.length) for ep in episodes]
    for length, items in sorted(jobs.items()):
        states = np.stack([episodes[i].states[start : start + length] for i, _t, start in items])
        actions = np.stack([episodes[i].actions[start : start + length] for i, _t, start in items])
        final = batch_rewards(model, states, actions)[:, -1]
        for (i, t, _start), value in zip(items, final):
            learned[i][t] = value
    out = []
    for ep, rewards in zip(episodes, learned):
        clone = Trajectory(
            id=ep.id,
            states=ep.states.copy(),
            actions=ep.actions.copy(),
            env_name=ep.env_name,
            render=None if ep.render is None else ep.render.copy(),
            true_return=ep.true_return,
            true_rewards=None if ep.true_rewards is None else ep.true_rewards.copy(),
            learned_rewards=rewards,
        )
        out.append(clone)
    return out


def _received_mass(mats: np.ndarray) -> np.ndarray:
    """Column sums of [H, T, T] attention, averaged over heads: total mass
    each timestep receives within the causal region."""
    return mats.sum(axis=1).mean(axis=0)


def _normalize(series: np.ndarray) -> np.ndarray:
    peak = series.max() if series.size else 0.0
    return series / peak if peak > 0 else series


def extract_attention(model: RewardModel, segment: Trajectory) -> AttentionRecord:
    """Per-timestep normalized attention weights plus the reward series."""
    variant = model.config.variant
    if variant not in ("multimodal", "intra_only", "inter_only"):
        raise UnsupportedVariantError(f"variant {variant!r} has no extractable attention")
    capture = {}
    seq = score(model, segment, capture=capture)
    t = segment.length
    zeros = np.zeros(t)
    if "intra_state" in capture:
        state_w = _normalize(_received_mass(capture["intra_state"][-1]))
        action_w = _normalize(_received_mass(capture["intra_action"][-1]))
    else:
        state_w, action_w = zeros.copy(), zeros.copy()
    if "cross_state_queries" in capture:
        # Mass received by a timestep, averaged over heads and both directions:
        # state-queries deposit mass on action keys and vice versa.
        onto_action = _received_mass(capture["cross_state_queries"][-1])
        onto_state = _received_mass(capture["cross_action_queries"][-1])
        inter_w = _normalize(0.5 * (onto_action + onto_state))
    else:
        inter_w = zeros.copy()
    record = AttentionRecord(
        state_weights=state_w,
        action_weights=action_w,
        inter_weights=inter_w,
        rewards=seq.rewards,
    )
    record.validate()
    return record


def write_attention_csv(record: AttentionRecord, path) -> None:
    rows = [
        {
            "t": t,
            "w_state": record.state_weights[t],
            "w_action": record.action_weights[t],
            "w_inter": record.inter_weights[t],
            "reward": record.rewards[t],
        }
        for t in range(record.rewards.shape[0])
    ]
    metrics.write_csv(path, rows, ["t", "w_state", "w_action", "w_inter", "reward"])
