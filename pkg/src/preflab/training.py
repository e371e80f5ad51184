"""Bradley-Terry preference learning.

The probability that segment 1 beats segment 0 is the softmax of the two
trajectory scores, computed in the numerically stable sigmoid form; a label
of 1 pulls that probability up, 0 pulls it down, 0.5 is a symmetric soft
target. Optimization is plain minibatch Adam, bit-reproducible under a
fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import kernels
from .data import LABELS, PreferenceDataset
from .errors import ContractError, NumericError
from .models import RewardModel, batch_rewards, forward_rewards

LOG_CLAMP = -30.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 200
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


@dataclass
class FitResult:
    curve: list  # per-epoch dicts: epoch, mean_loss, eval_accuracy
    epochs_run: int

    def write_curve(self, path):
        metrics.write_csv(path, self.curve, ["epoch", "mean_loss", "eval_accuracy"])


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    mean_loglik: float
    labels: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    probs: list = field(default_factory=list)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def bt_probability(rho0: float, rho1: float) -> float:
    """P[segment 1 preferred over segment 0] for scores (rho0, rho1)."""
    if not (math.isfinite(rho0) and math.isfinite(rho1)):
        raise NumericError(f"bt_probability: non-finite scores ({rho0}, {rho1})")
    return _sigmoid(rho1 - rho0)


def _check_labels(labels):
    for lab in labels:
        if lab not in LABELS:
            raise ContractError(f"label {lab} not in {LABELS}")


def _group_by_length(triples):
    """Stack triples whose segment lengths agree so each group runs as one
    batched forward pass."""
    groups = {}
    for seg0, seg1, label in triples:
        groups.setdefault((seg0.length, seg1.length), []).append((seg0, seg1, label))
    return groups


def _group_loss(group, model, train, rng):
    """Loss tensor plus per-triple (label, score-difference) pairs for one
    group of equal segment lengths. Both sides of every pair run in a single
    stacked forward pass."""
    dtype = model.dtype
    n = len(group)
    lam = np.array([lab for _, _, lab in group], dtype=dtype)
    if group[0][0].length == group[0][1].length:
        states = np.stack([seg.states for pair in group for seg in pair[:2]])
        actions = np.stack([seg.actions for pair in group for seg in pair[:2]])
        rewards = forward_rewards(
            model, ad.Tensor(states, dtype=dtype), ad.Tensor(actions, dtype=dtype),
            train=train, rng=rng,
        )  # [2n, T], rows alternating seg0/seg1
        scores = ad.reshape(ad.sum_axis(rewards, -1), (n, 2))
        rho0 = ad.reshape(ad.slice_cols(scores, 0, 1), (n,))
        rho1 = ad.reshape(ad.slice_cols(scores, 1, 2), (n,))
    else:  # mismatched segment lengths within the pair: one pass per side
        rhos = []
        for side in (0, 1):
            s = np.stack([pair[side].states for pair in group])
            a = np.stack([pair[side].actions for pair in group])
            r = forward_rewards(model, ad.Tensor(s, dtype=dtype), ad.Tensor(a, dtype=dtype),
                                train=train, rng=rng)
            rhos.append(ad.sum_axis(r, -1))
        rho0, rho1 = rhos
    diff = ad.sub(rho1, rho0)  # [n]
    lp1 = ad.logsigmoid(diff, clamp=LOG_CLAMP)
    lp0 = ad.logsigmoid(ad.neg(diff), clamp=LOG_CLAMP)
    lam_t = ad.Tensor(lam, dtype=dtype)
    one_minus = ad.Tensor(1.0 - lam, dtype=dtype)
    loss = ad.neg(ad.sum_all(ad.add(ad.mul(lam_t, lp1), ad.mul(one_minus, lp0))))
    pairs = [(lab, float(d)) for (_, _, lab), d in zip(group, np.asarray(diff.data, dtype=np.float64))]
    return loss, pairs


def preference_loss(batch, model: RewardModel, train: bool = False, rng=None) -> ad.Tensor:
    """Summed cross-entropy between labels and predicted preference
    probabilities over a batch of (seg0, seg1, label) triples."""
    loss, _ = _preference_loss_terms(batch, model, train=train, rng=rng)
    return loss


def _preference_loss_terms(batch, model, train=False, rng=None):
    if not batch:
        raise ContractError("preference_loss: empty batch")
    _check_labels([lab for _, _, lab in batch])
    total = None
    pairs = []
    for _key, group in sorted(_group_by_length(batch).items()):
        loss, group_pairs = _group_loss(group, model, train, rng)
        pairs.extend(group_pairs)
        total = loss if total is None else ad.add(total, loss)
    return total, pairs


class Adam:
    """Adam with bias correction; updates run through the kernel backend."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.cfg.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            kernels.adam_step(
                p.data, p.grad.astype(p.data.dtype, copy=False), self.m[name], self.v[name],
                self.cfg.learning_rate, b1, b2, self.cfg.eps, self.cfg.weight_decay, bc1, bc2,
            )

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def _resolve_triples(dataset: PreferenceDataset):
    return [(dataset.trajectories[t.id0], dataset.trajectories[t.id1], t.label) for t in dataset.triples]


def _hard_pred(diff: float) -> float:
    return 1.0 if diff > 0 else (0.0 if diff < 0 else 0.5)


def fit(dataset: PreferenceDataset, model: RewardModel, cfg: TrainConfig, on_epoch=None) -> FitResult:
    """Shuffled minibatch Adam on the preference cross-entropy.

    The per-epoch eval_accuracy is the hard-label accuracy of each batch's
    pre-update forward pass. `on_epoch(epoch, mean_loss, accuracy)` may
    return True to stop early (callers training to a target accuracy under
    an epoch cap).
    """
    if not dataset.triples:
        raise ContractError("fit: empty preference dataset")
    triples = _resolve_triples(dataset)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg)
    curve = []
    n = len(triples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for bstart in range(0, n, cfg.batch_size):
            batch = [triples[i] for i in order[bstart : bstart + cfg.batch_size]]
            opt.zero_grad()
            graph = ad.Graph()
            try:
                with graph:
                    loss, pairs = _preference_loss_terms(batch, model, train=True, rng=rng)
                graph.backward(loss)
            except NumericError as exc:
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {bstart // cfg.batch_size}: {exc}",
                    node_id=exc.node_id,
                ) from exc
            opt.step()
            epoch_loss += loss.item()
            epoch_correct += sum(_hard_pred(d) == lab for lab, d in pairs)
        mean_loss = epoch_loss / n
        accuracy = epoch_correct / n
        curve.append({"epoch": epoch, "mean_loss": mean_loss, "eval_accuracy": accuracy})
        if on_epoch is not None and on_epoch(epoch, mean_loss, accuracy):
            break
    return FitResult(curve=curve, epochs_run=len(curve))


def predict_probs(dataset: PreferenceDataset, model: RewardModel):
    """P[seg1 preferred] per triple, computed with stacked forward passes."""
    triples = _resolve_triples(dataset)
    indexed = list(enumerate(triples))
    probs = np.zeros(len(triples))
    groups = {}
    for i, (seg0, seg1, label) in indexed:
        groups.setdefault((seg0.length, seg1.length), []).append(i)
    for _key, idxs in sorted(groups.items()):
        s0 = np.stack([triples[i][0].states for i in idxs])
        a0 = np.stack([triples[i][0].actions for i in idxs])
        s1 = np.stack([triples[i][1].states for i in idxs])
        a1 = np.stack([triples[i][1].actions for i in idxs])
        rho0 = batch_rewards(model, s0, a0).sum(axis=-1)
        rho1 = batch_rewards(model, s1, a1).sum(axis=-1)
        for i, r0, r1 in zip(idxs, rho0, rho1):
            probs[i] = bt_probability(float(r0), float(r1))
    labels = [lab for _, _, lab in triples]
    return labels, probs.tolist()


def calibrated_tie_band(dataset: PreferenceDataset, model: RewardModel) -> float:
    """Tie band whose predicted-tie fraction on `dataset` matches its
    tie-label fraction: the quantile of |p1 - 0.5| at that fraction."""
    labels, probs = predict_probs(dataset, model)
    tie_fraction = sum(1 for lab in labels if lab == 0.5) / len(labels)
    if tie_fraction == 0.0:
        return 0.0
    margins = np.abs(np.asarray(probs) - 0.5)
    band = float(np.quantile(margins, tie_fraction))
    return min(band, 0.499)


def evaluate(dataset: PreferenceDataset, model: RewardModel, tie_band: float = 0.0) -> EvalResult:
    """Three-way prediction (0 / tie / 1) with a dead zone of `tie_band`
    around 0.5, scored against the stored labels."""
    if not dataset.triples:
        raise ContractError("evaluate: empty preference dataset")
    if not 0.0 <= tie_band < 0.5:
        raise ContractError(f"tie_band {tie_band} outside [0, 0.5)")
    labels, probs = predict_probs(dataset, model)
    predictions = []
    loglik = 0.0
    for label, p1 in zip(labels, probs):
        if p1 > 0.5 + tie_band:
            predictions.append(1.0)
        elif p1 < 0.5 - tie_band:
            predictions.append(0.0)
        else:
            predictions.append(0.5)
        loglik += label * max(_safe_log(p1), LOG_CLAMP) + (1.0 - label) * max(
            _safe_log(1.0 - p1), LOG_CLAMP
        )
    mat = metrics.confusion(labels, predictions)
    accuracy = float(np.trace(mat)) / float(mat.sum())
    return EvalResult(
        accuracy=accuracy,
        confusion=mat,
        mean_loglik=loglik / len(labels),
        labels=labels,
        predictions=predictions,
        probs=probs,
    )


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else float("-inf")
