"""End-to-end experiment orchestration: generate episodes, collect oracle
labels, train a reward model, evaluate preference prediction on held-out
pairs, relabel the offline data and train/evaluate a tabular policy.

The per-seed run mirrors the deployment story; `run_seeds` aggregates the
per-seed metrics into mean +/- std rows."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import envs, metrics, policy, training
from .data import PreferenceDataset, PreferenceTriple, sample_pairs
from .errors import UndefinedCorrelationError
from .inference import relabel
from .models import ModelConfig, RewardModel
from .training import TrainConfig

HELDOUT_SEED_OFFSET = 104729  # keeps evaluation episodes disjoint from training

# Per-env experiment defaults. fragile-push leans on the oblivious "medium"
# policy so that most label pairs are decided by the hidden fragility rather
# than by gross progress differences; it also needs many distinct episodes
# behind the 100 queries to prevent episode memorization, and a higher
# learning rate to fit within the epoch budget.
ENV_EXPERIMENT_DEFAULTS = {
    "maze7": {"n_episodes": 40, "mixture": (0.34, 0.33, 0.33), "epochs": 100},
    "fragile-push": {
        "n_episodes": 120,
        "heldout_episodes": 60,
        "mixture": (0.2, 0.6, 0.2),
        "epochs": 150,
        "learning_rate": 3e-4,
    },
}


def default_experiment(env: str, variant: str, **overrides) -> "ExperimentConfig":
    kwargs = dict(ENV_EXPERIMENT_DEFAULTS.get(env, {}))
    kwargs.update(overrides)
    return ExperimentConfig(env=env, variant=variant, **kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    variant: str
    n_episodes: int = 40
    episode_len: int = 0  # 0 -> env default
    queries: int = 100
    heldout_pairs: int = 50
    heldout_episodes: int = 30
    segment_len: int = 32
    tie_band: float = -1.0  # negative -> calibrated on the training set
    d_model: int = 64
    n_heads: int = 4
    dropout: float = 0.1
    epochs: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 16
    window: int = 32
    sweeps: int = 300
    eval_episodes: int = 100
    target_train_accuracy: float = 0.0  # 0 -> always run all epochs
    mixture: tuple = (0.34, 0.33, 0.33)
    oracle_noise: float = 0.0

    def model_config(self) -> ModelConfig:
        d_s, d_a = envs.ENV_DIMS[self.env]
        return ModelConfig(
            variant=self.variant,
            d_s=d_s,
            d_a=d_a,
            d_model=self.d_model,
            n_heads=self.n_heads,
            t_max=max(self.segment_len, self.window),
            dropout=self.dropout,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=seed,
        )


def triples_to_dataset(triples) -> PreferenceDataset:
    ds = PreferenceDataset()
    for seg0, seg1, label in triples:
        if seg0.id not in ds.trajectories:
            ds.add_trajectory(seg0)
        if seg1.id not in ds.trajectories:
            ds.add_trajectory(seg1)
        ds.add_triple(PreferenceTriple(seg0.id, seg1.id, label, "oracle"))
    return ds


def oracle_dataset(cfg: ExperimentConfig, seed: int, n_pairs: int, episodes=None):
    """Episodes + oracle-labeled preference dataset for one seed."""
    if episodes is None:
        spec = envs.env_spec(
            cfg.env,
            n_episodes=cfg.n_episodes,
            seed=seed,
            episode_len=cfg.episode_len or None,
            mixture=cfg.mixture,
        )
        episodes = envs.generate(spec)
    store = {ep.id: ep for ep in episodes}
    pairs = sample_pairs(store, n_pairs, cfg.segment_len, seed=seed)
    segments = [seg for pair in pairs for seg in pair]
    oracle_cfg = envs.OracleConfig(
        tie_eps=envs.default_tie_eps(segments), noise=cfg.oracle_noise
    )
    triples = envs.label_pairs(pairs, oracle_cfg, seed=seed)
    return episodes, triples_to_dataset(triples)


@dataclass
class SeedResult:
    seed: int
    train_accuracy: float
    heldout_accuracy: float
    pearson: float
    epochs_run: int
    mean_return: float = float("nan")
    success_rate: float = float("nan")
    normalized_score: float = float("nan")
    curve: list = field(default_factory=list)
    model: object = field(default=None, repr=False)


def run_seed(
    cfg: ExperimentConfig, seed: int, with_policy: bool = False, keep_model: bool = False
) -> SeedResult:
    train_eps, train_ds = oracle_dataset(cfg, seed, cfg.queries)
    heldout_cfg = replace(cfg, n_episodes=cfg.heldout_episodes)
    _, heldout_ds = oracle_dataset(heldout_cfg, seed + HELDOUT_SEED_OFFSET, cfg.heldout_pairs)

    model = RewardModel.create(cfg.model_config(), seed=seed)
    stop = None
    if cfg.target_train_accuracy > 0:
        target = cfg.target_train_accuracy

        def stop(_epoch, _loss, acc):
            return acc >= target

    fit_result = training.fit(train_ds, model, cfg.train_config(seed), on_epoch=stop)
    train_eval = training.evaluate(train_ds, model, tie_band=0.0)
    band = cfg.tie_band if cfg.tie_band >= 0 else training.calibrated_tie_band(train_ds, model)
    heldout_eval = training.evaluate(heldout_ds, model, tie_band=band)
    try:
        corr = metrics.pearson(heldout_eval.labels, heldout_eval.predictions)
    except UndefinedCorrelationError:
        corr = float("nan")

    result = SeedResult(
        seed=seed,
        train_accuracy=train_eval.accuracy,
        heldout_accuracy=heldout_eval.accuracy,
        pearson=corr,
        epochs_run=fit_result.epochs_run,
        curve=fit_result.curve,
        model=model if keep_model else None,
    )
    if with_policy and cfg.env == "maze7":
        spec = envs.env_spec(
            cfg.env,
            n_episodes=cfg.n_episodes,
            seed=seed,
            episode_len=cfg.episode_len or None,
            mixture=cfg.mixture,
        )
        relabeled = relabel(train_eps, model, window=cfg.window)
        table = policy.fitted_q(relabeled, spec, sweeps=cfg.sweeps, reward_source="learned")
        ev = policy.evaluate_policy(table, spec, episodes=cfg.eval_episodes, seed=seed)
        result.mean_return = ev.mean_return
        result.success_rate = ev.success_rate
        result.normalized_score = ev.normalized_score
    return result


def run_seeds(cfg: ExperimentConfig, seeds, with_policy: bool = False, keep_models: bool = False):
    results = [run_seed(cfg, seed, with_policy=with_policy, keep_model=keep_models) for seed in seeds]
    summary = {
        "heldout_accuracy": metrics.aggregate([r.heldout_accuracy for r in results]),
        "pearson": metrics.aggregate([r.pearson for r in results]),
        "train_accuracy": metrics.aggregate([r.train_accuracy for r in results]),
    }
    if with_policy:
        valid = [r for r in results if not np.isnan(r.normalized_score)]
        if valid:
            summary["normalized_score"] = metrics.aggregate([r.normalized_score for r in valid])
            summary["success_rate"] = metrics.aggregate([r.success_rate for r in valid])
            summary["mean_return"] = metrics.aggregate([r.mean_return for r in valid])
    return results, summary


def summary_rows(env: str, variant: str, summary: dict):
    """Table-style rows: one (task, variant, metric, mean, std, n) per metric."""
    rows = []
    for metric_name, agg in summary.items():
        rows.append(
            {
                "task": env,
                "variant": variant,
                "metric": metric_name,
                "mean": f"{agg.mean:.6g}",
                "std": f"{agg.std:.6g}",
                "n": len(agg.values),
            }
        )
    return rows
