"""Command-line entry point orchestrating the full pipeline.

Configuration precedence: command-line flags > config file (key=value
lines) > built-in defaults. Every run prints its fully resolved options
before doing work. Exit codes: 0 success, 1 named runtime error, 2 usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import envs, metrics, pipeline, policy, training
from .data import PreferenceDataset, load_dataset, sample_pairs, save_dataset
from .errors import PreflabError
from .inference import extract_attention, relabel, write_attention_csv
from .models import ModelConfig, RewardModel, load_params, save_params
from .service import LabelService, LabelSession, write_pairs_file

VARIANT_CHOICES = ("multimodal", "markov", "intra_only", "inter_only", "unimodal")
ENV_CHOICES = tuple(sorted(envs.ENV_DIMS))


def _parse_config_file(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise PreflabError(f"config {path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _explicit_keys(argv):
    """Option names the user actually typed, normalized to attribute names."""
    keys = set()
    for token in argv:
        if token.startswith("--"):
            keys.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return keys


def _resolve(args, parser, argv):
    """Overlay config-file values onto defaults; explicitly typed flags stay
    strongest. Unknown config keys are usage errors."""
    if not getattr(args, "config", None):
        return args
    file_values = _parse_config_file(args.config)
    known = set(vars(args))
    unknown = sorted(set(file_values) - known)
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")
    explicit = _explicit_keys(argv)
    for key, raw in file_values.items():
        if key in explicit:
            continue  # explicit flag wins
        current = getattr(args, key)
        if isinstance(current, bool):
            value = raw.lower() in ("1", "true", "yes")
        elif isinstance(current, int) and not isinstance(current, bool):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        elif isinstance(current, tuple):
            value = _mixture(raw)
        else:
            value = raw
        setattr(args, key, value)
    return args


def _print_config(args):
    skip = {"func", "config"}
    pairs = [f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip]
    print("resolved config: " + " ".join(pairs))


def _mixture(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("mixture needs three comma-separated fractions")
    return tuple(parts)


def _load_episodes(path):
    dataset = load_dataset(path)
    return dataset, [dataset.trajectories[k] for k in sorted(dataset.trajectories)]


def _episodes_to_dataset(episodes, env_name=""):
    ds = PreferenceDataset(env_name=env_name)
    for ep in episodes:
        ds.add_trajectory(ep)
    return ds


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    spec = envs.env_spec(
        args.env, n_episodes=args.episodes, seed=args.seed,
        episode_len=args.episode_len or None, mixture=args.mixture,
    )
    episodes = envs.generate(spec)
    save_dataset(_episodes_to_dataset(episodes, args.env), args.out)
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return 0


def cmd_label_oracle(args):
    _dataset, episodes = _load_episodes(args.data)
    pairs = sample_pairs({e.id: e for e in episodes}, args.pairs, args.segment_len, seed=args.seed)
    segments = [seg for pair in pairs for seg in pair]
    tie_eps = args.tie_eps if args.tie_eps >= 0 else envs.default_tie_eps(segments)
    cfg = envs.OracleConfig(tie_eps=tie_eps, noise=args.noise, mode=args.mode, beta=args.beta)
    triples = envs.label_pairs(pairs, cfg, seed=args.seed)
    out_ds = pipeline.triples_to_dataset(triples)
    save_dataset(out_ds, args.out)
    counts = {v: sum(1 for t in out_ds.triples if t.label == v) for v in (0.0, 0.5, 1.0)}
    print(f"labeled {len(out_ds.triples)} pairs (tie_eps={tie_eps:.4g}) labels={counts} -> {args.out}")
    return 0


def cmd_make_pairs(args):
    _dataset, episodes = _load_episodes(args.data)
    pairs = sample_pairs({e.id: e for e in episodes}, args.pairs, args.segment_len, seed=args.seed)
    write_pairs_file(pairs, args.out, env_name=episodes[0].env_name if episodes else "")
    print(f"wrote {len(pairs)} pending pairs to {args.out}")
    return 0


def cmd_train(args):
    dataset = load_dataset(args.data)
    if not dataset.triples:
        raise PreflabError(f"{args.data} holds no preference triples; run label-oracle or serve first")
    t_len = max(dataset.trajectories[t.id0].length for t in dataset.triples)
    model_cfg = ModelConfig(
        variant=args.variant, d_s=dataset.d_s, d_a=dataset.d_a,
        d_model=args.d_model, n_heads=args.heads, t_max=max(t_len, args.t_max),
        dropout=args.dropout,
    )
    model = RewardModel.create(model_cfg, seed=args.seed)
    train_cfg = training.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
    )
    result = training.fit(dataset, model, train_cfg)
    save_params(model, args.out)
    if args.curve_out:
        result.write_curve(args.curve_out)
    final = result.curve[-1]
    print(
        f"trained {args.variant} for {result.epochs_run} epochs: "
        f"loss {final['mean_loss']:.4f} accuracy {final['eval_accuracy']:.3f} -> {args.out}"
    )
    return 0


def cmd_eval(args):
    model = load_params(args.checkpoint)
    dataset = load_dataset(args.data)
    result = training.evaluate(dataset, model, tie_band=args.tie_band)
    print(f"accuracy {result.accuracy:.4f} mean-loglik {result.mean_loglik:.4f}")
    print("confusion (rows=labels 0/0.5/1, cols=predictions):")
    for row in result.confusion:
        print("  " + " ".join(f"{v:5d}" for v in row))
    try:
        corr = metrics.pearson(result.labels, result.predictions)
        print(f"pearson {corr:.4f}")
    except PreflabError as exc:
        print(f"pearson undefined ({exc})")
    if args.out:
        rows = [
            {"label": lab, "prediction": pred, "p1": p}
            for lab, pred, p in zip(result.labels, result.predictions, result.probs)
        ]
        metrics.write_csv(args.out, rows, ["label", "prediction", "p1"])
    return 0


def cmd_relabel(args):
    model = load_params(args.checkpoint)
    dataset, episodes = _load_episodes(args.data)
    out_eps = relabel(episodes, model, window=args.window)
    save_dataset(_episodes_to_dataset(out_eps, dataset.env_name), args.out)
    print(f"relabeled {len(out_eps)} episodes (window {args.window}) -> {args.out}")
    return 0


def cmd_train_policy(args):
    dataset, episodes = _load_episodes(args.data)
    spec = envs.env_spec(
        dataset.env_name, n_episodes=max(len(episodes), 1), seed=args.seed,
        episode_len=episodes[0].length if episodes else None,
    )
    table = policy.fitted_q(
        episodes, spec, sweeps=args.sweeps, reward_source=args.reward_source,
        gamma=args.gamma, alpha=args.alpha,
    )
    policy.export_q_csv(table, args.out)
    result = policy.evaluate_policy(table, spec, episodes=args.eval_episodes, seed=args.seed)
    print(
        f"policy: mean return {result.mean_return:.3f} success {result.success_rate:.2%} "
        f"normalized {result.normalized_score:.1f} -> {args.out}"
    )
    return 0


def cmd_export_attention(args):
    model = load_params(args.checkpoint)
    dataset, episodes = _load_episodes(args.data)
    if args.segment_id:
        match = [e for e in episodes if e.id == args.segment_id]
        if not match:
            raise PreflabError(f"segment id {args.segment_id!r} not in {args.data}")
        segment = match[0]
    else:
        segment = episodes[args.segment_index]
    window = min(segment.length, model.config.t_max)
    record = extract_attention(model, segment.segment(0, window))
    write_attention_csv(record, args.out)
    print(f"attention for {segment.id} (first {window} steps) -> {args.out}")
    return 0


def cmd_serve(args):
    session = LabelSession(args.pairs, args.out)
    service = LabelService(session, port=args.port, ui_dir=args.ui or None, verbose=True)
    print(f"labeling service on http://127.0.0.1:{service.port}/ "
          f"({session.labeled}/{session.total} labeled); Ctrl-C to stop")
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        print("stopped")
    finally:
        session.close()
    return 0


def cmd_pipeline(args):
    overrides = dict(
        queries=args.queries, heldout_pairs=args.heldout_pairs,
        segment_len=args.segment_len, d_model=args.d_model,
        window=args.window, sweeps=args.sweeps, tie_band=args.tie_band,
    )
    if args.episodes > 0:
        overrides["n_episodes"] = args.episodes
    if args.heldout_episodes > 0:
        overrides["heldout_episodes"] = args.heldout_episodes
    if args.epochs > 0:
        overrides["epochs"] = args.epochs
    if args.lr > 0:
        overrides["learning_rate"] = args.lr
    if args.mixture is not None:
        overrides["mixture"] = args.mixture
    cfg = pipeline.default_experiment(args.env, args.variant, **overrides)
    seeds = list(range(args.seed, args.seed + args.seeds))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with_policy = cfg.env == "maze7"
    results, summary = pipeline.run_seeds(cfg, seeds, with_policy=with_policy)
    per_seed_rows = [
        {
            "seed": r.seed,
            "train_accuracy": f"{r.train_accuracy:.6g}",
            "heldout_accuracy": f"{r.heldout_accuracy:.6g}",
            "pearson": f"{r.pearson:.6g}",
            "normalized_score": f"{r.normalized_score:.6g}",
            "success_rate": f"{r.success_rate:.6g}",
        }
        for r in results
    ]
    metrics.write_csv(
        out_dir / "per_seed.csv", per_seed_rows,
        ["seed", "train_accuracy", "heldout_accuracy", "pearson", "normalized_score", "success_rate"],
    )
    rows = pipeline.summary_rows(cfg.env, cfg.variant, summary)
    metrics.write_csv(out_dir / "summary.csv", rows, ["task", "variant", "metric", "mean", "std", "n"])
    print(f"{'task':<14}{'variant':<12}{'metric':<20}{'mean +/- std':<24}n")
    for row in rows:
        print(f"{row['task']:<14}{row['variant']:<12}{row['metric']:<20}"
              f"{float(row['mean']):.4g} +/- {float(row['std']):.4g}      {row['n']}")
    print(f"wrote {out_dir / 'summary.csv'} and {out_dir / 'per_seed.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="preflab",
        description="Desk-scale preference-based reward modeling laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file; flags override")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-data", help="generate synthetic episodes")
    common(p)
    p.add_argument("--env", required=True, choices=ENV_CHOICES)
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--episode-len", type=int, default=0, help="0 = env default")
    p.add_argument("--mixture", type=_mixture, default=(0.34, 0.33, 0.33),
                   help="expert,medium,random fractions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("label-oracle", help="sample segment pairs and label them with the oracle")
    common(p)
    p.add_argument("--data", required=True, help="episodes file from gen-data")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--segment-len", type=int, default=32)
    p.add_argument("--tie-eps", type=float, default=-1.0, help="<0 = 5%% of observed return range")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--mode", choices=("deterministic", "bradley-terry"), default="deterministic")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label_oracle)

    p = sub.add_parser("make-pairs", help="sample unlabeled pairs into a labeling queue file")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--segment-len", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_pairs)

    p = sub.add_parser("train", help="fit a reward model on labeled preferences")
    common(p)
    p.add_argument("--variant", required=True, choices=VARIANT_CHOICES)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--t-max", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--curve-out", default=None, help="per-epoch loss curve CSV")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate preference predictions of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tie-band", type=float, default=0.1)
    p.add_argument("--out", default=None, help="per-pair prediction CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("relabel", help="attach learned rewards to episodes via sliding windows")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_relabel)

    p = sub.add_parser("train-policy", help="fitted Q-iteration on relabeled rewards")
    common(p)
    p.add_argument("--data", required=True, help="relabeled episodes file")
    p.add_argument("--sweeps", type=int, default=300)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--reward-source", choices=("learned", "true"), default="learned")
    p.add_argument("--eval-episodes", type=int, default=100)
    p.add_argument("--out", required=True, help="Q-table CSV")
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("export-attention", help="attention weight series for one segment")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--segment-id", default=None)
    p.add_argument("--segment-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("serve", help="run the labeling service")
    common(p)
    p.add_argument("--port", type=int, default=8601)
    p.add_argument("--pairs", required=True, help="pairs file from make-pairs")
    p.add_argument("--out", required=True, help="preference log to append to")
    p.add_argument("--ui", default="frontend/dist", help="static UI bundle directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("pipeline", help="gen -> label -> train -> eval -> relabel -> policy, multi-seed")
    common(p)
    p.add_argument("--env", required=True, choices=ENV_CHOICES)
    p.add_argument("--variant", required=True, choices=VARIANT_CHOICES)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--episodes", type=int, default=0, help="0 = per-env default")
    p.add_argument("--heldout-episodes", type=int, default=0, help="0 = per-env default")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--heldout-pairs", type=int, default=50)
    p.add_argument("--segment-len", type=int, default=32)
    p.add_argument("--epochs", type=int, default=0, help="0 = per-env default")
    p.add_argument("--lr", type=float, default=0.0, help="0 = per-env default")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--window", type=int, default=32)
    p.add_argument("--sweeps", type=int, default=300)
    p.add_argument("--tie-band", type=float, default=-1.0, help="<0 = calibrated on training data")
    p.add_argument("--mixture", type=_mixture, default=None, help="default = per-env mixture")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _resolve(args, parser, argv)
    _print_config(args)
    try:
        return args.func(args)
    except PreflabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
