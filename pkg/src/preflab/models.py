"""Reward-model zoo behind one scoring interface.

Variants:
  multimodal  two causal self-attention stacks (one per modality) feeding a
              bidirectional causal cross-attention joint layer, mean-pooled
              into a per-timestep reward head
  intra_only  the self-attention stacks alone, pooled directly
  inter_only  the cross-attention joint layer alone on embedded inputs
  unimodal    one causal stack over interleaved state/action tokens
  markov      per-timestep MLP on the concatenated (state, action) features

All sequence variants are causal: reward at step t never depends on steps
after t. The trajectory score is the plain sum of the reward sequence.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .data import Trajectory
from .errors import CheckpointError, ConfigError, ContractError, ShapeError

VARIANTS = ("multimodal", "markov", "intra_only", "inter_only", "unimodal")

CHECKPOINT_MAGIC = "preflab-checkpoint 1"

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    d_s: int
    d_a: int
    d_model: int = 64
    n_heads: int = 4
    n_intra_layers: int = 3
    n_inter_layers: int = 1
    t_max: int = 32
    dropout: float = 0.1
    mlp_hidden: tuple = (256, 256)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.d_s < 1 or self.d_a < 1:
            raise ConfigError("d_s and d_a must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "mlp_hidden": tuple(d.get("mlp_hidden", (256, 256)))})


@dataclass
class RewardSequence:
    rewards: np.ndarray  # [T]
    score: float

    @classmethod
    def from_rewards(cls, rewards: np.ndarray) -> "RewardSequence":
        rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
        return cls(rewards=rewards, score=float(rewards.sum()))


def _attn_block_shapes(d: int):
    return {
        "ln1.g": (d,),
        "ln1.b": (d,),
        "attn.wq": (d, d),
        "attn.bq": (d,),
        "attn.wk": (d, d),
        "attn.bk": (d,),
        "attn.wv": (d, d),
        "attn.bv": (d,),
        "attn.wo": (d, d),
        "attn.bo": (d,),
        "ln2.g": (d,),
        "ln2.b": (d,),
        "ff.w1": (d, 4 * d),
        "ff.b1": (4 * d,),
        "ff.w2": (4 * d, d),
        "ff.b2": (d,),
    }


def param_shapes(config: ModelConfig) -> dict:
    """Single source of truth for the parameter set of each variant."""
    d = config.d_model
    shapes = {}
    if config.variant == "markov":
        h1, h2 = config.mlp_hidden
        shapes["mlp.w1"] = (config.d_s + config.d_a, h1)
        shapes["mlp.b1"] = (h1,)
        shapes["mlp.w2"] = (h1, h2)
        shapes["mlp.b2"] = (h2,)
        shapes["mlp.w3"] = (h2, 1)
        shapes["mlp.b3"] = (1,)
        return shapes

    shapes["state_embed.w"] = (config.d_s, d)
    shapes["state_embed.b"] = (d,)
    shapes["action_embed.w"] = (config.d_a, d)
    shapes["action_embed.b"] = (d,)
    shapes["time_embed"] = (config.t_max, d)
    shapes["reward_head.w"] = (d, 1)
    shapes["reward_head.b"] = (1,)

    if config.variant in ("multimodal", "intra_only"):
        for stream in ("state", "action"):
            for i in range(config.n_intra_layers):
                for name, shp in _attn_block_shapes(d).items():
                    shapes[f"intra_{stream}.{i}.{name}"] = shp
    if config.variant in ("multimodal", "inter_only"):
        for i in range(config.n_inter_layers):
            for stream in ("state", "action"):
                for name, shp in _attn_block_shapes(d).items():
                    shapes[f"cross.{i}.{stream}.{name}"] = shp
    if config.variant == "unimodal":
        for i in range(config.n_intra_layers):
            for name, shp in _attn_block_shapes(d).items():
                shapes[f"uni.{i}.{name}"] = shp
    return shapes


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict:
    """Weights N(0, 0.02^2); biases and norm offsets 0; norm gains 1;
    reward-head weights 0 so every segment starts at score 0."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape)
        elif leaf.startswith("b"):
            data = np.zeros(shape)
        elif name in ("reward_head.w", "mlp.w3"):
            data = np.zeros(shape)
        else:
            data = rng.normal(scale=INIT_STD, size=shape)
        params[name] = ad.parameter(data, dtype=dtype)
    return params


@dataclass
class RewardModel:
    config: ModelConfig
    params: dict = field(repr=False)

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "RewardModel":
        return cls(config=config, params=init_params(config, seed, dtype))

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def score(self, segment: Trajectory) -> RewardSequence:
        return score(self, segment)


# ---------------------------------------------------------------------------
# forward passes (engine tensors in, engine tensor of rewards out)
# ---------------------------------------------------------------------------


class _Ctx:
    """Forward-pass context: dropout state and optional attention capture."""

    def __init__(self, config, params, train=False, rng=None, capture=None):
        self.config = config
        self.params = params
        self.drop = config.dropout if train else 0.0
        if self.drop > 0.0 and rng is None:
            raise ContractError("training forward with dropout requires an rng")
        self.rng = rng
        self.capture = capture

    def dropout(self, x):
        return ad.dropout(x, self.drop, self.rng) if self.drop > 0.0 else x


def _linear(params, prefix, x):
    return ad.add_bias(ad.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _mha(ctx, prefix_q, prefix_kv, q_src, kv_src, capture_key=None):
    """Multi-head causal attention; queries and keys/values may come from
    different streams (cross-attention) or the same one (self-attention).
    Heads are folded into the stack dimension so the whole op is three
    stacked matmuls plus one masked softmax."""
    p = ctx.params
    n_heads = ctx.config.n_heads
    dk = ctx.config.head_dim
    q = ad.split_heads(ad.add_bias(ad.matmul(q_src, p[f"{prefix_q}.wq"]), p[f"{prefix_q}.bq"]), n_heads)
    k = ad.split_heads(ad.add_bias(ad.matmul(kv_src, p[f"{prefix_kv}.wk"]), p[f"{prefix_kv}.bk"]), n_heads)
    v = ad.split_heads(ad.add_bias(ad.matmul(kv_src, p[f"{prefix_kv}.wv"]), p[f"{prefix_kv}.bv"]), n_heads)
    scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / math.sqrt(dk))
    probs = ad.masked_softmax(scores)
    if ctx.capture is not None and capture_key is not None:
        t = probs.data.shape[-1]
        mats = np.array(probs.data, dtype=np.float64).reshape(-1, n_heads, t, t)
        ctx.capture.setdefault(capture_key, []).append(mats[0])
    probs = ctx.dropout(probs)
    out = ad.merge_heads(ad.matmul(probs, v), n_heads)
    return ad.add_bias(ad.matmul(out, p[f"{prefix_q}.wo"]), p[f"{prefix_q}.bo"])


def _ff(ctx, prefix, x):
    p = ctx.params
    h = ad.gelu(ad.add_bias(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    h = ctx.dropout(h)
    return ad.add_bias(ad.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def _ln(params, prefix, x):
    return ad.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _self_block(ctx, prefix, x, capture_key=None):
    """Pre-norm residual block: x + MHA(LN(x)), then x + FF(LN(x))."""
    xn = _ln(ctx.params, f"{prefix}.ln1", x)
    x = ad.add(x, _mha(ctx, f"{prefix}.attn", f"{prefix}.attn", xn, xn, capture_key))
    x = ad.add(x, _ff(ctx, f"{prefix}.ff", _ln(ctx.params, f"{prefix}.ln2", x)))
    return x


def _cross_block(ctx, prefix, xs, xa):
    """Bidirectional causal cross-attention: each stream queries the other."""
    sn = _ln(ctx.params, f"{prefix}.state.ln1", xs)
    an = _ln(ctx.params, f"{prefix}.action.ln1", xa)
    zs = ad.add(
        xs,
        _mha(ctx, f"{prefix}.state.attn", f"{prefix}.action.attn", sn, an, "cross_state_queries"),
    )
    za = ad.add(
        xa,
        _mha(ctx, f"{prefix}.action.attn", f"{prefix}.state.attn", an, sn, "cross_action_queries"),
    )
    zs = ad.add(zs, _ff(ctx, f"{prefix}.state.ff", _ln(ctx.params, f"{prefix}.state.ln2", zs)))
    za = ad.add(za, _ff(ctx, f"{prefix}.action.ff", _ln(ctx.params, f"{prefix}.action.ln2", za)))
    return zs, za


def embed_inputs(ctx: _Ctx, states: ad.Tensor, actions: ad.Tensor):
    """Project each modality to the model width and add learned per-position
    time embeddings (shared between the modalities)."""
    t = states.shape[-2]
    if t > ctx.config.t_max:
        raise ContractError(f"sequence length {t} exceeds t_max {ctx.config.t_max}")
    e = ad.gather_rows(ctx.params["time_embed"], np.arange(t))
    xs = _add_time(_linear(ctx.params, "state_embed", states), e)
    xa = _add_time(_linear(ctx.params, "action_embed", actions), e)
    return xs, xa


def _add_time(x, e):
    return ad.add(x, e) if x.shape == e.shape else ad.add_mat(x, e)


def _lift(x: ad.Tensor):
    if x.data.ndim == 2:
        return ad.reshape(x, (1, *x.shape)), True
    return x, False


def _drop_stack(x: ad.Tensor, lifted: bool):
    return ad.reshape(x, x.shape[1:]) if lifted else x


def intra_encode(ctx: _Ctx, x: ad.Tensor, stream: str) -> ad.Tensor:
    x, lifted = _lift(x)
    for i in range(ctx.config.n_intra_layers):
        x = _self_block(ctx, f"intra_{stream}.{i}", x, capture_key=f"intra_{stream}")
    return _drop_stack(x, lifted)


def cross_attend(ctx: _Ctx, xs: ad.Tensor, xa: ad.Tensor):
    if xs.shape[-2] != xa.shape[-2]:
        raise ContractError(f"stream lengths differ: {xs.shape[-2]} vs {xa.shape[-2]}")
    xs, lifted = _lift(xs)
    xa, _ = _lift(xa)
    for i in range(ctx.config.n_inter_layers):
        xs, xa = _cross_block(ctx, f"cross.{i}", xs, xa)
    return _drop_stack(xs, lifted), _drop_stack(xa, lifted)


def pool_rewards(ctx: _Ctx, zs: ad.Tensor, za: ad.Tensor) -> ad.Tensor:
    """Average the two streams elementwise, then map each pooled step to a
    scalar reward with the learned linear head. Returns [..., T]."""
    if zs.shape != za.shape:
        raise ShapeError(f"pool_rewards: {zs.shape} vs {za.shape}")
    h = ad.scale(ad.add(zs, za), 0.5)
    r = _linear(ctx.params, "reward_head", h)
    return ad.reshape(r, r.shape[:-1])


def _markov_rewards(ctx, states, actions):
    x = ad.concat_cols([states, actions])
    p = ctx.params
    h = ad.relu(ad.add_bias(ad.matmul(x, p["mlp.w1"]), p["mlp.b1"]))
    h = ctx.dropout(h)
    h = ad.relu(ad.add_bias(ad.matmul(h, p["mlp.w2"]), p["mlp.b2"]))
    h = ctx.dropout(h)
    r = ad.add_bias(ad.matmul(h, p["mlp.w3"]), p["mlp.b3"])
    return ad.reshape(r, r.shape[:-1])


def _unimodal_rewards(ctx, states, actions):
    xs, xa = embed_inputs(ctx, states, actions)
    t = xs.shape[-2]
    stacked = ad.concat_rows([xs, xa])  # [..., 2T, d]: states first, actions second
    interleave = np.empty(2 * t, dtype=np.int64)
    interleave[0::2] = np.arange(t)
    interleave[1::2] = np.arange(t) + t
    tokens = ad.gather_rows(stacked, interleave)
    for i in range(ctx.config.n_intra_layers):
        tokens = _self_block(ctx, f"uni.{i}", tokens, capture_key="uni")
    # Reward for step t reads the action token, which has seen (s_1..t, a_1..t).
    action_rows = ad.gather_rows(tokens, np.arange(1, 2 * t, 2))
    r = _linear(ctx.params, "reward_head", action_rows)
    return ad.reshape(r, r.shape[:-1])


def forward_rewards(
    model: RewardModel,
    states: ad.Tensor,
    actions: ad.Tensor,
    train: bool = False,
    rng=None,
    capture: Optional[dict] = None,
) -> ad.Tensor:
    """Variant-dispatched reward sequence [..., T]; accepts [T, d] inputs or
    stacked [B, T, d] batches (internals always run stacked)."""
    cfg = model.config
    if states.shape[-1] != cfg.d_s or actions.shape[-1] != cfg.d_a:
        raise ShapeError(
            f"feature dims ({states.shape[-1]}, {actions.shape[-1]}) do not match "
            f"config ({cfg.d_s}, {cfg.d_a})"
        )
    if states.shape[:-1] != actions.shape[:-1]:
        raise ShapeError(f"state/action shapes disagree: {states.shape} vs {actions.shape}")
    single = states.data.ndim == 2
    if single:
        t = states.shape[0]
        states = ad.reshape(states, (1, t, cfg.d_s))
        actions = ad.reshape(actions, (1, t, cfg.d_a))
    ctx = _Ctx(cfg, model.params, train=train, rng=rng, capture=capture)
    if cfg.variant == "markov":
        rewards = _markov_rewards(ctx, states, actions)
    else:
        if states.shape[-2] > cfg.t_max:
            raise ContractError(f"sequence length {states.shape[-2]} exceeds t_max {cfg.t_max}")
        if cfg.variant == "unimodal":
            rewards = _unimodal_rewards(ctx, states, actions)
        else:
            xs, xa = embed_inputs(ctx, states, actions)
            if cfg.variant in ("multimodal", "intra_only"):
                xs = intra_encode(ctx, xs, "state")
                xa = intra_encode(ctx, xa, "action")
            if cfg.variant in ("multimodal", "inter_only"):
                xs, xa = cross_attend(ctx, xs, xa)
            rewards = pool_rewards(ctx, xs, xa)
    if single:
        rewards = ad.reshape(rewards, (rewards.shape[-1],))
    return rewards


def score(model: RewardModel, segment: Trajectory, capture: Optional[dict] = None) -> RewardSequence:
    """Full forward pass over one segment outside any gradient tape."""
    dtype = model.dtype
    states = ad.Tensor(segment.states, dtype=dtype)
    actions = ad.Tensor(segment.actions, dtype=dtype)
    rewards = forward_rewards(model, states, actions, capture=capture)
    return RewardSequence.from_rewards(rewards.data)


def batch_rewards(model: RewardModel, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Reward sequences [B, T] for stacked segments, no gradient tape."""
    dtype = model.dtype
    out = forward_rewards(model, ad.Tensor(states, dtype=dtype), ad.Tensor(actions, dtype=dtype))
    return np.asarray(out.data, dtype=np.float64)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_params(model: RewardModel, path) -> None:
    """Text header (format version + config) followed by named tensors as
    little-endian float32; the whole file round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode("utf-8"))
        fh.write((json.dumps(model.config.to_dict(), sort_keys=True) + "\n").encode("utf-8"))
        for name in sorted(model.params):
            arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
            dims = "x".join(str(d) for d in arr.shape)
            fh.write(f"tensor {name} {dims}\n".encode("utf-8"))
            fh.write(arr.tobytes())


def load_params(path, dtype=np.float32) -> RewardModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    buf = io.BytesIO(blob)

    def read_line():
        line = buf.readline()
        if not line:
            raise CheckpointError("unexpected end of checkpoint")
        return line.decode("utf-8").rstrip("\n")

    if read_line() != CHECKPOINT_MAGIC:
        raise CheckpointError("not a preflab checkpoint")
    try:
        config = ModelConfig.from_dict(json.loads(read_line()))
    except (json.JSONDecodeError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from exc
    expected = param_shapes(config)
    params = {}
    while True:
        pos = buf.tell()
        line = buf.readline()
        if not line:
            break
        header = line.decode("utf-8").rstrip("\n").split(" ")
        if len(header) != 3 or header[0] != "tensor":
            raise CheckpointError(f"malformed tensor header at byte {pos}")
        name, dims = header[1], header[2]
        shape = tuple(int(d) for d in dims.split("x"))
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name!r} for variant {config.variant}")
        if shape != expected[name]:
            raise CheckpointError(f"tensor {name!r} shape {shape} != expected {expected[name]}")
        nbytes = int(np.prod(shape)) * 4
        raw = buf.read(nbytes)
        if len(raw) != nbytes:
            raise CheckpointError(f"tensor {name!r} truncated")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        params[name] = ad.parameter(arr, dtype=dtype)
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CheckpointError(f"missing tensors: {missing[:4]}{'...' if len(missing) > 4 else ''}")
    return RewardModel(config=config, params=params)
