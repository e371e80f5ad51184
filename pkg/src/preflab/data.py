"""Trajectory and preference-triple data model with JSONL persistence.

File layout: one JSON record per line, UTF-8. The first line is a header
carrying format version, feature dims and environment name; the rest are
trajectory / preference / pair records. Floats are serialized as decimal
text via Python's shortest-round-trip repr, which is lossless at up to 17
significant digits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    ContractError,
    IntegrityError,
    LengthMismatchError,
    NonFiniteValueError,
    ParseError,
    RenderLengthError,
)

FORMAT_VERSION = 1

LABELS = (0.0, 0.5, 1.0)
SOURCES = ("oracle", "human")


@dataclass
class Trajectory:
    """Time-aligned state/action sequences plus oracle-only bookkeeping.

    `true_rewards` / `true_return` come from the generating environment and
    are never model inputs. `learned_rewards` is filled by relabeling.
    """

    id: str
    states: np.ndarray  # [T, d_s]
    actions: np.ndarray  # [T, d_a]
    env_name: str = ""
    render: Optional[np.ndarray] = None  # [T, 2] display projection
    true_return: Optional[float] = None
    true_rewards: Optional[np.ndarray] = None  # [T]
    learned_rewards: Optional[np.ndarray] = None  # [T]

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.render is not None:
            self.render = np.asarray(self.render, dtype=np.float64)
        if self.true_rewards is not None:
            self.true_rewards = np.asarray(self.true_rewards, dtype=np.float64)
        if self.learned_rewards is not None:
            self.learned_rewards = np.asarray(self.learned_rewards, dtype=np.float64)

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def segment(self, start: int, length: int) -> "Trajectory":
        """Cut a contiguous sub-trajectory; derived fields are re-sliced."""
        stop = start + length
        if not (0 <= start < stop <= self.length):
            raise ContractError(f"segment [{start}:{stop}] out of bounds for T={self.length}")
        sub_rewards = self.true_rewards[start:stop] if self.true_rewards is not None else None
        return Trajectory(
            id=f"{self.id}[{start}:{stop}]",
            states=self.states[start:stop].copy(),
            actions=self.actions[start:stop].copy(),
            env_name=self.env_name,
            render=self.render[start:stop].copy() if self.render is not None else None,
            true_return=float(sub_rewards.sum()) if sub_rewards is not None else None,
            true_rewards=sub_rewards.copy() if sub_rewards is not None else None,
            learned_rewards=self.learned_rewards[start:stop].copy()
            if self.learned_rewards is not None
            else None,
        )

    def equals(self, other: "Trajectory") -> bool:
        def arr_eq(a, b):
            if a is None or b is None:
                return (a is None) == (b is None)
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.id == other.id
            and self.env_name == other.env_name
            and arr_eq(self.states, other.states)
            and arr_eq(self.actions, other.actions)
            and arr_eq(self.render, other.render)
            and self.true_return == other.true_return
            and arr_eq(self.true_rewards, other.true_rewards)
            and arr_eq(self.learned_rewards, other.learned_rewards)
        )


@dataclass(frozen=True)
class PreferenceTriple:
    id0: str
    id1: str
    label: float  # 0 -> trajectory 0 preferred, 1 -> trajectory 1, 0.5 -> tie
    source: str = "oracle"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ContractError(f"label {self.label} not in {LABELS}")
        if self.id0 == self.id1:
            raise ContractError(f"preference pair references the same trajectory {self.id0!r}")
        if self.source not in SOURCES:
            raise ContractError(f"source {self.source!r} not in {SOURCES}")


@dataclass
class PreferenceDataset:
    trajectories: dict = field(default_factory=dict)  # id -> Trajectory
    triples: list = field(default_factory=list)
    env_name: str = ""
    d_s: int = 0
    d_a: int = 0

    def __post_init__(self):
        if self.trajectories and not self.d_s:
            any_traj = next(iter(self.trajectories.values()))
            self.d_s = any_traj.states.shape[1]
            self.d_a = any_traj.actions.shape[1]
            self.env_name = self.env_name or any_traj.env_name

    def add_trajectory(self, traj: Trajectory) -> None:
        validate_trajectory(traj)
        if not self.d_s:
            self.d_s, self.d_a = traj.states.shape[1], traj.actions.shape[1]
            self.env_name = self.env_name or traj.env_name
        self.trajectories[traj.id] = traj

    def add_triple(self, triple: PreferenceTriple) -> None:
        for ref in (triple.id0, triple.id1):
            if ref not in self.trajectories:
                raise IntegrityError(f"preference references unknown trajectory {ref!r}")
        self.triples.append(triple)

    def resolve(self, triple: PreferenceTriple):
        return self.trajectories[triple.id0], self.trajectories[triple.id1]

    def equals(self, other: "PreferenceDataset") -> bool:
        return (
            sorted(self.trajectories) == sorted(other.trajectories)
            and all(self.trajectories[k].equals(other.trajectories[k]) for k in self.trajectories)
            and self.triples == other.triples
            and (self.env_name, self.d_s, self.d_a) == (other.env_name, other.d_s, other.d_a)
        )


def validate_trajectory(traj: Trajectory) -> None:
    """Check all Trajectory invariants; raises a distinctly named error each."""
    if traj.states.ndim != 2 or traj.actions.ndim != 2:
        raise LengthMismatchError(
            f"{traj.id}: states/actions must be 2-D, got {traj.states.shape} / {traj.actions.shape}"
        )
    if traj.states.shape[0] != traj.actions.shape[0]:
        raise LengthMismatchError(
            f"{traj.id}: states T={traj.states.shape[0]} vs actions T={traj.actions.shape[0]}"
        )
    if traj.states.shape[0] < 1:
        raise LengthMismatchError(f"{traj.id}: empty trajectory")
    if not np.all(np.isfinite(traj.states)) or not np.all(np.isfinite(traj.actions)):
        raise NonFiniteValueError(f"{traj.id}: non-finite feature value")
    if traj.render is not None and traj.render.shape[0] != traj.states.shape[0]:
        raise RenderLengthError(
            f"{traj.id}: render length {traj.render.shape[0]} != T={traj.states.shape[0]}"
        )
    for name in ("true_rewards", "learned_rewards"):
        arr = getattr(traj, name)
        if arr is not None and arr.shape != (traj.states.shape[0],):
            raise LengthMismatchError(f"{traj.id}: {name} shape {arr.shape} != (T,)")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _arr2list(arr):
    return None if arr is None else [[float(v) for v in row] for row in arr]


def _vec2list(arr):
    return None if arr is None else [float(v) for v in arr]


def trajectory_record(traj: Trajectory) -> dict:
    rec = {
        "kind": "trajectory",
        "id": traj.id,
        "states": _arr2list(traj.states),
        "actions": _arr2list(traj.actions),
        "render": _arr2list(traj.render),
        "env": traj.env_name,
    }
    if traj.true_return is not None:
        rec["true_return"] = float(traj.true_return)
    if traj.true_rewards is not None:
        rec["true_rewards"] = _vec2list(traj.true_rewards)
    if traj.learned_rewards is not None:
        rec["learned_rewards"] = _vec2list(traj.learned_rewards)
    return rec


def trajectory_from_record(rec: dict) -> Trajectory:
    return Trajectory(
        id=rec["id"],
        states=np.asarray(rec["states"], dtype=np.float64),
        actions=np.asarray(rec["actions"], dtype=np.float64),
        env_name=rec.get("env", ""),
        render=None if rec.get("render") is None else np.asarray(rec["render"], dtype=np.float64),
        true_return=rec.get("true_return"),
        true_rewards=None
        if rec.get("true_rewards") is None
        else np.asarray(rec["true_rewards"], dtype=np.float64),
        learned_rewards=None
        if rec.get("learned_rewards") is None
        else np.asarray(rec["learned_rewards"], dtype=np.float64),
    )


def save_dataset(dataset: PreferenceDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "header",
            "version": FORMAT_VERSION,
            "d_s": dataset.d_s,
            "d_a": dataset.d_a,
            "env": dataset.env_name,
        }
        fh.write(json.dumps(header) + "\n")
        for traj_id in sorted(dataset.trajectories):
            fh.write(json.dumps(trajectory_record(dataset.trajectories[traj_id])) + "\n")
        for triple in dataset.triples:
            rec = {
                "kind": "preference",
                "id0": triple.id0,
                "id1": triple.id1,
                "label": triple.label,
                "source": triple.source,
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> PreferenceDataset:
    dataset = PreferenceDataset()
    pending_triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})", line=lineno) from exc
            kind = rec.get("kind")
            if kind == "header":
                if lineno != 1:
                    raise ParseError(f"line {lineno}: header after first line", line=lineno)
                if rec.get("version") != FORMAT_VERSION:
                    raise ParseError(
                        f"line {lineno}: unsupported format version {rec.get('version')}",
                        line=lineno,
                    )
                dataset.env_name = rec.get("env", "")
                dataset.d_s = int(rec.get("d_s", 0))
                dataset.d_a = int(rec.get("d_a", 0))
            elif kind == "trajectory":
                try:
                    traj = trajectory_from_record(rec)
                    validate_trajectory(traj)
                except KeyError as exc:
                    raise ParseError(f"line {lineno}: missing field {exc}", line=lineno) from exc
                if dataset.d_s and traj.states.shape[1] != dataset.d_s:
                    raise IntegrityError(
                        f"line {lineno}: d_s {traj.states.shape[1]} != header {dataset.d_s}"
                    )
                dataset.trajectories[traj.id] = traj
            elif kind == "preference":
                try:
                    pending_triples.append(
                        (lineno, PreferenceTriple(rec["id0"], rec["id1"], rec["label"], rec["source"]))
                    )
                except KeyError as exc:
                    raise ParseError(f"line {lineno}: missing field {exc}", line=lineno) from exc
            elif kind == "pair":
                # Pair-queue records belong to the labeling service, skipped here.
                continue
            else:
                raise ParseError(f"line {lineno}: unknown record kind {kind!r}", line=lineno)
    for lineno, triple in pending_triples:
        for ref in (triple.id0, triple.id1):
            if ref not in dataset.trajectories:
                raise IntegrityError(f"line {lineno}: dangling trajectory reference {ref!r}")
        dataset.triples.append(triple)
    return dataset


# ---------------------------------------------------------------------------
# pair sampling
# ---------------------------------------------------------------------------


def sample_pairs(trajectories: dict, n: int, segment_len: int, seed: int) -> list:
    """Draw n equal-length segment pairs from distinct episodes.

    Deterministic under (trajectories, n, segment_len, seed); episode ids
    are sorted before drawing so dict order cannot leak in.
    """
    if not trajectories:
        raise ContractError("sample_pairs: empty trajectory store")
    if n < 0:
        raise ContractError("sample_pairs: negative count")
    ids = sorted(trajectories)
    shortest = min(trajectories[i].length for i in ids)
    if segment_len > shortest:
        raise ContractError(f"segment_len {segment_len} > shortest episode length {shortest}")
    if n > 0 and len(ids) < 2:
        raise ContractError("sample_pairs: need at least two episodes")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        i0, i1 = rng.choice(len(ids), size=2, replace=False)
        segs = []
        for idx in (int(i0), int(i1)):
            traj = trajectories[ids[idx]]
            start = int(rng.integers(0, traj.length - segment_len + 1))
            segs.append(traj.segment(start, segment_len))
        pairs.append((segs[0], segs[1]))
    return pairs
