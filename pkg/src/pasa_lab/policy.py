"""Differentiable crawler policy and value map over hand-built features.

The policy scores each legal action from a small per-action feature slice
(query overlap of the action's target, novelty of its predicted results,
and an action-type one-hot) and samples from the softmax over those scores.
The value map reads only the state block of the features. Both come in a
linear and a one-hidden-layer variant, with analytic gradients written out
by hand so they can be checked against central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .corpus import overlap_ratio
from .env import EXPAND, PAPER_SESSION, SEARCH, STOP, Action, AgentState, CrawlerEnv, Limits
from .errors import ConfigurationError, ContractViolation, DataError

ARCHS = ("linear", "mlp")
ACTION_DIM = 5  # overlap, novelty, one-hot(search, expand, stop)


@dataclass(frozen=True)
class FeaturizerConfig:
    n_buckets: int = 8

    @property
    def state_dim(self) -> int:
        # query hist + paper hist + (kind, paper overlap, depth, actions taken)
        return 2 * self.n_buckets + 4

    @property
    def action_dim(self) -> int:
        return ACTION_DIM


@dataclass
class StateFeatures:
    state_vec: np.ndarray      # (state_dim,)
    action_feats: np.ndarray   # (n_legal, action_dim)


def _keyword_hist(keywords, n_buckets: int) -> np.ndarray:
    vec = np.zeros(n_buckets)
    for t in keywords:
        vec[t % n_buckets] += 1.0
    if keywords:
        vec /= len(keywords)
    return vec


def state_block(corpus, query, kind: str, current_paper: Optional[int], depth: int,
                n_actions_taken: int, limits: Limits, cfg: FeaturizerConfig) -> np.ndarray:
    """State-only features; this is all the value map sees, so it must be
    computable for any (query, paper) pair without a live queue."""
    B = cfg.n_buckets
    qh = _keyword_hist(query.keywords, B)
    if current_paper is None:
        ph = np.zeros(B)
        pov = 0.0
    else:
        paper = corpus[current_paper]
        ph = _keyword_hist(paper.keywords, B)
        pov = overlap_ratio(paper.keywords, query.keywords)
    tail = np.array([
        1.0 if kind == PAPER_SESSION else 0.0,
        pov,
        depth / max(1, limits.depth_limit),
        n_actions_taken / max(1, limits.max_actions_per_session),
    ])
    return np.concatenate([qh, ph, tail])


def featurize(env: CrawlerEnv, state: AgentState, legal: tuple[Action, ...],
              cfg: FeaturizerConfig) -> StateFeatures:
    """Deterministic features for one state and its legal actions. Novelty is
    computed against the state's frozen queue snapshot, not the live queue."""
    sv = state_block(env.corpus, state.query, state.kind, state.current_paper,
                     state.depth, len(state.actions_taken), env.limits, cfg)
    feats = np.zeros((len(legal), cfg.action_dim))
    qkw = state.query.keywords
    for row, action in enumerate(legal):
        if action.kind == STOP:
            feats[row, 4] = 1.0
            continue
        predicted = env.predicted_results(state, action)
        if predicted:
            fresh = sum(1 for pid in predicted if pid not in state.queue_members)
            novelty = fresh / len(predicted)
        else:
            novelty = 0.0
        if action.kind == SEARCH:
            spec = state.query.candidate_searches[action.index]
            overlap = overlap_ratio(spec.keywords, qkw)
            feats[row, 2] = 1.0
        else:
            if predicted:
                overlap = float(np.mean([
                    overlap_ratio(env.corpus[pid].keywords, qkw) for pid in predicted
                ]))
            else:
                overlap = 0.0
            feats[row, 3] = 1.0
        feats[row, 0] = overlap
        feats[row, 1] = novelty
    return StateFeatures(state_vec=sv, action_feats=feats)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class Params:
    """Named arrays for either network variant; `arch` picks the forward map."""

    arch: str
    arrays: dict[str, np.ndarray]

    def copy(self) -> "Params":
        return Params(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def frozen_copy(self) -> "Params":
        out = self.copy()
        for v in out.arrays.values():
            v.setflags(write=False)
        return out


def _check_arch(arch: str) -> None:
    if arch not in ARCHS:
        raise ConfigurationError(f"arch must be one of {ARCHS}, got {arch!r}")


def init_policy_params(cfg: FeaturizerConfig, arch: str = "linear", hidden: int = 8,
                       rng=None, scale: float = 0.0) -> Params:
    return _init_params(cfg.action_dim, arch, hidden, rng, scale)


def init_value_params(cfg: FeaturizerConfig, arch: str = "linear", hidden: int = 8,
                      rng=None, scale: float = 0.0) -> Params:
    return _init_params(cfg.state_dim, arch, hidden, rng, scale)


def _init_params(in_dim: int, arch: str, hidden: int, rng, scale: float) -> Params:
    _check_arch(arch)
    if hidden < 1 and arch == "mlp":
        raise ConfigurationError(f"hidden must be >= 1 for mlp, got {hidden}")

    def draw(shape):
        if scale == 0.0 or rng is None:
            return np.zeros(shape)
        return rng.normal(0.0, scale, size=shape)

    if arch == "linear":
        return Params(arch, {"w": draw((in_dim,)), "b": draw((1,))})
    return Params(arch, {
        "w1": draw((in_dim, hidden)),
        "b1": draw((hidden,)),
        "w2": draw((hidden,)),
        "b2": draw((1,)),
    })


def zeros_like(params: Params) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


def add_scaled(params: Params, grads: dict[str, np.ndarray], coeff: float) -> Params:
    return Params(params.arch, {k: v + coeff * grads[k] for k, v in params.arrays.items()})


def flatten_params(params: Params) -> np.ndarray:
    return np.concatenate([params.arrays[k].ravel() for k in sorted(params.arrays)])


def unflatten_params(params: Params, vec: np.ndarray) -> Params:
    arrays = {}
    offset = 0
    for k in sorted(params.arrays):
        shape = params.arrays[k].shape
        size = params.arrays[k].size
        arrays[k] = vec[offset:offset + size].reshape(shape).copy()
        offset += size
    return Params(params.arch, arrays)


def params_checksum(params: Params) -> float:
    return float(sum(np.sum(v) for v in params.arrays.values()))


# ---------------------------------------------------------------------------
# Forward maps and analytic gradients
# ---------------------------------------------------------------------------

def scores(params: Params, action_feats: np.ndarray) -> np.ndarray:
    a = params.arrays
    if params.arch == "linear":
        return action_feats @ a["w"] + a["b"][0]
    hidden = np.tanh(action_feats @ a["w1"] + a["b1"])
    return hidden @ a["w2"] + a["b2"][0]


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x)
    e = np.exp(z)
    return e / e.sum()


def action_dist(params: Params, feats: StateFeatures) -> np.ndarray:
    """Softmax over legal-action scores; sums to 1 within float error."""
    return softmax(scores(params, feats.action_feats))


def logprob(params: Params, feats: StateFeatures, action_index: int) -> float:
    s = scores(params, feats.action_feats)
    z = s - np.max(s)
    return float(z[action_index] - math.log(np.exp(z).sum()))


def logprob_and_grad(params: Params, feats: StateFeatures,
                     action_index: int) -> tuple[float, dict[str, np.ndarray]]:
    """log pi(a|s) and its gradient in theta: grad s_a - sum_i p_i grad s_i."""
    A = feats.action_feats
    s = scores(params, A)
    z = s - np.max(s)
    logp = float(z[action_index] - math.log(np.exp(z).sum()))
    p = softmax(s)
    a = params.arrays
    if params.arch == "linear":
        grads = {
            "w": A[action_index] - p @ A,
            "b": np.zeros(1),  # shared bias cancels in the softmax
        }
        return logp, grads
    H = np.tanh(A @ a["w1"] + a["b1"])            # (n, hidden)
    G = (1.0 - H ** 2) * a["w2"]                  # d score_i / d b1, rowwise
    mean_G = p @ G
    grads = {
        "w2": H[action_index] - p @ H,
        "b2": np.zeros(1),
        "b1": G[action_index] - mean_G,
        "w1": np.outer(A[action_index], G[action_index]) - A.T @ (p[:, None] * G),
    }
    return logp, grads


def value(params: Params, state_vec: np.ndarray) -> float:
    a = params.arrays
    if params.arch == "linear":
        return float(state_vec @ a["w"] + a["b"][0])
    hidden = np.tanh(state_vec @ a["w1"] + a["b1"])
    return float(hidden @ a["w2"] + a["b2"][0])


def value_and_grad(params: Params, state_vec: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    a = params.arrays
    if params.arch == "linear":
        v = float(state_vec @ a["w"] + a["b"][0])
        return v, {"w": state_vec.copy(), "b": np.ones(1)}
    h = np.tanh(state_vec @ a["w1"] + a["b1"])
    v = float(h @ a["w2"] + a["b2"][0])
    dh = (1.0 - h ** 2) * a["w2"]
    return v, {
        "w2": h.copy(),
        "b2": np.ones(1),
        "b1": dh,
        "w1": np.outer(state_vec, dh),
    }


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_action(probs: np.ndarray, rng) -> int:
    """Draw an index from a categorical distribution. Rejects distributions
    that do not sum to 1; never returns a zero-probability index."""
    probs = np.asarray(probs, dtype=float)
    total = float(probs.sum())
    if not np.isfinite(total) or abs(total - 1.0) > 1e-6 or np.any(probs < 0):
        raise ContractViolation(f"action distribution is not normalized (sum={total})")
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    idx = min(idx, len(probs) - 1)
    while probs[idx] == 0.0:  # float-edge guard at segment boundaries
        idx -= 1
    return idx


def greedy_action(probs: np.ndarray) -> int:
    return int(np.argmax(probs))


class CrawlerPolicy:
    """Bundles featurizer config and parameters behind the rollout protocol
    distribution(env, state) -> (legal, feats, probs)."""

    def __init__(self, params: Params, feat_cfg: FeaturizerConfig = FeaturizerConfig(),
                 greedy: bool = False) -> None:
        self.params = params
        self.feat_cfg = feat_cfg
        self.greedy = greedy

    def distribution(self, env: CrawlerEnv, state: AgentState):
        legal = env.legal_actions(state)
        feats = featurize(env, state, legal, self.feat_cfg)
        probs = action_dist(self.params, feats)
        if self.greedy:
            onehot = np.zeros_like(probs)
            onehot[greedy_action(probs)] = 1.0
            probs = onehot
        return legal, feats, probs


def bootstrap_value_fn(corpus, query, value_params: Params, limits: Limits,
                       cfg: FeaturizerConfig) -> Callable[[int, int], float]:
    """Value of the fresh paper session a newly found paper would open,
    as a function of (paper id, found depth)."""
    def fn(paper_id: int, depth: int) -> float:
        sv = state_block(corpus, query, PAPER_SESSION, paper_id, depth, 0, limits, cfg)
        return value(value_params, sv)
    return fn


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: str
    dims: list[int]
    step: int
    feat_cfg: FeaturizerConfig
    policy: Params
    value: Optional[Params]
    sft: Optional[Params]


def _params_to_json(params: Optional[Params]):
    if params is None:
        return None
    return {"arch": params.arch, **{k: v.tolist() for k, v in params.arrays.items()}}


def _params_from_json(obj) -> Optional[Params]:
    if obj is None:
        return None
    obj = dict(obj)
    arch = obj.pop("arch")
    _check_arch(arch)
    return Params(arch, {k: np.asarray(v, dtype=float) for k, v in obj.items()})


def _dims(policy_params: Params, cfg: FeaturizerConfig) -> list[int]:
    if policy_params.arch == "linear":
        return [cfg.action_dim, 1]
    return [cfg.action_dim, len(policy_params.arrays["b1"]), 1]


def save_checkpoint(path: str | Path, policy_params: Params, value_params: Optional[Params],
                    feat_cfg: FeaturizerConfig, step: int, sft: Optional[Params] = None) -> None:
    payload = {
        "model": policy_params.arch,
        "dims": _dims(policy_params, feat_cfg),
        "step": int(step),
        "features": {"n_buckets": feat_cfg.n_buckets},
        "policy": _params_to_json(policy_params),
        "value": _params_to_json(value_params),
        "sft": _params_to_json(sft),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {p} is not valid JSON: {exc}") from exc
    for key in ("model", "dims", "step", "policy", "features"):
        if key not in payload:
            raise DataError(f"checkpoint {p} is missing field {key!r}")
    if payload["model"] not in ARCHS:
        raise DataError(f"checkpoint {p} has unknown model {payload['model']!r}")
    return Checkpoint(
        model=payload["model"],
        dims=list(payload["dims"]),
        step=int(payload["step"]),
        feat_cfg=FeaturizerConfig(n_buckets=int(payload["features"]["n_buckets"])),
        policy=_params_from_json(payload["policy"]),
        value=_params_from_json(payload.get("value")),
        sft=_params_from_json(payload.get("sft")),
    )
