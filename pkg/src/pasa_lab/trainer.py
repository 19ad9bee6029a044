"""Session-level PPO trainer and the imitation (behavior cloning) warm start.

Reward for one action: alpha times the number of newly queued papers that
pass the relevance gate, minus a per-action-type cost. A session's return
at position t sums the discounted rewards from t to the session's end and,
for every paper found along the way, a bootstrap term: gamma1 times the
(sampling-time, detached) value of the paper session that paper will open.
A KL penalty to the frozen imitation policy is charged once, at position t.

The surrogate objective is the standard clipped ratio form; the value loss
is the clipped max-of-squared-errors form; the total training loss is
(minus the surrogate) plus eta times the value loss. Gradients are analytic
and flow only through the unclipped branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import Corpus, Query
from .env import (
    EXPAND, SEARCH, STOP, Action, CrawlerEnv, Limits, Session, Transition,
    run_session,
)
from .errors import ConfigurationError, ContractViolation
from .policy import (
    CrawlerPolicy, FeaturizerConfig, Params, action_dist, add_scaled,
    bootstrap_value_fn, featurize, init_value_params, logprob,
    logprob_and_grad, value, value_and_grad, zeros_like,
)
from .selector import SelectorModel, indicator

# Probability that an oracle expand demo keeps a section citing no answers.
INCLUDE_OTHER_SECTION_PROB = 0.10


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 1.5
    cost_search: float = 0.1
    cost_expand: float = 0.1
    cost_stop: float = 0.0
    # When False, only planted answers count (the exact-set reward ablation);
    # the selector branch of the relevance gate is bypassed.
    selector_as_rm: bool = True

    def cost(self, action: Action) -> float:
        if action.kind == SEARCH:
            return self.cost_search
        if action.kind == EXPAND:
            return self.cost_expand
        return self.cost_stop


@dataclass(frozen=True)
class PPOConfig:
    gamma0: float = 1.0            # within-session discount
    gamma1: float = 0.1            # across-session bootstrap weight
    beta: float = 0.1              # KL penalty to the imitation policy
    clip_epsilon: float = 0.2      # ratio clip and value clip width
    value_coeff: float = 10.0      # eta: weight of the value loss
    learning_rate: float = 1e-6
    epochs_per_step: int = 2
    queries_per_step: int = 4
    expand_sessions_per_wave: int = 6
    policy_freeze_steps: int = 50
    total_steps: int = 250
    normalize_advantages: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.gamma0 <= 1.0:
            raise ConfigurationError(f"gamma0 must be in [0, 1], got {self.gamma0}")
        if self.clip_epsilon <= 0:
            raise ConfigurationError(f"clip_epsilon must be > 0, got {self.clip_epsilon}")
        for name in ("epochs_per_step", "queries_per_step", "total_steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.expand_sessions_per_wave < 0 or self.policy_freeze_steps < 0:
            raise ConfigurationError("expand_sessions_per_wave and policy_freeze_steps must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")


# ---------------------------------------------------------------------------
# Rewards, returns, advantages
# ---------------------------------------------------------------------------

def reward(transition: Transition, query: Query, queue_before, selector: SelectorModel,
           cfg: RewardConfig) -> float:
    """alpha * (# newly queued papers passing the relevance gate) - cost."""
    gained = sum(
        indicator(selector, query, pid, queue_before, selector_branch=cfg.selector_as_rm)
        for pid in transition.new_papers
    )
    return cfg.alpha * gained - cfg.cost(transition.action)


def assign_rewards(sessions: Sequence[Session], query: Query, selector: SelectorModel,
                   cfg: RewardConfig) -> None:
    for session in sessions:
        for tr in session.transitions:
            tr.reward = reward(tr, query, tr.state.queue_members, selector, cfg)


def session_returns(session: Session, value_fn: Callable[[int, int], float],
                    pi_theta: Optional[Params], pi_sft: Optional[Params],
                    cfg: PPOConfig) -> np.ndarray:
    """Per-position returns: discounted tail of (reward + gamma1 * sum of
    bootstrap values of the papers found at that position), minus beta times
    the log-ratio of sampling policy to imitation policy at the position
    itself. value_fn maps (paper id, found depth) to a detached value."""
    trs = session.transitions
    if any(tr.reward is None for tr in trs):
        raise ContractViolation("session has unfilled rewards")
    brackets = np.empty(len(trs))
    for k, tr in enumerate(trs):
        boot = 0.0
        if cfg.gamma1 != 0.0 and tr.new_papers:
            boot = sum(value_fn(pid, tr.found_depth) for pid in tr.new_papers)
        brackets[k] = tr.reward + cfg.gamma1 * boot
    returns = np.empty(len(trs))
    tail = 0.0
    for k in range(len(trs) - 1, -1, -1):
        tail = brackets[k] + cfg.gamma0 * tail
        returns[k] = tail
    if cfg.beta != 0.0:
        for k, tr in enumerate(trs):
            lp_theta = (tr.logprob_old if pi_theta is None
                        else logprob(pi_theta, tr.feats, tr.action_index))
            lp_sft = logprob(pi_sft, tr.feats, tr.action_index)
            returns[k] -= cfg.beta * (lp_theta - lp_sft)
    return returns


def advantages(returns: np.ndarray, values_old: np.ndarray) -> np.ndarray:
    returns = np.asarray(returns, dtype=float)
    values_old = np.asarray(values_old, dtype=float)
    if returns.shape != values_old.shape:
        raise ContractViolation("returns and values_old must have the same length")
    return returns - values_old


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

@dataclass
class QueryRollout:
    """All sessions one training step sampled for a single query. They share
    one queue, so rewards never pay twice for the same paper."""
    query: Query
    sessions: list[Session]


@dataclass
class TrainBatch:
    groups: list[QueryRollout]
    transitions: list[Transition] = field(default_factory=list)

    def __post_init__(self):
        if not self.transitions:
            self.transitions = [
                tr for g in self.groups for s in g.sessions for tr in s.transitions
            ]


def prepare_batch(groups: Sequence[QueryRollout], corpus: Corpus, selector: SelectorModel,
                  policy_params: Params, value_params: Params, sft_params: Params,
                  reward_cfg: RewardConfig, ppo_cfg: PPOConfig, limits: Limits,
                  feat_cfg: FeaturizerConfig) -> TrainBatch:
    """Fill rewards, sampling-time values, returns, and advantages in place.
    Everything computed here is frozen for the epochs that reuse the batch."""
    for group in groups:
        boot = bootstrap_value_fn(corpus, group.query, value_params, limits, feat_cfg)
        assign_rewards(group.sessions, group.query, selector, reward_cfg)
        for session in group.sessions:
            rets = session_returns(session, boot, policy_params, sft_params, ppo_cfg)
            vals = np.array([value(value_params, tr.feats.state_vec) for tr in session.transitions])
            advs = advantages(rets, vals)
            for tr, r, v, a in zip(session.transitions, rets, vals, advs):
                tr.ret = float(r)
                tr.value_old = float(v)
                tr.advantage = float(a)
    batch = TrainBatch(groups=list(groups))
    if ppo_cfg.normalize_advantages and batch.transitions:
        advs = np.array([tr.advantage for tr in batch.transitions])
        std = advs.std()
        if std > 1e-12:
            for tr in batch.transitions:
                tr.advantage = float((tr.advantage - advs.mean()) / std)
    return batch


# ---------------------------------------------------------------------------
# PPO losses and gradients
# ---------------------------------------------------------------------------

@dataclass
class PPOLosses:
    policy_objective: float                  # mean clipped surrogate (maximize)
    value_loss: float                        # mean clipped squared error
    total_loss: float                        # -objective + eta * value_loss
    policy_grads: dict[str, np.ndarray]      # d total / d theta
    value_grads: dict[str, np.ndarray]       # d total / d phi


def ppo_losses(batch: TrainBatch, policy_params: Params, value_params: Params,
               cfg: PPOConfig) -> PPOLosses:
    trs = batch.transitions
    if not trs:
        raise ContractViolation("empty batch")
    for tr in trs:
        if tr.ret is None or tr.advantage is None or tr.value_old is None:
            raise ContractViolation("batch has unfilled transitions; run prepare_batch first")
    eps = cfg.clip_epsilon
    n = len(trs)
    surr_sum = 0.0
    vloss_sum = 0.0
    pgrad = zeros_like(policy_params)
    vgrad = zeros_like(value_params)
    for tr in trs:
        logp, glogp = logprob_and_grad(policy_params, tr.feats, tr.action_index)
        # Overflow to inf rather than raising so a diverging run is caught by
        # the finiteness checks in the training loop.
        delta = logp - tr.logprob_old
        ratio = math.exp(delta) if delta < 709.0 else math.inf
        adv = tr.advantage
        unclipped = ratio * adv
        clipped = min(max(ratio, 1.0 - eps), 1.0 + eps) * adv
        surr_sum += min(unclipped, clipped)
        if unclipped <= clipped:
            # Gradient flows through the ratio only on the active unclipped
            # branch; on the clipped side the surrogate is locally constant.
            coeff = ratio * adv
            for k, g in glogp.items():
                pgrad[k] += coeff * g
        v, gv = value_and_grad(value_params, tr.feats.state_vec)
        v_clip = min(max(v, tr.value_old - eps), tr.value_old + eps)
        d_raw = tr.ret - v
        d_clip = tr.ret - v_clip
        e_raw = d_raw * d_raw
        e_clip = d_clip * d_clip
        vloss_sum += max(e_raw, e_clip)
        if e_raw >= e_clip:
            coeff = -2.0 * (tr.ret - v)
            for k, g in gv.items():
                vgrad[k] += coeff * g
        # else: active branch is the clipped one, whose value is constant in phi
    policy_objective = surr_sum / n
    value_loss = vloss_sum / n
    total = -policy_objective + cfg.value_coeff * value_loss
    policy_grads = {k: -g / n for k, g in pgrad.items()}
    value_grads = {k: cfg.value_coeff * g / n for k, g in vgrad.items()}
    return PPOLosses(policy_objective, value_loss, total, policy_grads, value_grads)


def mean_kl_to_sft(batch: TrainBatch, policy_params: Params, sft_params: Params) -> float:
    """Exact categorical KL(pi_theta || pi_sft) averaged over batch states."""
    total = 0.0
    for tr in batch.transitions:
        p = action_dist(policy_params, tr.feats)
        q = action_dist(sft_params, tr.feats)
        # Terms with p == 0 contribute nothing; p > 0 with q == 0 is a
        # genuine +inf. Degenerate distributions show up during divergence,
        # so compute both cases quietly instead of warning.
        pos = p > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(
                pos, p * (np.log(np.where(pos, p, 1.0)) - np.log(q)), 0.0)
        total += float(np.sum(terms))
    return total / max(1, len(batch.transitions))


# ---------------------------------------------------------------------------
# Imitation warm start
# ---------------------------------------------------------------------------

@dataclass
class Demo:
    feats: object            # StateFeatures
    legal: tuple[Action, ...]
    action_index: int


@dataclass
class BCResult:
    snapshot: Params          # frozen pi_sft
    nll_history: list[float]  # mean NLL before training and after each epoch


def make_demos(corpus: Corpus, queries: Sequence[Query], selector: SelectorModel,
               seed: int, limits: Limits = Limits(),
               feat_cfg: FeaturizerConfig = FeaturizerConfig(),
               expand_cap: Optional[int] = None) -> list[Demo]:
    """Oracle demonstrations. Query sessions fire every candidate search whose
    results contain an answer, then Stop. Paper sessions expand every section
    citing at least one answer, keep other sections with a small fixed
    probability, then Stop. The selector is not consulted: demonstrations come
    from the planted answer sets."""
    rng = np.random.default_rng(seed)
    demos: list[Demo] = []
    cap = expand_cap if expand_cap is not None else limits.max_sessions - 1
    for query in queries:
        env = CrawlerEnv(corpus, query, limits)
        state = env.query_state()
        wanted = [
            i for i in range(len(query.candidate_searches))
            if set(env.predicted_results(state, Action.search(i))) & query.answers
        ]
        for i in wanted:
            action = Action.search(i)
            legal = env.legal_actions(state)
            if action not in legal:
                break  # action cap reached
            demos.append(Demo(featurize(env, state, legal, feat_cfg), legal,
                              legal.index(action)))
            state, _, _ = env.step(state, action)
        legal = env.legal_actions(state)
        demos.append(Demo(featurize(env, state, legal, feat_cfg), legal,
                          legal.index(Action.stop())))

        for pid, depth in env.queue.entries()[:cap]:
            state = env.paper_state(pid, depth)
            sections = corpus[pid].sections
            for j, section in enumerate(sections):
                cites_answer = bool(set(section.cited) & query.answers)
                if not cites_answer and rng.random() >= INCLUDE_OTHER_SECTION_PROB:
                    continue
                action = Action.expand(j)
                legal = env.legal_actions(state)
                if action not in legal:
                    break  # depth limit or action cap
                demos.append(Demo(featurize(env, state, legal, feat_cfg), legal,
                                  legal.index(action)))
                state, _, _ = env.step(state, action)
            legal = env.legal_actions(state)
            demos.append(Demo(featurize(env, state, legal, feat_cfg), legal,
                              legal.index(Action.stop())))
    return demos


def bc_train(demos: Sequence[Demo], init_params: Params, epochs: int, lr: float) -> BCResult:
    """Full-batch gradient descent on mean NLL of the demo actions."""
    if not demos:
        raise ContractViolation("no demos to train on")
    if epochs < 0:
        raise ConfigurationError("epochs must be >= 0")
    params = init_params.copy()
    n = len(demos)

    def mean_nll(p: Params) -> float:
        return -sum(logprob(p, d.feats, d.action_index) for d in demos) / n

    history = [mean_nll(params)]
    for _ in range(epochs):
        grad = zeros_like(params)
        for d in demos:
            _, g = logprob_and_grad(params, d.feats, d.action_index)
            for k in grad:
                grad[k] -= g[k]
        params = add_scaled(params, grad, -lr / n)
        history.append(mean_nll(params))
    return BCResult(snapshot=params.frozen_copy(), nll_history=history)


# ---------------------------------------------------------------------------
# Sampling and the training loop
# ---------------------------------------------------------------------------

@dataclass
class StepSample:
    groups: list[QueryRollout]
    short: bool  # fewer expand candidates than requested somewhere


def sample_step(policy: CrawlerPolicy, queries: Sequence[Query], corpus: Corpus,
                cfg: PPOConfig, limits: Limits, rng,
                mask_expand: bool = False) -> StepSample:
    """One training step's sessions: a query session per sampled query, then
    two waves of paper sessions, each wave drawn uniformly without replacement
    from the papers the previous wave surfaced (pooled across the step's
    queries)."""
    n_q = min(cfg.queries_per_step, len(queries))
    picked = rng.choice(len(queries), size=n_q, replace=False)
    groups: list[QueryRollout] = []
    envs: list[CrawlerEnv] = []
    wave_pool: list[tuple[int, int, int]] = []  # (group idx, paper id, depth)
    for gi, qi in enumerate(picked):
        query = queries[int(qi)]
        env = CrawlerEnv(corpus, query, limits, mask_expand=mask_expand)
        session = run_session(env, policy, env.query_state(), rng)
        groups.append(QueryRollout(query=query, sessions=[session]))
        envs.append(env)
        for tr in session.transitions:
            wave_pool.extend((gi, pid, tr.found_depth) for pid in tr.new_papers)

    short = False
    for _ in range(2):
        want = cfg.expand_sessions_per_wave
        if len(wave_pool) < want:
            short = True
        take = min(want, len(wave_pool))
        if take == 0:
            break
        idx = rng.choice(len(wave_pool), size=take, replace=False)
        next_pool: list[tuple[int, int, int]] = []
        for i in idx:
            gi, pid, depth = wave_pool[int(i)]
            session = run_session(envs[gi], policy, envs[gi].paper_state(pid, depth), rng)
            groups[gi].sessions.append(session)
            for tr in session.transitions:
                next_pool.extend((gi, p, tr.found_depth) for p in tr.new_papers)
        wave_pool = next_pool
    return StepSample(groups=groups, short=short)


@dataclass
class MetricsRow:
    step: int
    phase: str
    mean_return: float
    mean_kl: float
    mean_actions: float
    policy_loss: float
    value_loss: float


@dataclass
class TrainResult:
    policy: Params
    value: Params
    metrics: list[MetricsRow]
    diverged: bool = False
    steps_run: int = 0


def ppo_train(corpus: Corpus, queries: Sequence[Query], sft: Params, *,
              feat_cfg: FeaturizerConfig = FeaturizerConfig(),
              limits: Limits = Limits(),
              selector: SelectorModel = SelectorModel(),
              reward_cfg: RewardConfig = RewardConfig(),
              ppo_cfg: PPOConfig = PPOConfig(),
              seed: int = 0,
              mask_expand: bool = False,
              step_callback: Optional[Callable[[int, Params, Params], None]] = None,
              ) -> TrainResult:
    """Session-level PPO from the imitation snapshot. The policy is frozen for
    the first policy_freeze_steps steps while the value map warms up. On a
    non-finite loss the loop aborts and returns the last finite parameters
    with diverged=True."""
    ppo_cfg.validate()
    if not queries:
        raise ContractViolation("no training queries")
    rng = np.random.default_rng(seed)
    theta = sft.copy()
    phi = init_value_params(feat_cfg, arch=sft.arch,
                            hidden=len(sft.arrays.get("b1", np.zeros(8))))
    metrics: list[MetricsRow] = []
    last_good = (theta.copy(), phi.copy())
    diverged = False
    steps_run = 0

    for step in range(1, ppo_cfg.total_steps + 1):
        sample = sample_step(CrawlerPolicy(theta, feat_cfg), queries, corpus,
                             ppo_cfg, limits, rng, mask_expand=mask_expand)
        batch = prepare_batch(sample.groups, corpus, selector, theta, phi, sft,
                              reward_cfg, ppo_cfg, limits, feat_cfg)
        phase = "freeze" if step <= ppo_cfg.policy_freeze_steps else "joint"
        losses = None
        for _ in range(ppo_cfg.epochs_per_step):
            losses = ppo_losses(batch, theta, phi, ppo_cfg)
            if not _finite_losses(losses):
                diverged = True
                break
            phi = add_scaled(phi, losses.value_grads, -ppo_cfg.learning_rate)
            if phase == "joint":
                theta = add_scaled(theta, losses.policy_grads, -ppo_cfg.learning_rate)
            if not (_finite_params(theta) and _finite_params(phi)):
                diverged = True
                break
        if diverged:
            theta, phi = last_good
            break
        steps_run = step
        last_good = (theta.copy(), phi.copy())
        session_returns_raw = [
            sum(tr.reward for tr in s.transitions)
            for g in sample.groups for s in g.sessions
        ]
        n_actions = sum(
            1 for g in sample.groups for s in g.sessions
            for tr in s.transitions if tr.action.kind != STOP
        )
        metrics.append(MetricsRow(
            step=step,
            phase=phase,
            mean_return=float(np.mean(session_returns_raw)),
            mean_kl=mean_kl_to_sft(batch, theta, sft),
            mean_actions=n_actions / max(1, len(sample.groups)),
            policy_loss=-losses.policy_objective,
            value_loss=losses.value_loss,
        ))
        if step_callback is not None:
            step_callback(step, theta, phi)

    return TrainResult(policy=theta, value=phi, metrics=metrics,
                       diverged=diverged, steps_run=steps_run)


def _finite_losses(losses: PPOLosses) -> bool:
    if not (math.isfinite(losses.total_loss) and math.isfinite(losses.policy_objective)
            and math.isfinite(losses.value_loss)):
        return False
    for grads in (losses.policy_grads, losses.value_grads):
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                return False
    return True


def _finite_params(params: Params) -> bool:
    return all(np.all(np.isfinite(v)) for v in params.arrays.values())
