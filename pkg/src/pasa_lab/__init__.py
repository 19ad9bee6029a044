"""pasa-lab: a desk-scale laboratory for a paper-search crawler agent.

Synthetic scholarly corpora with exact planted ground truth, a crawl MDP
whose actions search a keyword index and expand section citations, a small
differentiable policy with hand-derived gradients, and a session-level PPO
trainer warm-started by behavior cloning of oracle trajectories.
"""

from .corpus import (
    Corpus, CorpusConfig, Paper, Query, QueryConfig, SearchSpec, Section,
    answers_for, gen_corpus, gen_queries, load_corpus, load_queries,
    overlap_ratio, save_corpus, save_queries, validate_corpus,
)
from .env import (
    Action, AgentState, CrawlerEnv, Limits, PaperQueue, Rollout, Session,
    Transition, expand, run_crawler, run_session, search,
)
from .errors import (
    ConfigurationError, ContractViolation, DataError, GenerationError,
    NotFoundError, NumericError, PasaLabError,
)
from .harness import (
    EvalResult, RunConfig, ablate, ensemble_eval, evaluate, load_run_config,
    query_metrics, rank_queue, recall_at_k,
)
from .policy import (
    CrawlerPolicy, FeaturizerConfig, Params, StateFeatures, action_dist,
    featurize, init_policy_params, init_value_params, load_checkpoint,
    logprob, logprob_and_grad, sample_action, save_checkpoint, value,
    value_and_grad,
)
from .selector import Decision, SelectorModel, indicator, select
from .trainer import (
    BCResult, Demo, PPOConfig, RewardConfig, TrainResult, advantages,
    bc_train, make_demos, ppo_losses, ppo_train, prepare_batch, reward,
    sample_step, session_returns,
)

__version__ = "0.1.0"
