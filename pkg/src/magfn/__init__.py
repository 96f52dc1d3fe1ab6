"""Multi-agent generative flow networks with tabular flows on discrete grids.

The package trains cooperating samplers whose terminal states are
distributed proportionally to a reward over a multi-agent hyper-grid,
via four algorithms: centralized (cfn), independent (ifn), joint product
composition (jfn), and its condition-indexed variant (cjfn), plus a
Metropolis chain baseline and exact small-instance evaluation oracles.
"""

from .analysis import (
    StoppingStats,
    TerminalDistribution,
    TheoremReport,
    empirical_terminal_distribution,
    exact_terminal_distribution,
    flow_matched_global_params,
    flow_matched_local_params,
    l1_error,
    modes_found,
    stopping_time_stats,
    theorem_checks,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .env import (
    ALIVE,
    HOLD,
    PURGATORY,
    WAIT,
    GlobalState,
    IllegalAction,
    LocalObs,
    MultiAgentGridEnv,
    TerminalState,
)
from .flow_table import (
    FlowParams,
    GlobalFlowView,
    LocalFlowView,
    NegativeVirtualReward,
    NonFiniteGradient,
    TooLargeJointSpace,
    UnknownKey,
    loss_gradient,
)
from .fm_loss import (
    GSpec,
    NonFinite,
    ZeroFlow,
    divergence_fm_loss,
    g_eval,
    ifn_local_loss,
    stable_fm_loss,
)
from .hypergrid import (
    HypergridEnv,
    HypergridSpec,
    OutOfRange,
    TooLarge,
    enumerate_terminals,
    is_mode,
    mode_set,
    partition_function,
    preset,
    reward,
)
from .joint_flow import (
    BadOmega,
    ConditionedJointFamily,
    ConditionSpace,
    JointView,
    conditioned_view,
)
from .mcmc import MetropolisChain, kernel_matrix, mcmc_run
from .trainer import (
    Adam,
    HorizonBug,
    MetricsRow,
    NonFiniteUpdate,
    ReplayBuffer,
    Trajectory,
    TrainResult,
    optimizer_step,
    run_mcmc_experiment,
    sample_trajectory,
    train_cfn,
    train_cjfn,
    train_ifn,
    train_jfn,
)

__version__ = "0.1.0"
