"""Training loops for the four algorithms, plus the chain baseline runner.

* cfn  -- one table over global states with joint action profiles.
* ifn  -- per-agent tables trained on their own observation streams, with
          the observed global reward credited to each agent's final
          observation (the spurious-reward fallback).
* jfn  -- per-agent tables trained through the product composition against
          the true global reward at terminals.
* cjfn -- jfn repeated over an episode-constant shared condition index,
          minimizing the Monte-Carlo mean of the per-condition losses.

Everything is deterministic given (config, seed): the three rng streams
(training, evaluation, condition draws) are derived from the seed, dict
iteration follows first-touch order, and the optimizer is a lazy
per-parameter adaptive-moment update that only touches parameters with a
gradient entry.

jfn is cjfn with a single condition value; the two share one code path, so
their trajectories, losses and parameters coincide bit for bit.
"""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from time import perf_counter

from .analysis import (
    TerminalDistribution,
    exact_terminal_distribution,
    l1_error,
)
from .config import RunConfig
from .env import HOLD, PURGATORY, WAIT, key_terminal
from .flow_table import (
    FlowParams,
    GlobalFlowView,
    LocalFlowView,
    TooLargeJointSpace,
    key_from_str,
    key_to_str,
)
from .fm_loss import (
    divergence_fm_loss_grad,
    ifn_local_loss_grad,
    stable_fm_loss_grad,
)
from .hypergrid import HypergridEnv, TooLarge, is_mode, partition_function
from .joint_flow import ConditionedJointFamily, JointView


class HorizonBug(Exception):
    """A rollout failed to terminate within the horizon."""


class NonFiniteUpdate(Exception):
    pass


@dataclass
class Trajectory:
    states: list
    profiles: list
    terminal_reward: float
    omega: int | None = None

    @property
    def tau(self) -> int:
        """Actions taken before the terminal stop."""
        return len(self.profiles)

    def keys(self):
        return [s.key() for s in self.states]

    def final_positions(self):
        return self.states[-1].positions


class ReplayBuffer:
    """FIFO ring of trajectories."""

    def __init__(self, capacity: int):
        self._ring = deque(maxlen=capacity)

    def add(self, traj: Trajectory):
        self._ring.append(traj)

    def newest(self, n: int) -> list:
        """The most recent n trajectories, oldest first."""
        if n >= len(self._ring):
            return list(self._ring)
        return list(self._ring)[-n:]

    def __len__(self):
        return len(self._ring)


class Adam:
    """Adaptive-moment update over flat parameter references.

    Moments and step counts live per reference and are created on first
    gradient; parameters without a gradient entry are untouched, keeping
    sparse training loops proportional to the touched set.
    """

    def __init__(self, tables: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.tables = tables
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t: dict = {}

    def step(self, grads: dict):
        b1, b2 = self.beta1, self.beta2
        for ref, g in grads.items():
            if not math.isfinite(g):
                raise NonFiniteUpdate(f"gradient for {ref} is {g}")
            t = self.t.get(ref, 0) + 1
            self.t[ref] = t
            m = self.m.get(ref, 0.0) * b1 + (1.0 - b1) * g
            v = self.v.get(ref, 0.0) * b2 + (1.0 - b2) * g * g
            self.m[ref] = m
            self.v[ref] = v
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            delta = self.lr * m_hat / (math.sqrt(v_hat) + self.eps)
            if not math.isfinite(delta):
                raise NonFiniteUpdate(f"update for {ref} is {delta}")
            self._apply(ref, -delta)

    def _apply(self, ref, delta: float):
        params = self.tables[ref[0]]
        kind = ref[1]
        if kind == "out":
            params.log_out_star[ref[2]] += delta
        elif kind == "logit":
            params.policy_logits[ref[2]][ref[3]] += delta
        elif kind == "init":
            params.log_init_mass += delta
        else:
            raise KeyError(f"unknown parameter kind {kind!r}")


def optimizer_step(optimizer: Adam, grads: dict):
    """One deterministic update of all parameters named in ``grads``."""
    optimizer.step(grads)


@dataclass
class MetricsRow:
    step: int
    loss: float | None
    l1_error: float | None
    modes_found: int
    mean_tau: float | None
    wall_ms: float | None

    def csv_values(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v)

        return ",".join(
            (str(self.step), fmt(self.loss), fmt(self.l1_error),
             str(self.modes_found), fmt(self.mean_tau), fmt(self.wall_ms))
        )


CSV_HEADER = "step,loss,l1_error,modes_found,mean_tau,wall_ms"


@dataclass
class TrainResult:
    algo: str
    env: HypergridEnv | None
    tables: dict
    metrics: list
    final_loss: float | None
    modes_discovered: set
    views: list = field(default_factory=list)
    sampling: str = "is"
    per_agent_losses: dict | None = None
    weak_fm_fractions: list | None = None
    train_state: "TrainState | None" = None
    mcmc_samples: list | None = None


# -- trajectory sampling ------------------------------------------------------


def sample_trajectory(profile_fn, env, omega: int | None = None) -> Trajectory:
    """Roll out from the start state until every agent is in purgatory.

    The recorded profiles are the effective ones (holds forced by the step
    cap appear as holds), so stepping the recorded profiles reproduces the
    recorded states.
    """
    state = env.start_state()
    states = [state]
    profiles = []
    while not state.terminal:
        nxt = env.step(state, profile_fn(state.key()))
        profiles.append(_effective_profile(state, nxt))
        states.append(nxt)
        state = nxt
        if len(profiles) > env.horizon + 1:
            raise HorizonBug("rollout exceeded the horizon without terminating")
    return Trajectory(
        states=states,
        profiles=profiles,
        terminal_reward=env.reward(state.positions),
        omega=omega,
    )


def _effective_profile(state, nxt):
    out = []
    for i in range(len(state.phases)):
        if state.phases[i] == PURGATORY:
            out.append(WAIT)
        elif nxt.phases[i] == PURGATORY:
            out.append(HOLD)
        else:
            for k in range(len(state.positions[i])):
                if nxt.positions[i][k] != state.positions[i][k]:
                    out.append(k)
                    break
    return tuple(out)


def _greedy_profile(view, key):
    """Highest-flow action per agent (evaluation-only variant)."""
    if isinstance(view, GlobalFlowView):
        pairs = view.action_probs(key)
        best = max(range(len(pairs)), key=lambda i: pairs[i][1])
        return pairs[best][0]
    profile = []
    for local, seg in zip(view.local_views, key):
        if seg[0] == PURGATORY:
            profile.append(WAIT)
        else:
            probs = local.policy_star(seg)
            acts = local.actions(seg)
            profile.append(acts[max(range(len(acts)), key=lambda i: probs[i])])
    return tuple(profile)


# -- rng and train-state plumbing ---------------------------------------------


def derive_rngs(seed: int):
    """Independent deterministic streams for training, evaluation, omega."""
    return (
        random.Random(f"{seed}:train"),
        random.Random(f"{seed}:eval"),
        random.Random(f"{seed}:omega"),
    )


@dataclass
class TrainState:
    step: int
    optimizer: Adam
    rng_train: random.Random
    rng_eval: random.Random
    rng_omega: random.Random
    wall_ms: float = 0.0
    modes_discovered: set = field(default_factory=set)

    def to_lines(self) -> list[str]:
        lines = [f"step {self.step}", f"wall_ms {self.wall_ms!r}"]
        for name in ("rng_train", "rng_eval", "rng_omega"):
            state = getattr(self, name).getstate()
            lines.append(f"{name} {json.dumps(state, separators=(',', ':'))}")
        lines.append(
            "modes " + json.dumps(sorted(self.modes_discovered), separators=(",", ":"))
        )
        for ref in self.optimizer.t:
            lines.append(
                f"opt {ref_to_str(ref)} {self.optimizer.t[ref]} "
                f"{self.optimizer.m[ref]!r} {self.optimizer.v[ref]!r}"
            )
        return lines

    def load_lines(self, lines):
        for line in lines:
            name, rest = line.split(" ", 1)
            if name == "step":
                self.step = int(rest)
            elif name == "wall_ms":
                self.wall_ms = float(rest)
            elif name in ("rng_train", "rng_eval", "rng_omega"):
                raw = json.loads(rest)
                state = (raw[0], tuple(raw[1]), raw[2])
                getattr(self, name).setstate(state)
            elif name == "modes":
                self.modes_discovered = {
                    tuple(tuple(row) for row in x) for x in json.loads(rest)
                }
            elif name == "opt":
                ref_s, t_s, m_s, v_s = rest.rsplit(" ", 3)
                ref = ref_from_str(ref_s)
                self.optimizer.t[ref] = int(t_s)
                self.optimizer.m[ref] = float(m_s)
                self.optimizer.v[ref] = float(v_s)
            else:
                raise ValueError(f"unknown train-state line {name!r}")


def _owner_to_str(owner) -> str:
    if isinstance(owner, tuple):
        return f"{owner[0]}.{owner[1]}"
    return str(owner)


def _owner_from_str(s: str):
    if "." in s:
        a, b = s.split(".")
        return (int(a), int(b))
    return int(s)


def ref_to_str(ref) -> str:
    owner = _owner_to_str(ref[0])
    if ref[1] == "init":
        return f"{owner}/init/-"
    if ref[1] == "out":
        return f"{owner}/out/{key_to_str(ref[2])}"
    return f"{owner}/logit/{key_to_str(ref[2])}/{ref[3]}"


def ref_from_str(s: str):
    parts = s.split("/")
    owner = _owner_from_str(parts[0])
    if parts[1] == "init":
        return (owner, "init")
    if parts[1] == "out":
        return (owner, "out", key_from_str(parts[2]))
    return (owner, "logit", key_from_str(parts[2]), int(parts[3]))


# -- checkpoint format --------------------------------------------------------


def write_checkpoint(path, cfg: RunConfig, result: TrainResult):
    lines = ["magfn-checkpoint 1", f"algo {result.algo}"]
    lines.append("config " + json.dumps(json.loads(cfg.to_json()), separators=(",", ":")))
    for owner in sorted(result.tables, key=_owner_to_str):
        lines.append(f"table {_owner_to_str(owner)}")
        lines.extend(result.tables[owner].to_lines())
        lines.append("endtable")
    if result.train_state is not None:
        lines.append("trainstate")
        lines.extend(result.train_state.to_lines())
        lines.append("endtrainstate")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns (algo, config, tables, train_state_lines)."""
    from .config import config_from_json

    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "magfn-checkpoint 1":
        raise ValueError(f"{path} is not a magfn checkpoint")
    algo = None
    cfg = None
    tables: dict = {}
    ts_lines: list = []
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("algo "):
            algo = line[5:]
        elif line.startswith("config "):
            cfg = config_from_json(line[7:])
        elif line.startswith("table "):
            owner = _owner_from_str(line[6:])
            j = i + 1
            body = []
            while lines[j] != "endtable":
                body.append(lines[j])
                j += 1
            tables[owner] = FlowParams.from_lines(body)
            i = j
        elif line == "trainstate":
            j = i + 1
            while lines[j] != "endtrainstate":
                ts_lines.append(lines[j])
                j += 1
            i = j
        i += 1
    if algo is None or cfg is None:
        raise ValueError(f"{path} is missing algo/config headers")
    return algo, cfg, tables, ts_lines


# -- evaluation helper --------------------------------------------------------


class _Evaluator:
    def __init__(self, cfg: RunConfig, env: HypergridEnv):
        self.cfg = cfg
        self.env = env
        try:
            _, self.target = partition_function(env.spec, cfg.enum_cap)
        except TooLarge:
            self.target = None
        self.dp_ok = True

    def model_distribution(self, dp_views) -> TerminalDistribution | None:
        """Exact terminal distribution, averaged over condition values."""
        if not self.dp_ok:
            return None
        try:
            masses: dict = {}
            for view in dp_views:
                dist = exact_terminal_distribution(view, self.env, self.cfg.dp_cap)
                for x, m in dist.masses.items():
                    masses[x] = masses.get(x, 0.0) + m / len(dp_views)
            return TerminalDistribution(masses=masses, total=sum(masses.values()))
        except TooLarge:
            self.dp_ok = False
            return None

    def row(self, step, loss, dp_views, rollout_fn, rng_eval, n_modes,
            wall_ms) -> MetricsRow:
        taus = []
        terminals = []
        for _ in range(self.cfg.eval_rollouts):
            traj = rollout_fn(rng_eval)
            taus.append(traj.tau)
            terminals.append(traj.final_positions())
        mean_tau = sum(taus) / len(taus) if taus else None
        l1 = None
        if self.target is not None:
            dist = self.model_distribution(dp_views)
            if dist is None and terminals:
                counts: dict = {}
                for x in terminals:
                    counts[x] = counts.get(x, 0) + 1
                dist = TerminalDistribution(
                    masses={x: c / len(terminals) for x, c in counts.items()},
                    total=1.0,
                )
            if dist is not None:
                l1 = l1_error(dist, self.target)
        return MetricsRow(
            step=step,
            loss=loss,
            l1_error=l1,
            modes_found=n_modes,
            mean_tau=mean_tau,
            wall_ms=wall_ms,
        )


def _terminal_reward_fn(env: HypergridEnv):
    def lookup(key):
        return env.reward_of_key(key) if key_terminal(key) else 0.0

    return lookup


def _loss_grad_fn(cfg: RunConfig):
    if cfg.loss == "stable":
        return stable_fm_loss_grad
    return divergence_fm_loss_grad


# -- the training loops -------------------------------------------------------


def train_cfn(cfg: RunConfig, checkpoint_fn=None, resume=None) -> TrainResult:
    """Centralized training of one global table over joint actions."""
    env = HypergridEnv(cfg.spec(), cfg.effective_horizon())
    n_joint = (cfg.dims + 1) ** cfg.n_agents
    if n_joint > cfg.cfn_action_cap:
        raise TooLargeJointSpace(
            f"up to {n_joint} joint actions exceed cfn_action_cap={cfg.cfn_action_cap}"
        )
    params = FlowParams()
    view = GlobalFlowView(params, env, owner=0, action_cap=cfg.cfn_action_cap)
    tables = {0: params}

    def profile_fn_factory(rng, epsilon):
        return lambda key: view.sample_profile(key, rng, epsilon)

    def rollout_fn(rng):
        if cfg.eval_greedy:
            return sample_trajectory(lambda k: _greedy_profile(view, k), env)
        return sample_trajectory(profile_fn_factory(rng, 0.0), env)

    return _run_loop(
        cfg, env, "cfn", tables, [view],
        train_profile_fn=profile_fn_factory,
        rollout_fn=rollout_fn,
        loss_step=_make_single_view_loss(cfg, env, view),
        checkpoint_fn=checkpoint_fn,
        resume=resume,
    )


def _make_single_view_loss(cfg, env, view):
    grad_fn = _loss_grad_fn(cfg)
    reward_fn = _terminal_reward_fn(env)
    g = cfg.g_spec()

    def loss_step(batch_trajs):
        batch = [k for traj in batch_trajs for k in traj.keys()]
        return grad_fn(view, batch, reward_fn, g)

    return loss_step


def train_jfn(cfg: RunConfig, checkpoint_fn=None, resume=None) -> TrainResult:
    """Product-composed training of per-agent tables (single condition)."""
    return _train_joint_family(cfg, 1, "jfn", checkpoint_fn, resume)


def train_cjfn(cfg: RunConfig, checkpoint_fn=None, resume=None) -> TrainResult:
    """Condition-indexed joint training over independent table copies."""
    return _train_joint_family(cfg, cfg.n_omega, "cjfn", checkpoint_fn, resume)


def _train_joint_family(cfg, n_omega, algo, checkpoint_fn, resume):
    env = HypergridEnv(cfg.spec(), cfg.effective_horizon())
    family = ConditionedJointFamily(env, n_omega, async_start=cfg.async_start)
    grad_fn = _loss_grad_fn(cfg)
    reward_fn = _terminal_reward_fn(env)
    g = cfg.g_spec()

    def train_profile_fn(rng, epsilon, omega=0):
        view = family.view(omega)
        return lambda key: view.sample_profile(key, rng, epsilon, mode=cfg.sampling)

    def rollout_fn(rng):
        omega = rng.randrange(n_omega) if n_omega > 1 else 0
        view = family.view(omega)
        if cfg.eval_greedy:
            return sample_trajectory(lambda k: _greedy_profile(view, k), env, omega)
        return sample_trajectory(train_profile_fn(rng, 0.0, omega), env, omega)

    def loss_step(batch_trajs):
        # pooled over (state, omega) pairs: the Monte-Carlo mean of the
        # per-condition losses under the visited-state distribution
        groups: dict = {}
        for traj in batch_trajs:
            groups.setdefault(traj.omega, []).extend(traj.keys())
        total_states = sum(len(b) for b in groups.values())
        loss = 0.0
        grads: dict = {}
        for omega, batch in groups.items():
            sub_loss, sub_grads = grad_fn(family.view(omega), batch, reward_fn, g)
            w = len(batch) / total_states
            loss += w * sub_loss
            if w == 1.0:
                grads = sub_grads
            else:
                for ref, d in sub_grads.items():
                    grads[ref] = grads.get(ref, 0.0) + w * d
        return loss, grads

    weak_fm: list = []

    def weak_fm_probe(batch_trajs):
        if algo != "cjfn":
            return
        n = bad = 0
        for traj in batch_trajs:
            view = family.view(traj.omega)
            for key in traj.keys():
                n += 1
                bad += view.virtual_reward(key) < 0
        weak_fm.append(bad / n if n else 0.0)

    result = _run_loop(
        cfg, env, algo, family.tables, family.views,
        train_profile_fn=train_profile_fn,
        rollout_fn=rollout_fn,
        loss_step=loss_step,
        checkpoint_fn=checkpoint_fn,
        resume=resume,
        n_omega=n_omega,
        eval_probe=weak_fm_probe,
    )
    result.weak_fm_fractions = weak_fm if algo == "cjfn" else None
    return result


def train_ifn(cfg: RunConfig, checkpoint_fn=None, resume=None) -> TrainResult:
    """Independent per-agent training with observed-reward terminal credit."""
    env = HypergridEnv(cfg.spec(), cfg.effective_horizon())
    tables = {}
    locals_ = []
    for agent in range(env.n_agents):
        params = FlowParams()
        tables[agent] = params
        locals_.append(LocalFlowView(params, env.dims, env.side, owner=agent))
    view = JointView(locals_, env, async_start=cfg.async_start)
    g = cfg.g_spec()
    per_agent_losses: dict = {agent: [] for agent in range(env.n_agents)}

    def train_profile_fn(rng, epsilon):
        return lambda key: view.sample_profile(key, rng, epsilon, mode="is")

    def rollout_fn(rng):
        if cfg.eval_greedy:
            return sample_trajectory(lambda k: _greedy_profile(view, k), env)
        return sample_trajectory(train_profile_fn(rng, 0.0), env)

    def loss_step(batch_trajs):
        rewards = [traj.terminal_reward for traj in batch_trajs]
        grads: dict = {}
        losses = []
        for agent, local in enumerate(locals_):
            streams = [
                [state.key()[agent] for state in traj.states]
                for traj in batch_trajs
            ]
            loss, agent_grads = ifn_local_loss_grad(local, streams, rewards, g)
            losses.append(loss)
            per_agent_losses[agent].append(loss)
            grads.update(agent_grads)
        return sum(losses) / len(losses), grads

    result = _run_loop(
        cfg, env, "ifn", tables, [view],
        train_profile_fn=train_profile_fn,
        rollout_fn=rollout_fn,
        loss_step=loss_step,
        checkpoint_fn=checkpoint_fn,
        resume=resume,
    )
    result.per_agent_losses = per_agent_losses
    return result


def _run_loop(cfg, env, algo, tables, views, train_profile_fn, rollout_fn,
              loss_step, checkpoint_fn, resume, n_omega=1, eval_probe=None):
    rng_train, rng_eval, rng_omega = derive_rngs(cfg.seed)
    adam = Adam(tables, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    state = TrainState(0, adam, rng_train, rng_eval, rng_omega)
    if resume is not None:
        _load_resume(resume, algo, tables, state)
    buffer = ReplayBuffer(cfg.replay_capacity)
    evaluator = _Evaluator(cfg, env)
    metrics: list = []
    loss = None
    t0 = perf_counter()
    for step in range(state.step + 1, cfg.train_steps + 1):
        trajs = []
        for _ in range(cfg.trajectories_per_step):
            omega = rng_omega.randrange(n_omega) if n_omega > 1 else 0
            if n_omega > 1:
                fn = train_profile_fn(rng_train, cfg.epsilon, omega)
            else:
                fn = train_profile_fn(rng_train, cfg.epsilon)
            traj = sample_trajectory(fn, env, omega if n_omega > 1 else None)
            if traj.omega is None:
                traj.omega = 0
            trajs.append(traj)
            buffer.add(traj)
            if is_mode(traj.final_positions(), env.spec):
                state.modes_discovered.add(traj.final_positions())
        batch_trajs = buffer.newest(cfg.replay_reuse * cfg.trajectories_per_step)
        loss, grads = loss_step(batch_trajs)
        adam.step(grads)
        state.step = step
        if step % cfg.eval_interval == 0:
            if eval_probe is not None:
                eval_probe(batch_trajs)
            state.wall_ms += (perf_counter() - t0) * 1000.0
            t0 = perf_counter()
            metrics.append(
                evaluator.row(
                    step, loss, views, rollout_fn, rng_eval,
                    len(state.modes_discovered),
                    state.wall_ms if cfg.log_wall_time else None,
                )
            )
        if checkpoint_fn is not None and cfg.checkpoint_interval > 0 and (
            step % cfg.checkpoint_interval == 0
        ):
            checkpoint_fn(step, _snapshot(algo, env, tables, metrics, loss, state, views))
    return _snapshot(algo, env, tables, metrics, loss, state, views)


def _snapshot(algo, env, tables, metrics, loss, state, views):
    return TrainResult(
        algo=algo,
        env=env,
        tables=tables,
        metrics=list(metrics),
        final_loss=loss,
        modes_discovered=set(state.modes_discovered),
        views=views,
        train_state=state,
    )


def _load_resume(path, algo, tables, state: TrainState):
    saved_algo, _, saved_tables, ts_lines = load_checkpoint(path)
    if saved_algo != algo:
        raise ValueError(f"checkpoint is for {saved_algo!r}, not {algo!r}")
    if set(saved_tables) != set(tables):
        raise ValueError("checkpoint tables do not match this configuration")
    for owner, params in saved_tables.items():
        dst = tables[owner]
        dst.log_out_star = params.log_out_star
        dst.policy_logits = params.policy_logits
        dst.log_init_mass = params.log_init_mass
    state.load_lines(ts_lines)


# -- chain baseline under the same metrics schema ------------------------------


def run_mcmc_experiment(cfg: RunConfig) -> TrainResult:
    """Metropolis baseline producing the same metrics rows.

    One chain step costs one reward evaluation, which is the budget unit
    shared with the samplers (one trajectory = one terminal evaluation),
    so curves are comparable at equal reward-evaluation counts. Metrics
    rows land on the same step grid, each covering the proportional share
    of the chain budget.
    """
    from .mcmc import MetropolisChain

    spec = cfg.spec()
    rng = random.Random(f"{cfg.seed}:mcmc")
    total = cfg.effective_mcmc_steps()
    burn = int(total * cfg.mcmc_burn_in_frac)
    try:
        _, target = partition_function(spec, cfg.enum_cap)
    except TooLarge:
        target = None
    chain = MetropolisChain(spec, rng, thinning=cfg.mcmc_thinning)
    n_rows = max(1, cfg.train_steps // cfg.eval_interval)
    samples: list = []
    counts: dict = {}
    metrics: list = []
    modes: set = set()
    done = 0
    wall = 0.0
    t0 = perf_counter()
    for row_idx in range(1, n_rows + 1):
        upto = burn + round((total - burn) * row_idx / n_rows)
        if row_idx == 1:
            chain.advance(burn, collect=False)
        new = chain.advance(upto - max(done, burn))
        done = upto
        for x in new:
            counts[x] = counts.get(x, 0) + 1
            if is_mode(x, spec):
                modes.add(x)
        samples.extend(new)
        l1 = None
        if target is not None and samples:
            n = len(samples)
            l1 = sum(abs(p - counts.get(x, 0) / n) for x, p in target.items())
        wall += (perf_counter() - t0) * 1000.0
        t0 = perf_counter()
        metrics.append(
            MetricsRow(
                step=row_idx * cfg.eval_interval,
                loss=None,
                l1_error=l1,
                modes_found=len(modes),
                mean_tau=None,
                wall_ms=wall if cfg.log_wall_time else None,
            )
        )
    return TrainResult(
        algo="mcmc",
        env=None,
        tables={},
        metrics=metrics,
        final_loss=None,
        modes_discovered=modes,
        mcmc_samples=samples,
    )
