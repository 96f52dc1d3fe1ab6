"""Exact and empirical evaluation of trained flows.

The exact terminal distribution propagates probability mass through a
policy in topological order -- the pair (total coordinate sum, purgatory
count) strictly increases lexicographically along every transition, so
sorting by it is a valid schedule and no graph search is needed.

Also here: the normalized L1 error, mode discovery counts, stopping-time
statistics against the outflow/reward bound, consistency reports for the
product composition, and backward-induction constructions of exactly
flow-matched tables (the independent oracles most tests compare against).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .env import (
    ALIVE,
    HOLD,
    PURGATORY,
    child_key,
    global_parents,
    joint_action_profiles,
    key_terminal,
    legal_actions_key,
)
from .flow_table import FlowParams, categorical
from .hypergrid import TooLarge


class DomainMismatch(Exception):
    """Distributions over different terminal sets."""


@dataclass
class TerminalDistribution:
    masses: dict
    total: float

    def prob(self, positions) -> float:
        return self.masses.get(positions, 0.0)


def _order(key):
    coords = 0
    purg = 0
    for seg in key:
        coords += sum(seg[1:])
        purg += seg[0] == PURGATORY
    return coords, purg


def exact_terminal_distribution(policy_source, env, dp_cap: int = 100_000):
    """Push mass from the start state through ``policy_source``.

    ``policy_source`` needs ``action_probs(key) -> [(profile, prob)]``.
    Raises TooLarge past ``dp_cap`` touched states; the caller falls back
    to the empirical estimate.
    """
    start = env.start_key()
    buckets: dict = {_order(start): {start: 1.0}}
    terminals: dict = {}
    touched = 1
    for coords in range(env.n_agents * env.dims * (env.side - 1) + 1):
        for purg in range(env.n_agents + 1):
            bucket = buckets.pop((coords, purg), None)
            if not bucket:
                continue
            for key, mass in bucket.items():
                if key_terminal(key):
                    positions = tuple(seg[1:] for seg in key)
                    terminals[positions] = terminals.get(positions, 0.0) + mass
                    continue
                for profile, p in policy_source.action_probs(key):
                    if p == 0.0:
                        continue
                    child = child_key(key, profile)
                    dest = buckets.setdefault(_order(child), {})
                    if child not in dest:
                        touched += 1
                        if touched > dp_cap:
                            raise TooLarge(
                                f"exact distribution needs > {dp_cap} states"
                            )
                        dest[child] = 0.0
                    dest[child] += mass * p
    return TerminalDistribution(masses=terminals, total=sum(terminals.values()))


def empirical_terminal_distribution(samples) -> TerminalDistribution:
    if not samples:
        raise ValueError("no samples")
    counts: dict = {}
    for positions in samples:
        counts[positions] = counts.get(positions, 0) + 1
    n = len(samples)
    return TerminalDistribution(
        masses={x: c / n for x, c in counts.items()}, total=1.0
    )


def l1_error(model_dist, target_dist, n_terminals: int | None = None) -> float:
    """Sum over terminals of |target - model| (range [0, 2]).

    The definition averages the pointwise gap over terminals and rescales
    by their count, which collapses to the plain sum.
    """
    model = model_dist.masses if isinstance(model_dist, TerminalDistribution) else model_dist
    target = target_dist.masses if isinstance(target_dist, TerminalDistribution) else target_dist
    if n_terminals is not None and len(target) != n_terminals:
        raise DomainMismatch(
            f"target covers {len(target)} terminals, expected {n_terminals}"
        )
    extra = set(model) - set(target)
    if extra:
        raise DomainMismatch(f"model has mass outside the terminal set: {sorted(extra)[:3]}")
    return sum(abs(target[x] - model.get(x, 0.0)) for x in target)


def modes_found(cumulative_samples, mode_set) -> int:
    return len(set(cumulative_samples) & set(mode_set))


@dataclass
class StoppingStats:
    mean_tau: float
    bound: float
    stderr: float
    n_episodes: int


def stopping_time_stats(policy_source, env, n_episodes: int, rng,
                        state_cap: int = 100_000) -> StoppingStats:
    """Empirical mean episode length against the outflow/reward bound.

    The bound sums trainable outflow plus reward over every reachable
    state and divides by the total reward mass; it only binds for
    flow-matched tables.
    """
    total_out = 0.0
    total_reward = 0.0
    try:
        for key in env.iter_reachable_keys(cap=state_cap):
            if key_terminal(key):
                total_reward += env.reward_of_key(key)
            else:
                total_out += policy_source.out_star(key)
    except OverflowError as exc:
        raise TooLarge(str(exc)) from exc
    bound = (total_out + total_reward) / total_reward - 1.0

    probs_cache: dict = {}
    taus = []
    start = env.start_key()
    limit = env.horizon + 2
    for _ in range(n_episodes):
        key = start
        tau = 0
        while not key_terminal(key):
            cached = probs_cache.get(key)
            if cached is None:
                pairs = policy_source.action_probs(key)
                cached = ([a for a, _ in pairs], [p for _, p in pairs])
                probs_cache[key] = cached
            profile = cached[0][categorical(cached[1], rng)]
            key = child_key(key, profile)
            tau += 1
            if tau > limit:
                raise RuntimeError("rollout exceeded the horizon; env invariant broken")
        taus.append(tau)
    mean = sum(taus) / n_episodes
    var = sum((t - mean) ** 2 for t in taus) / max(1, n_episodes - 1)
    return StoppingStats(
        mean_tau=mean,
        bound=bound,
        stderr=math.sqrt(var / n_episodes),
        n_episodes=n_episodes,
    )


@dataclass
class TheoremReport:
    split_out_err: float
    split_in_err: float
    inflow_consistency_err: float
    joint_alive_residual: float
    local_alive_residual: float
    product_reward_err: float
    states_checked: int


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def theorem_checks(joint_view, env, state_cap: int = 100_000) -> TheoremReport:
    """Consistency of the product composition over every reachable state.

    * split errors: the joint flow values against explicitly recomputed
      per-agent products (an algebraic identity);
    * inflow consistency: the inflow product against the direct parent sum
      of ``out_star * policy`` over the global transition graph -- the
      substantive identity behind composing locals into one global flow;
    * residuals on all-alive states and the product form of the virtual
      reward at terminals, which quantify the local/global flow-matching
      transfer.
    """
    split_out = split_in = consistency = 0.0
    joint_alive = local_alive = product_reward = 0.0
    n = 0
    try:
        keys = list(env.iter_reachable_keys(cap=state_cap))
    except OverflowError as exc:
        raise TooLarge(str(exc)) from exc
    locals_ = joint_view.local_views
    for key in keys:
        n += 1
        terminal = key_terminal(key)
        out_v = joint_view.out_star(key)
        in_v = joint_view.in_flow(key)
        if not terminal:
            prod = 1.0
            for view, seg in zip(locals_, key):
                prod *= view.out_star(seg)
            split_out = max(split_out, _rel_err(out_v, prod))
        # at the start the product of locals-with-init collapses to the
        # init atom, matching the synchronous-start composition
        prod_in = 1.0
        for view, seg in zip(locals_, key):
            prod_in *= view.in_flow(
                seg, include_init=(key == joint_view.start_key)
            )
        split_in = max(split_in, _rel_err(in_v, prod_in))

        direct = 0.0
        if key == joint_view.start_key:
            direct += math.exp(
                sum(v.params.log_init_mass for v in locals_)
            )
        for parent, profile in global_parents(key):
            p = 1.0
            for view, seg, a in zip(locals_, parent, profile):
                if seg[0] == PURGATORY:
                    continue
                probs = view.policy_star(seg)
                p *= probs[view.actions(seg).index(a)]
            direct += joint_view.out_star(parent) * p
        consistency = max(consistency, _rel_err(in_v, direct))

        if terminal:
            prod_r = 1.0
            for view, seg in zip(locals_, key):
                prod_r *= view.virtual_reward(seg)
            product_reward = max(
                product_reward, abs(joint_view.virtual_reward(key) - prod_r)
            )
        elif all(seg[0] == ALIVE for seg in key):
            joint_alive = max(joint_alive, abs(in_v - out_v))
    for view in locals_:
        for seg in view.params.log_out_star:
            local_alive = max(
                local_alive, abs(view.in_flow(seg) - view.out_star(seg))
            )
    return TheoremReport(
        split_out_err=split_out,
        split_in_err=split_in,
        inflow_consistency_err=consistency,
        joint_alive_residual=joint_alive,
        local_alive_residual=local_alive,
        product_reward_err=product_reward,
        states_checked=n,
    )


# -- exactly flow-matched tables by backward induction -----------------------


def flow_matched_local_params(dims: int, side: int, reward_fn) -> FlowParams:
    """Exact flow-matching solution of one agent's table.

    ``reward_fn`` maps a position tuple to a strictly positive local
    reward; the induction works backward over coordinate sums. Each
    state's required throughput is its own reward plus its children's,
    with a child's demand split equally among its parents; logits are the
    log edge flows, so the softmax reproduces edge flow ratios exactly.
    """
    import itertools

    cells = sorted(
        itertools.product(range(side), repeat=dims), key=sum, reverse=True
    )
    psi: dict = {}
    params = FlowParams()
    for pos in cells:
        r = reward_fn(pos)
        if r <= 0:
            raise ValueError(f"reward must be positive for log-space tables, got {r}")
        acts = legal_actions_key((ALIVE, *pos), side)
        flows = []
        for a in acts:
            if a == HOLD:
                flows.append(r)
            else:
                child = list(pos)
                child[a] += 1
                child = tuple(child)
                flows.append(psi[child] / sum(1 for c in child if c > 0))
        total = sum(flows)
        psi[pos] = total
        key = (ALIVE, *pos)
        params.log_out_star[key] = math.log(total)
        params.policy_logits[key] = [math.log(f) for f in flows]
    params.log_init_mass = math.log(psi[(0,) * dims])
    return params


def flow_matched_global_params(env, reward_fn=None,
                               state_cap: int = 100_000) -> FlowParams:
    """Exact flow-matching solution of a centralized table.

    Same induction as the local builder, run over the reachable global
    graph with joint action profiles. ``reward_fn`` takes a global key
    and defaults to the environment reward.
    """
    if reward_fn is None:
        reward_fn = env.reward_of_key
    try:
        keys = list(env.iter_reachable_keys(cap=state_cap))
    except OverflowError as exc:
        raise TooLarge(str(exc)) from exc
    keys.sort(key=_order, reverse=True)
    n_parents = {key: len(global_parents(key)) for key in keys}
    demand: dict = {}
    params = FlowParams()
    for key in keys:
        if key_terminal(key):
            r = reward_fn(key)
            if r <= 0:
                raise ValueError("terminal reward must be positive")
            demand[key] = r
            continue
        flows = []
        for profile in joint_action_profiles(key, env.side):
            child = child_key(key, profile)
            flows.append(demand[child] / n_parents[child])
        total = sum(flows)
        demand[key] = total
        params.log_out_star[key] = math.log(total)
        params.policy_logits[key] = [math.log(f) for f in flows]
    params.log_init_mass = math.log(demand[env.start_key()])
    return params
