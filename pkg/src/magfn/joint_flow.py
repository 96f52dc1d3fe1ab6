"""Virtual global flow composed as a product of per-agent tables.

The joint view never stores global parameters. Its star outflow at a
non-terminal state is the product of the per-agent values (purgatory
agents contribute their pass-through flow), its inflow is the product of
the per-agent inflows, and its policy samples each alive agent
independently from its own table. At a terminal state the trainable
outflow is zero and the inflow product is what the composition offers as
reward mass.

Start handling is synchronous by default: the initial flow is the single
product atom of the per-agent initial masses, with no partial-init cross
terms. The asynchronous variant (every state's inflow factor keeps its
init component) is available behind a flag.
"""

from __future__ import annotations

import itertools
import math

from .env import HOLD, PURGATORY, WAIT, key_terminal, legal_actions_key
from .flow_table import FlowParams, LocalFlowView, categorical


class BadOmega(Exception):
    """Condition index outside the condition space."""


class JointView:
    """N local views composed into one virtual global flow."""

    def __init__(self, local_views, env, async_start: bool = False):
        if len(local_views) != env.n_agents:
            raise ValueError("need one local view per agent")
        self.local_views = list(local_views)
        self.env = env
        self.async_start = async_start
        self.start_key = env.start_key()

    # -- flow values ---------------------------------------------------------

    def out_star(self, key) -> float:
        if key_terminal(key):
            return 0.0
        prod = 1.0
        for view, seg in zip(self.local_views, key):
            prod *= view.out_star(seg)
        return prod

    residual_out = out_star

    def in_flow(self, key) -> float:
        if self.async_start:
            prod = 1.0
            for view, seg in zip(self.local_views, key):
                prod *= view.in_flow(seg, include_init=True)
            return prod
        star = 1.0
        for view, seg in zip(self.local_views, key):
            star *= view.in_flow(seg, include_init=False)
        if key == self.start_key:
            init = 1.0
            for view in self.local_views:
                init *= math.exp(view.params.log_init_mass)
            return init + star
        return star

    def virtual_reward(self, key) -> float:
        return self.in_flow(key) - self.residual_out(key)

    def full_policy(self, key, reward: float = 0.0, virtual: bool = False) -> dict:
        if virtual:
            r = self.virtual_reward(key)
            if r < 0:
                from .flow_table import NegativeVirtualReward

                raise NegativeVirtualReward(f"virtual reward {r} < 0 at {key!r}")
        else:
            r = reward
        if key_terminal(key):
            return {"stop": 1.0}
        out = self.out_star(key)
        total = out + r
        dist = {a: out * p / total for a, p in self.action_probs(key)}
        dist["stop"] = r / total
        return dist

    # -- policy ----------------------------------------------------------------

    def action_probs(self, key):
        """Joint profiles with their product probabilities."""
        if key_terminal(key):
            return []
        per_agent = []
        for view, seg in zip(self.local_views, key):
            if seg[0] == PURGATORY:
                per_agent.append([(WAIT, 1.0)])
            else:
                per_agent.append(
                    list(zip(view.actions(seg), view.policy_star(seg)))
                )
        out = []
        for combo in itertools.product(*per_agent):
            p = 1.0
            for _, q in combo:
                p *= q
            out.append((tuple(a for a, _ in combo), p))
        return out

    def sample_profile(self, key, rng, epsilon: float = 0.0, mode: str = "is"):
        """One joint action.

        ``is``: every alive agent draws from its own table (decentralized
        execution). ``cs``: one draw from the assembled product policy; the
        two coincide in law here because the product is exact.
        """
        if key_terminal(key):
            raise ValueError(f"cannot act at terminal key {key!r}")
        if mode == "is":
            profile = []
            for view, seg in zip(self.local_views, key):
                if seg[0] == PURGATORY:
                    profile.append(WAIT)
                else:
                    profile.append(view.sample_action(seg, rng, epsilon))
            return tuple(profile)
        if mode == "cs":
            pairs = self.action_probs(key)
            if epsilon > 0.0 and rng.random() < epsilon:
                return pairs[rng.randrange(len(pairs))][0]
            idx = categorical([p for _, p in pairs], rng)
            return pairs[idx][0]
        raise ValueError(f"unknown sampling mode {mode!r}")

    # -- gradients -----------------------------------------------------------

    def out_star_grad(self, key):
        if key_terminal(key):
            return 0.0, {}
        return _product_grad(
            [view.out_star_grad(seg) for view, seg in zip(self.local_views, key)]
        )

    residual_out_grad = out_star_grad

    def in_flow_grad(self, key):
        if self.async_start:
            return _product_grad(
                [
                    view.in_flow_grad(seg, include_init=True)
                    for view, seg in zip(self.local_views, key)
                ]
            )
        star_val, star_grads = _product_grad(
            [
                view.in_flow_grad(seg, include_init=False)
                for view, seg in zip(self.local_views, key)
            ]
        )
        if key != self.start_key:
            return star_val, star_grads
        init = 1.0
        for view in self.local_views:
            init *= math.exp(view.params.log_init_mass)
        grads = dict(star_grads)
        for view in self.local_views:
            ref = (view.owner, "init")
            grads[ref] = grads.get(ref, 0.0) + init
        return init + star_val, grads


def _product_grad(factors):
    """Value and gradient of a product from per-factor (value, grads) pairs."""
    n = len(factors)
    prefix = [1.0] * (n + 1)
    for i, (v, _) in enumerate(factors):
        prefix[i + 1] = prefix[i] * v
    suffix = [1.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] * factors[i][0]
    grads: dict = {}
    for i, (_, g) in enumerate(factors):
        coeff = prefix[i] * suffix[i + 1]
        if coeff == 0.0:
            continue
        for ref, d in g.items():
            grads[ref] = grads.get(ref, 0.0) + coeff * d
    return prefix[n], grads


class ConditionSpace:
    """A finite uniform space of episode-constant strategy indices."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("condition space needs size >= 1")
        self.size = size

    def sample(self, rng) -> int:
        return rng.randrange(self.size)


class ConditionedJointFamily:
    """One independent copy of the local tables per condition value."""

    def __init__(self, env, n_omega: int, async_start: bool = False):
        self.env = env
        self.space = ConditionSpace(n_omega)
        self.tables: dict = {}
        self.views = []
        for omega in range(n_omega):
            locals_ = []
            for agent in range(env.n_agents):
                params = FlowParams()
                owner = (omega, agent) if n_omega > 1 else agent
                self.tables[owner] = params
                locals_.append(
                    LocalFlowView(params, env.dims, env.side, owner=owner)
                )
            self.views.append(JointView(locals_, env, async_start=async_start))

    def view(self, omega: int) -> JointView:
        if not 0 <= omega < self.space.size:
            raise BadOmega(f"omega {omega} outside [0, {self.space.size})")
        return self.views[omega]


def conditioned_view(family: ConditionedJointFamily, omega: int) -> JointView:
    return family.view(omega)
