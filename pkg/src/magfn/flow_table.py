"""Tabular log-space flow parameterizations with analytic gradients.

A table holds three parameter groups:

* ``log_out_star``  -- per state, the log of the star outflow (the outflow
  with the reward mass removed),
* ``policy_logits`` -- per state, unnormalized logits over that state's
  non-stop actions,
* ``log_init_mass`` -- the log of the total initial flow, an atom on the
  start state.

Log-space storage keeps flows positive for free. Entries are created
lazily on first touch at zero (unit flow, uniform policy).

Two view classes bind parameters to the grid geometry. ``LocalFlowView``
works on one agent's observation keys; a purgatory key carries no
parameters -- its inflow and outflow are both the pass-through flow
``out_star(o) * p(hold | o)`` of its alive twin, so it is flow matched by
construction. ``GlobalFlowView`` works on global state keys with joint
action profiles (centralized training); terminal keys carry no parameters
and their star outflow is zero, since only the stop action remains there.

Gradient conventions: gradient maps are flat dicts keyed by

    (owner, "out", key) | (owner, "logit", key, j) | (owner, "init")

where ``owner`` identifies the table (the agent index, or a compound
(condition, agent) pair). Entries not touched by a computation are absent.
"""

from __future__ import annotations

import math

from .env import (
    ALIVE,
    PURGATORY,
    WAIT,
    alive_twin,
    global_parents,
    joint_action_profiles,
    key_terminal,
    legal_actions_key,
)


class UnknownKey(Exception):
    """A malformed or out-of-domain state key."""


class NegativeVirtualReward(Exception):
    """Weak flow-matching violated where virtual-reward stopping was requested."""


class NonFiniteGradient(Exception):
    pass


class TooLargeJointSpace(Exception):
    """Joint action space above the centralized-training cap."""


def softmax(logits):
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    s = sum(exps)
    return [e / s for e in exps]


def categorical(probs, rng) -> int:
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


class FlowParams:
    """One table's parameters. Exclusively owned by its training loop."""

    __slots__ = ("log_out_star", "policy_logits", "log_init_mass")

    def __init__(self):
        self.log_out_star: dict = {}
        self.policy_logits: dict = {}
        self.log_init_mass: float = 0.0

    def copy(self) -> "FlowParams":
        out = FlowParams()
        out.log_out_star = dict(self.log_out_star)
        out.policy_logits = {k: list(v) for k, v in self.policy_logits.items()}
        out.log_init_mass = self.log_init_mass
        return out

    # -- serialization: one line per entry ("key kind value") --------------

    def to_lines(self) -> list[str]:
        lines = [f"- init {self.log_init_mass!r}"]
        for key in sorted(self.log_out_star):
            lines.append(f"{key_to_str(key)} out {self.log_out_star[key]!r}")
        for key in sorted(self.policy_logits):
            ks = key_to_str(key)
            for j, v in enumerate(self.policy_logits[key]):
                lines.append(f"{ks} logit:{j} {v!r}")
        return lines

    @classmethod
    def from_lines(cls, lines) -> "FlowParams":
        out = cls()
        pending_logits: dict = {}
        for line in lines:
            line = line.strip()
            if not line:
                continue
            ks, kind, value = line.split(" ")
            if kind == "init":
                out.log_init_mass = float(value)
                continue
            key = key_from_str(ks)
            if kind == "out":
                out.log_out_star[key] = float(value)
            elif kind.startswith("logit:"):
                pending_logits.setdefault(key, {})[int(kind[6:])] = float(value)
            else:
                raise ValueError(f"bad entry kind {kind!r}")
        for key, by_idx in pending_logits.items():
            out.policy_logits[key] = [by_idx[j] for j in range(len(by_idx))]
        return out


def key_to_str(key) -> str:
    if key and isinstance(key[0], tuple):  # global key: per-agent segments
        s = "|".join(_seg_to_str(seg) for seg in key)
        return s if len(key) > 1 else s + "|"
    return _seg_to_str(key)


def key_from_str(s: str):
    if "|" in s:
        return tuple(_seg_from_str(p) for p in s.split("|") if p)
    return _seg_from_str(s)


def _seg_to_str(seg) -> str:
    phase = "A" if seg[0] == ALIVE else "P"
    return phase + ":" + ",".join(str(c) for c in seg[1:])


def _seg_from_str(s: str):
    phase, coords = s.split(":")
    return (ALIVE if phase == "A" else PURGATORY,) + tuple(
        int(c) for c in coords.split(",")
    )


class LocalFlowView:
    """One agent's flow table bound to the grid geometry."""

    def __init__(self, params: FlowParams, dims: int, side: int, owner=0):
        self.params = params
        self.dims = dims
        self.side = side
        self.owner = owner
        self.start_key = (ALIVE,) + (0,) * dims
        self._actions: dict = {}

    # -- structure ---------------------------------------------------------

    def check_key(self, key):
        if (
            not isinstance(key, tuple)
            or len(key) != self.dims + 1
            or key[0] not in (ALIVE, PURGATORY)
            or any(not (0 <= c < self.side) for c in key[1:])
        ):
            raise UnknownKey(f"bad local observation key {key!r}")

    def actions(self, key):
        acts = self._actions.get(key)
        if acts is None:
            self.check_key(key)
            acts = legal_actions_key(key, self.side)
            self._actions[key] = acts
        return acts

    def parents(self, key):
        """(parent key, action index at parent) pairs leading into ``key``."""
        out = []
        for k in range(self.dims):
            if key[1 + k] > 0:
                pos = list(key[1:])
                pos[k] -= 1
                parent = (ALIVE, *pos)
                out.append((parent, self.actions(parent).index(k)))
        return out

    def _ensure(self, key):
        if key not in self.params.log_out_star:
            self.params.log_out_star[key] = 0.0
            self.params.policy_logits[key] = [0.0] * len(self.actions(key))

    # -- flow values ---------------------------------------------------------

    def out_star(self, key) -> float:
        """Star outflow; purgatory keys return their pass-through inflow."""
        if key[0] == PURGATORY:
            self.check_key(key)
            return self._pass_through(alive_twin(key))[0]
        self.actions(key)
        self._ensure(key)
        return math.exp(self.params.log_out_star[key])

    def policy_star(self, key):
        """Probabilities over ``actions(key)``; purgatory keys have none."""
        acts = self.actions(key)
        if not acts:
            raise UnknownKey(f"purgatory key {key!r} has no policy")
        self._ensure(key)
        return softmax(self.params.policy_logits[key])

    def _pass_through(self, twin):
        """Flow on the hold edge out of an alive key (inflow of its twin)."""
        self._ensure(twin)
        probs = softmax(self.params.policy_logits[twin])
        return math.exp(self.params.log_out_star[twin]) * probs[-1], probs

    def in_flow(self, key, include_init: bool = True) -> float:
        if key[0] == PURGATORY:
            self.check_key(key)
            return self._pass_through(alive_twin(key))[0]
        self.actions(key)
        total = 0.0
        if include_init and key == self.start_key:
            total += math.exp(self.params.log_init_mass)
        for parent, idx in self.parents(key):
            self._ensure(parent)
            probs = softmax(self.params.policy_logits[parent])
            total += math.exp(self.params.log_out_star[parent]) * probs[idx]
        return total

    def residual_out(self, key) -> float:
        """Star outflow as it enters flow-matching residuals.

        Purgatory keys contribute zero: once an agent is on hold the reward
        edge is the only true outlet, so the trainable outflow vanishes.
        """
        return 0.0 if key[0] == PURGATORY else self.out_star(key)

    def virtual_reward(self, key) -> float:
        return self.in_flow(key) - self.residual_out(key)

    def full_policy(self, key, reward: float = 0.0, virtual: bool = False) -> dict:
        """Distribution over actions plus "stop".

        With ``virtual=True`` the stop mass is the virtual reward (requires
        weak flow matching); otherwise it is the supplied reward.
        """
        if virtual:
            r = self.virtual_reward(key)
            if r < 0:
                raise NegativeVirtualReward(f"virtual reward {r} < 0 at {key!r}")
        else:
            r = reward
        if key[0] == PURGATORY:
            return {"stop": 1.0} if r > 0 else {"wait": 1.0}
        out = self.out_star(key)
        total = out + r
        probs = self.policy_star(key)
        dist = {a: out * p / total for a, p in zip(self.actions(key), probs)}
        dist["stop"] = r / total
        return dist

    def sample_action(self, key, rng, epsilon: float = 0.0) -> int:
        acts = self.actions(key)
        if not acts:
            raise UnknownKey(f"cannot act at purgatory key {key!r}")
        if epsilon > 0.0 and rng.random() < epsilon:
            return acts[rng.randrange(len(acts))]
        return acts[categorical(self.policy_star(key), rng)]

    # -- gradients -----------------------------------------------------------

    def out_star_grad(self, key):
        if key[0] == PURGATORY:
            return self._pass_through_grad(alive_twin(key))
        val = self.out_star(key)
        return val, {(self.owner, "out", key): val}

    def residual_out_grad(self, key):
        if key[0] == PURGATORY:
            return 0.0, {}
        return self.out_star_grad(key)

    def _pass_through_grad(self, twin):
        val, probs = self._pass_through(twin)
        grads = {(self.owner, "out", twin): val}
        hold = len(probs) - 1
        flow = math.exp(self.params.log_out_star[twin])
        for j in range(len(probs)):
            grads[(self.owner, "logit", twin, j)] = flow * probs[hold] * (
                (1.0 if j == hold else 0.0) - probs[j]
            )
        return val, grads

    def in_flow_grad(self, key, include_init: bool = True):
        if key[0] == PURGATORY:
            return self._pass_through_grad(alive_twin(key))
        self.actions(key)
        total = 0.0
        grads: dict = {}
        if include_init and key == self.start_key:
            c = math.exp(self.params.log_init_mass)
            total += c
            grads[(self.owner, "init")] = c
        for parent, idx in self.parents(key):
            self._ensure(parent)
            probs = softmax(self.params.policy_logits[parent])
            flow = math.exp(self.params.log_out_star[parent])
            term = flow * probs[idx]
            total += term
            _acc(grads, (self.owner, "out", parent), term)
            for j in range(len(probs)):
                _acc(
                    grads,
                    (self.owner, "logit", parent, j),
                    term * ((1.0 if j == idx else 0.0) - probs[j]),
                )
        return total, grads


def _acc(grads: dict, ref, value: float):
    grads[ref] = grads.get(ref, 0.0) + value


class GlobalFlowView:
    """A single table over global states with joint action profiles."""

    def __init__(self, params: FlowParams, env, owner=0, action_cap: int | None = None):
        self.params = params
        self.env = env
        self.owner = owner
        self.action_cap = action_cap
        self.start_key = env.start_key()
        self._actions: dict = {}
        self._act_index: dict = {}
        self._parents: dict = {}

    def check_key(self, key):
        ok = (
            isinstance(key, tuple)
            and len(key) == self.env.n_agents
            and all(
                isinstance(seg, tuple)
                and len(seg) == self.env.dims + 1
                and seg[0] in (ALIVE, PURGATORY)
                and all(0 <= c < self.env.side for c in seg[1:])
                for seg in key
            )
        )
        if not ok:
            raise UnknownKey(f"bad global state key {key!r}")

    def actions(self, key):
        """Joint profiles at a key: the product of per-agent action sets."""
        acts = self._actions.get(key)
        if acts is not None:
            return acts
        self.check_key(key)
        if key_terminal(key):
            acts = ()
        else:
            acts = joint_action_profiles(key, self.env.side)
            if self.action_cap is not None and len(acts) > self.action_cap:
                raise TooLargeJointSpace(
                    f"{len(acts)} joint actions exceed cap {self.action_cap}"
                )
        self._actions[key] = acts
        self._act_index[key] = {a: i for i, a in enumerate(acts)}
        return acts

    def action_index(self, key, profile) -> int:
        self.actions(key)
        return self._act_index[key][profile]

    def parents(self, key):
        """(parent key, profile) pairs over reachable non-terminal parents."""
        cached = self._parents.get(key)
        if cached is not None:
            return cached
        self.check_key(key)
        out = global_parents(key)
        self._parents[key] = out
        return out

    def _ensure(self, key):
        if key not in self.params.log_out_star:
            self.params.log_out_star[key] = 0.0
            self.params.policy_logits[key] = [0.0] * len(self.actions(key))

    # -- flow values ---------------------------------------------------------

    def out_star(self, key) -> float:
        if key_terminal(key):
            self.check_key(key)
            return 0.0
        self.actions(key)
        self._ensure(key)
        return math.exp(self.params.log_out_star[key])

    residual_out = out_star

    def policy_star(self, key):
        acts = self.actions(key)
        if not acts:
            raise UnknownKey(f"terminal key {key!r} has no policy")
        self._ensure(key)
        return softmax(self.params.policy_logits[key])

    def action_probs(self, key):
        if key_terminal(key):
            return []
        return list(zip(self.actions(key), self.policy_star(key)))

    def in_flow(self, key, include_init: bool = True) -> float:
        total = 0.0
        if include_init and key == self.start_key:
            total += math.exp(self.params.log_init_mass)
        for parent, profile in self.parents(key):
            self._ensure(parent)
            probs = softmax(self.params.policy_logits[parent])
            total += math.exp(self.params.log_out_star[parent]) * probs[
                self.action_index(parent, profile)
            ]
        return total

    def virtual_reward(self, key) -> float:
        return self.in_flow(key) - self.residual_out(key)

    def full_policy(self, key, reward: float = 0.0, virtual: bool = False) -> dict:
        if virtual:
            r = self.virtual_reward(key)
            if r < 0:
                raise NegativeVirtualReward(f"virtual reward {r} < 0 at {key!r}")
        else:
            r = reward
        if key_terminal(key):
            return {"stop": 1.0}
        out = self.out_star(key)
        total = out + r
        probs = self.policy_star(key)
        dist = {a: out * p / total for a, p in zip(self.actions(key), probs)}
        dist["stop"] = r / total
        return dist

    def sample_profile(self, key, rng, epsilon: float = 0.0):
        acts = self.actions(key)
        if not acts:
            raise UnknownKey(f"cannot act at terminal key {key!r}")
        if epsilon > 0.0 and rng.random() < epsilon:
            return acts[rng.randrange(len(acts))]
        return acts[categorical(self.policy_star(key), rng)]

    # -- gradients -----------------------------------------------------------

    def out_star_grad(self, key):
        if key_terminal(key):
            return 0.0, {}
        val = self.out_star(key)
        return val, {(self.owner, "out", key): val}

    residual_out_grad = out_star_grad

    def in_flow_grad(self, key, include_init: bool = True):
        total = 0.0
        grads: dict = {}
        if include_init and key == self.start_key:
            c = math.exp(self.params.log_init_mass)
            total += c
            grads[(self.owner, "init")] = c
        for parent, profile in self.parents(key):
            self._ensure(parent)
            probs = softmax(self.params.policy_logits[parent])
            flow = math.exp(self.params.log_out_star[parent])
            idx = self.action_index(parent, profile)
            term = flow * probs[idx]
            total += term
            _acc(grads, (self.owner, "out", parent), term)
            for j in range(len(probs)):
                _acc(
                    grads,
                    (self.owner, "logit", parent, j),
                    term * ((1.0 if j == idx else 0.0) - probs[j]),
                )
        return total, grads


def loss_gradient(view, state_batch, reward_lookup, g_spec, kind: str = "stable"):
    """Analytic gradient of the flow-matching loss over a state batch.

    Thin indirection over the loss module so the gradient lives beside the
    tables that own the parameters. Returns ``(loss, grads)``.
    """
    from . import fm_loss

    if kind == "stable":
        return fm_loss.stable_fm_loss_grad(view, state_batch, reward_lookup, g_spec)
    if kind == "divergence":
        return fm_loss.divergence_fm_loss_grad(
            view, state_batch, reward_lookup, g_spec
        )
    raise ValueError(f"unknown loss kind {kind!r}")
