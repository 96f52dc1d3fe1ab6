"""Multi-agent grid environment with per-agent stop-and-wait semantics.

Agents move on a D-dimensional grid of side H. An alive agent either
increments one coordinate or holds; holding freezes the agent at its
current position ("purgatory") where it waits until every agent has held,
at which point the episode is terminal and the reward is awarded.

Actions are plain ints: 0..D-1 increment that axis, HOLD enters purgatory,
WAIT is the implicit no-op slot for agents already in purgatory. An action
profile is a tuple of one action per agent.

State keys: flow tables and the exact-distribution code index states by
content only (positions and phases, never the step counter). A local
observation key is ``(phase, x0, ..., xD-1)``; a global key is the tuple
of the per-agent observation keys.
"""

from __future__ import annotations

from dataclasses import dataclass

ALIVE = 0
PURGATORY = 1

HOLD = -1
WAIT = -2


class IllegalAction(Exception):
    """An action outside the legal set of the acting agent."""


class TerminalState(Exception):
    """Attempted to step a terminal (all-purgatory) state."""


@dataclass(frozen=True)
class LocalObs:
    """One agent's view: its own position and phase.

    A purgatory observation keeps the last alive position.
    """

    position: tuple[int, ...]
    phase: int

    def key(self) -> tuple[int, ...]:
        return (self.phase, *self.position)


@dataclass(frozen=True)
class GlobalState:
    positions: tuple[tuple[int, ...], ...]
    phases: tuple[int, ...]
    step: int = 0

    @property
    def terminal(self) -> bool:
        return all(p == PURGATORY for p in self.phases)

    def key(self):
        return tuple(
            (self.phases[i], *self.positions[i]) for i in range(len(self.phases))
        )


# -- key-level helpers (hot path: views, DP and samplers work on keys) --


def obs_alive(obs_key) -> bool:
    return obs_key[0] == ALIVE


def obs_position(obs_key) -> tuple[int, ...]:
    return obs_key[1:]


def legal_actions_key(obs_key, side: int) -> tuple[int, ...]:
    """Legal actions at a local observation key, in canonical order.

    Increment axes in ascending order, then HOLD. Purgatory observations
    have no legal actions (the agent waits).
    """
    if obs_key[0] == PURGATORY:
        return ()
    acts = tuple(k for k in range(len(obs_key) - 1) if obs_key[1 + k] < side - 1)
    return acts + (HOLD,)


def obs_child_key(obs_key, action: int):
    """Deterministic local transition on observation keys."""
    if obs_key[0] == PURGATORY:
        raise IllegalAction(f"purgatory agents only wait, got {action}")
    if action == HOLD:
        return (PURGATORY, *obs_key[1:])
    pos = list(obs_key[1:])
    pos[action] += 1
    return (ALIVE, *pos)


def purgatory_twin(obs_key):
    return (PURGATORY, *obs_key[1:])


def alive_twin(obs_key):
    return (ALIVE, *obs_key[1:])


def key_terminal(state_key) -> bool:
    return all(seg[0] == PURGATORY for seg in state_key)


def child_key(state_key, profile):
    """Apply an action profile to a global key (no legality checks)."""
    out = []
    for seg, a in zip(state_key, profile):
        if seg[0] == PURGATORY:
            out.append(seg)
        elif a == HOLD:
            out.append((PURGATORY, *seg[1:]))
        else:
            pos = list(seg[1:])
            pos[a] += 1
            out.append((ALIVE, *pos))
    return tuple(out)


def joint_action_profiles(state_key, side: int):
    """All joint profiles at a non-terminal key (product of agent actions)."""
    import itertools

    per_agent = [legal_actions_key(seg, side) or (WAIT,) for seg in state_key]
    return tuple(itertools.product(*per_agent))


def global_parents(state_key):
    """(parent key, profile) pairs over reachable non-terminal parents.

    Candidates come from inverting each agent's deterministic transition;
    the reachability filter is what makes inflows over content-only keys
    exact (unreachable parent combinations never carry flow).
    """
    import itertools

    per_agent = []
    for seg in state_key:
        opts = []
        if seg[0] == ALIVE:
            for k in range(len(seg) - 1):
                if seg[1 + k] > 0:
                    pos = list(seg[1:])
                    pos[k] -= 1
                    opts.append(((ALIVE, *pos), k))
        else:
            opts.append(((ALIVE, *seg[1:]), HOLD))
            opts.append((seg, WAIT))
        per_agent.append(opts)
    out = []
    for combo in itertools.product(*per_agent):
        parent = tuple(c[0] for c in combo)
        if key_terminal(parent) or not key_reachable(parent):
            continue
        out.append((parent, tuple(c[1] for c in combo)))
    return out


def key_reachable(state_key) -> bool:
    """Whether a (positions, phases) combination occurs in some rollout.

    Every alive agent has taken exactly one increment per elapsed step, so
    all alive coordinate sums are equal; an agent frozen in purgatory held
    strictly earlier, so its sum is below the alive sum.
    """
    alive_sum = None
    for seg in state_key:
        if seg[0] == ALIVE:
            s = sum(seg[1:])
            if alive_sum is None:
                alive_sum = s
            elif s != alive_sum:
                return False
    if alive_sum is None:
        return True
    for seg in state_key:
        if seg[0] == PURGATORY and sum(seg[1:]) > alive_sum - 1:
            return False
    return True


class MultiAgentGridEnv:
    """The shared mechanics: observation projection, legality, transition.

    Transitions are non-interacting (agents may overlap); each agent's next
    observation depends only on its own observation and action, so local
    transition kernels are deterministic.
    """

    def __init__(self, n_agents: int, dims: int, side: int, horizon: int | None = None):
        if n_agents < 1:
            raise ValueError("need at least one agent")
        if dims < 1:
            raise ValueError("need at least one dimension")
        if side < 2:
            raise ValueError("grid side must be >= 2")
        self.n_agents = n_agents
        self.dims = dims
        self.side = side
        # Default never truncates: every agent is forced into the corner
        # (and hence purgatory) after dims*(side-1) increments.
        self.horizon = horizon if horizon is not None else n_agents * dims * (side - 1) + 1

    # -- construction ----------------------------------------------------

    def start_state(self) -> GlobalState:
        origin = (0,) * self.dims
        return GlobalState(
            positions=(origin,) * self.n_agents,
            phases=(ALIVE,) * self.n_agents,
            step=0,
        )

    def start_key(self):
        return self.start_state().key()

    def start_obs_key(self):
        return (ALIVE,) + (0,) * self.dims

    # -- the contract ----------------------------------------------------

    def observe(self, state: GlobalState, agent: int) -> LocalObs:
        return LocalObs(position=state.positions[agent], phase=state.phases[agent])

    def legal_actions(self, obs: LocalObs) -> tuple[int, ...]:
        return legal_actions_key(obs.key(), self.side)

    def step(self, state: GlobalState, profile) -> GlobalState:
        if state.terminal:
            raise TerminalState("cannot step a terminal state")
        if len(profile) != self.n_agents:
            raise IllegalAction(
                f"profile has {len(profile)} entries, expected {self.n_agents}"
            )
        forced = state.step >= self.horizon - 1
        positions = []
        phases = []
        for i in range(self.n_agents):
            if state.phases[i] == PURGATORY:
                if profile[i] != WAIT:
                    raise IllegalAction(f"agent {i} is in purgatory and can only wait")
                positions.append(state.positions[i])
                phases.append(PURGATORY)
                continue
            a = HOLD if forced else profile[i]
            if a == HOLD:
                positions.append(state.positions[i])
                phases.append(PURGATORY)
                continue
            legal = legal_actions_key((ALIVE, *state.positions[i]), self.side)
            if a not in legal:
                raise IllegalAction(f"action {a} illegal for agent {i}")
            pos = list(state.positions[i])
            pos[a] += 1
            positions.append(tuple(pos))
            phases.append(ALIVE)
        return GlobalState(
            positions=tuple(positions), phases=tuple(phases), step=state.step + 1
        )

    # -- enumeration helpers ----------------------------------------------

    def iter_positions(self):
        """All single-agent positions, lexicographic."""
        import itertools

        return itertools.product(range(self.side), repeat=self.dims)

    def iter_reachable_keys(self, cap: int | None = None):
        """Yield every reachable global key (step counter excluded).

        Raises OverflowError past ``cap`` so callers can fall back to
        sampling-based estimates.
        """
        import itertools

        segs = []
        for pos in self.iter_positions():
            segs.append((ALIVE, *pos))
            segs.append((PURGATORY, *pos))
        if cap is not None and len(segs) ** self.n_agents > 64 * cap:
            # The filter pass itself would be too expensive.
            raise OverflowError(f"candidate state count exceeds cap {cap}")
        count = 0
        for combo in itertools.product(segs, repeat=self.n_agents):
            if key_reachable(combo):
                count += 1
                if cap is not None and count > cap:
                    raise OverflowError(f"reachable state count exceeds cap {cap}")
                yield combo
