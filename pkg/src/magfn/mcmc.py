"""Metropolis chain over terminal position space targeting reward / Z.

Unlike the increment-only sampler environment, the chain proposes single
+-1 coordinate moves for a uniformly chosen (agent, axis) pair, which makes
it ergodic without any stop action. Out-of-range proposals are rejected by
staying put; acceptance is min(1, reward'/reward).
"""

from __future__ import annotations

import itertools

from .hypergrid import HypergridSpec, reward, reward_flat


class MetropolisChain:
    """Incremental chain state; one step costs one reward evaluation."""

    def __init__(self, spec: HypergridSpec, rng, thinning: int = 10, init=None):
        if thinning < 1:
            raise ValueError("thinning must be >= 1")
        self.spec = spec
        self.rng = rng
        self.thinning = thinning
        nd = spec.n_agents * spec.dims
        self.flat = [0] * nd if init is None else [c for row in init for c in row]
        self.current_r = reward_flat(self.flat, spec)
        self.steps_done = 0

    def positions(self):
        d = self.spec.dims
        return tuple(
            tuple(self.flat[i * d : (i + 1) * d])
            for i in range(self.spec.n_agents)
        )

    def advance(self, n_steps: int, collect: bool = True) -> list:
        """Run n steps; with ``collect`` return every thinning-th state."""
        spec = self.spec
        rng = self.rng
        flat = self.flat
        h = spec.side
        nd = len(flat)
        samples = []
        for _ in range(n_steps):
            idx = rng.randrange(nd)
            delta = 1 if rng.randrange(2) == 0 else -1
            c = flat[idx] + delta
            if 0 <= c < h:
                old = flat[idx]
                flat[idx] = c
                proposed_r = reward_flat(flat, spec)
                if proposed_r >= self.current_r or (
                    rng.random() < proposed_r / self.current_r
                ):
                    self.current_r = proposed_r
                else:
                    flat[idx] = old
            self.steps_done += 1
            if collect and self.steps_done % self.thinning == 0:
                samples.append(self.positions())
        return samples


def mcmc_run(spec: HypergridSpec, n_steps: int, burn_in: int, rng,
             thinning: int = 10, init=None) -> list:
    """Thinned post-burn-in position samples from one chain."""
    if not n_steps > burn_in >= 0:
        raise ValueError("need n_steps > burn_in >= 0")
    chain = MetropolisChain(spec, rng, thinning, init)
    chain.advance(burn_in, collect=False)
    return chain.advance(n_steps - burn_in)


def kernel_matrix(spec: HypergridSpec, cap: int = 4096):
    """The exact one-step transition kernel, for detailed-balance checks.

    Returns ``(states, matrix)`` with ``matrix[i][j]`` the probability of
    moving from state i to state j. Only viable for tiny spaces.
    """
    if spec.n_terminals > cap:
        raise ValueError(f"{spec.n_terminals} states exceed kernel cap {cap}")
    cells = list(itertools.product(range(spec.side), repeat=spec.dims))
    states = list(itertools.product(cells, repeat=spec.n_agents))
    index = {s: i for i, s in enumerate(states)}
    nd = spec.n_agents * spec.dims
    n = len(states)
    matrix = [[0.0] * n for _ in range(n)]
    for i, s in enumerate(states):
        flat = [c for row in s for c in row]
        r_here = reward(s, spec)
        stay = 0.0
        for idx in range(nd):
            for delta in (1, -1):
                p_prop = 1.0 / (2 * nd)
                c = flat[idx] + delta
                if not 0 <= c < spec.side:
                    stay += p_prop
                    continue
                other = list(flat)
                other[idx] = c
                dest = _unflatten(other, spec)
                accept = min(1.0, reward(dest, spec) / r_here)
                matrix[i][index[dest]] += p_prop * accept
                stay += p_prop * (1.0 - accept)
        matrix[i][i] += stay
    return states, matrix


def _unflatten(flat, spec: HypergridSpec):
    d = spec.dims
    return tuple(tuple(flat[i * d : (i + 1) * d]) for i in range(spec.n_agents))
