"""Hyper-grid environment: banded indicator reward plus exact enumeration.

The reward of a terminal configuration is

    r0 + r1 * [all coords c satisfy |c/H - 1/2| > 1/4]
       + r2 * [all coords c satisfy 0.3 < |c/H - 1/2| < 0.4]

with the products running over every coordinate of every agent and strict
inequalities throughout (boundary values take the outer branch). Cells where
the second product fires are the "modes": the highest-reward band.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

from .env import MultiAgentGridEnv

DEFAULT_ENUM_CAP = 2_000_000


class OutOfRange(Exception):
    """A coordinate outside [0, side)."""


class TooLarge(Exception):
    """Exact enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class HypergridSpec:
    n_agents: int
    dims: int
    side: int
    r0: float = 0.01
    r1: float = 0.5
    r2: float = 2.0

    def __post_init__(self):
        if self.n_agents < 1 or self.dims < 1 or self.side < 2:
            raise ValueError("need n_agents >= 1, dims >= 1, side >= 2")
        if min(self.r0, self.r1, self.r2) < 0:
            raise ValueError("reward terms must be non-negative")
        if not (0 < self.r0 < self.r1 < self.r2):
            warnings.warn(
                "expected 0 < r0 << r1 < r2; mode structure may degenerate",
                stacklevel=2,
            )

    @property
    def n_terminals(self) -> int:
        return (self.side**self.dims) ** self.n_agents


# Benchmark presets: two agents on 2-D/3-D side-8 grids, three agents 3-D.
PRESETS = {
    "v1": dict(n_agents=2, dims=2, side=8),
    "v2": dict(n_agents=2, dims=3, side=8),
    "v3": dict(n_agents=3, dims=3, side=8),
}


def preset(name: str, **overrides) -> HypergridSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}, have {sorted(PRESETS)}")
    return HypergridSpec(**{**PRESETS[name], **overrides})


def _flat_coords(positions):
    for row in positions:
        yield from row


def reward(positions, spec: HypergridSpec) -> float:
    """Reward of one terminal configuration (N x D coordinate array)."""
    return reward_flat(_flat_coords(positions), spec)


def reward_flat(coords, spec: HypergridSpec) -> float:
    """Same reward over an already-flattened coordinate iterable."""
    band1 = True
    band2 = True
    h = spec.side
    for c in coords:
        if not 0 <= c < h:
            raise OutOfRange(f"coordinate {c} outside [0, {h})")
        v = abs(c / h - 0.5)
        band1 = band1 and v > 0.25
        band2 = band2 and 0.3 < v < 0.4
    return spec.r0 + (spec.r1 if band1 else 0.0) + (spec.r2 if band2 else 0.0)


def is_mode(positions, spec: HypergridSpec) -> bool:
    """Whether every coordinate sits in the inner high-reward band."""
    h = spec.side
    for c in _flat_coords(positions):
        if not 0 <= c < h:
            raise OutOfRange(f"coordinate {c} outside [0, {h})")
        if not 0.3 < abs(c / h - 0.5) < 0.4:
            return False
    return True


def enumerate_terminals(spec: HypergridSpec, cap: int = DEFAULT_ENUM_CAP):
    """Yield every terminal position array exactly once, lexicographically."""
    if spec.n_terminals > cap:
        raise TooLarge(
            f"{spec.n_terminals} terminal states exceed enumeration cap {cap}"
        )
    cells = list(itertools.product(range(spec.side), repeat=spec.dims))
    return itertools.product(cells, repeat=spec.n_agents)


def partition_function(spec: HypergridSpec, cap: int = DEFAULT_ENUM_CAP):
    """Exact normalizer Z and the target distribution reward/Z.

    Returns ``(z, target)`` where ``target`` maps each terminal position
    array to its probability.
    """
    masses = {}
    z = 0.0
    for x in enumerate_terminals(spec, cap):
        r = reward(x, spec)
        masses[x] = r
        z += r
    return z, {x: r / z for x, r in masses.items()}


def mode_set(spec: HypergridSpec, cap: int = DEFAULT_ENUM_CAP) -> frozenset:
    """All terminals in the inner band (reward r0 + r1 + r2).

    Built per-coordinate, so the cost is the number of modes rather than
    the number of terminals.
    """
    h = spec.side
    band = [c for c in range(h) if 0.3 < abs(c / h - 0.5) < 0.4]
    n_modes = len(band) ** (spec.n_agents * spec.dims)
    if n_modes > cap:
        raise TooLarge(f"{n_modes} modes exceed cap {cap}")
    cells = list(itertools.product(band, repeat=spec.dims))
    return frozenset(itertools.product(cells, repeat=spec.n_agents))


class HypergridEnv(MultiAgentGridEnv):
    """Grid mechanics bound to a reward specification."""

    def __init__(self, spec: HypergridSpec, horizon: int | None = None):
        super().__init__(spec.n_agents, spec.dims, spec.side, horizon)
        self.spec = spec

    def reward(self, positions) -> float:
        return reward(positions, self.spec)

    def reward_of_key(self, state_key) -> float:
        return reward(tuple(seg[1:] for seg in state_key), self.spec)
