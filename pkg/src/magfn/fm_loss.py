"""Flow-matching losses over batches of states.

Two forms share a zero set (flows matched on the batch support):

* stable:      mean of g(inflow - star_outflow - reward)
* divergence:  mean of g(log(inflow / (star_outflow + reward)))

``g`` is either the square or ``log(1 + alpha * |x| ** beta)``. The
divergence form needs strictly positive flows and is only sound on acyclic
state spaces; the stable form is the default.

Batches are plain lists of state keys with multiplicity (the empirical
training distribution). ``reward_lookup`` maps a key to its reward: the
environment reward at terminal keys, zero elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class NonFinite(Exception):
    """A loss evaluation produced a non-finite value."""


class ZeroFlow(Exception):
    """Divergence loss hit a state with zero in- or out-flow."""


@dataclass(frozen=True)
class GSpec:
    kind: str = "square"  # "square" | "logpoly"
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("square", "logpoly"):
            raise ValueError(f"unknown g kind {self.kind!r}")
        if self.kind == "logpoly" and (self.alpha <= 0 or self.beta <= 0):
            raise ValueError("logpoly needs positive alpha and beta")


SQUARE = GSpec("square")


def g_eval(g_spec: GSpec, x: float) -> float:
    if g_spec.kind == "square":
        return x * x
    return math.log1p(g_spec.alpha * abs(x) ** g_spec.beta)


def g_prime(g_spec: GSpec, x: float) -> float:
    """Derivative of g; zero at the (possibly non-smooth) origin."""
    if g_spec.kind == "square":
        return 2.0 * x
    if x == 0.0:
        return 0.0
    a, b = g_spec.alpha, g_spec.beta
    mag = abs(x)
    return math.copysign(a * b * mag ** (b - 1.0) / (1.0 + a * mag**b), x)


def _dedupe(batch):
    """Distinct keys with multiplicities, in first-visit order."""
    counts: dict = {}
    for key in batch:
        counts[key] = counts.get(key, 0) + 1
    return counts


def stable_fm_loss(view, batch, reward_lookup, g_spec: GSpec = SQUARE) -> float:
    if not batch:
        raise ValueError("empty state batch")
    counts = _dedupe(batch)
    total = 0.0
    for key, mult in counts.items():
        r = view.in_flow(key) - view.residual_out(key) - reward_lookup(key)
        total += mult * g_eval(g_spec, r)
    loss = total / len(batch)
    if not math.isfinite(loss):
        raise NonFinite(f"stable loss is {loss}")
    return loss


def stable_fm_loss_grad(view, batch, reward_lookup, g_spec: GSpec = SQUARE):
    """Loss plus its analytic gradient as a flat parameter map."""
    if not batch:
        raise ValueError("empty state batch")
    counts = _dedupe(batch)
    n = len(batch)
    total = 0.0
    grads: dict = {}
    for key, mult in counts.items():
        in_v, in_g = view.in_flow_grad(key)
        out_v, out_g = view.residual_out_grad(key)
        r = in_v - out_v - reward_lookup(key)
        total += mult * g_eval(g_spec, r)
        scale = mult * g_prime(g_spec, r) / n
        if scale != 0.0:
            for ref, d in in_g.items():
                grads[ref] = grads.get(ref, 0.0) + scale * d
            for ref, d in out_g.items():
                grads[ref] = grads.get(ref, 0.0) - scale * d
    loss = total / n
    _check_finite(loss, grads)
    return loss, grads


def divergence_fm_loss(view, batch, reward_lookup, g_spec: GSpec = SQUARE) -> float:
    if not batch:
        raise ValueError("empty state batch")
    counts = _dedupe(batch)
    total = 0.0
    for key, mult in counts.items():
        in_v = view.in_flow(key)
        out_v = view.residual_out(key) + reward_lookup(key)
        if in_v <= 0.0 or out_v <= 0.0:
            raise ZeroFlow(f"zero flow at {key!r}: in={in_v} out={out_v}")
        total += mult * g_eval(g_spec, math.log(in_v / out_v))
    loss = total / len(batch)
    if not math.isfinite(loss):
        raise NonFinite(f"divergence loss is {loss}")
    return loss


def divergence_fm_loss_grad(view, batch, reward_lookup, g_spec: GSpec = SQUARE):
    if not batch:
        raise ValueError("empty state batch")
    counts = _dedupe(batch)
    n = len(batch)
    total = 0.0
    grads: dict = {}
    for key, mult in counts.items():
        in_v, in_g = view.in_flow_grad(key)
        out_v, out_g = view.residual_out_grad(key)
        out_full = out_v + reward_lookup(key)
        if in_v <= 0.0 or out_full <= 0.0:
            raise ZeroFlow(f"zero flow at {key!r}: in={in_v} out={out_full}")
        r = math.log(in_v / out_full)
        total += mult * g_eval(g_spec, r)
        scale = mult * g_prime(g_spec, r) / n
        if scale != 0.0:
            for ref, d in in_g.items():
                grads[ref] = grads.get(ref, 0.0) + scale * d / in_v
            for ref, d in out_g.items():
                grads[ref] = grads.get(ref, 0.0) - scale * d / out_full
    loss = total / n
    _check_finite(loss, grads)
    return loss, grads


def ifn_local_loss(local_view, trajectory_observations, observed_global_rewards,
                   g_spec: GSpec = SQUARE) -> float:
    """Independent-training loss for one agent.

    ``trajectory_observations`` holds, per trajectory, the agent's own
    observation keys up to and including the hold step; the credited reward
    is the observed global reward of the whole trajectory, attached to the
    agent's final (purgatory) observation. Averaging that stochastic credit
    over trajectories is what makes the per-agent reward spurious.

    The value is the mean over trajectories of the per-trajectory sum of
    g(residual); intermediate purgatory wait steps are flow matched by
    construction and contribute nothing.
    """
    loss, _ = _ifn_local_loss(
        local_view, trajectory_observations, observed_global_rewards, g_spec,
        with_grad=False,
    )
    return loss


def ifn_local_loss_grad(local_view, trajectory_observations,
                        observed_global_rewards, g_spec: GSpec = SQUARE):
    return _ifn_local_loss(
        local_view, trajectory_observations, observed_global_rewards, g_spec,
        with_grad=True,
    )


def _ifn_local_loss(view, trajectories, rewards, g_spec, with_grad):
    if not trajectories:
        raise ValueError("no trajectories")
    if len(trajectories) != len(rewards):
        raise ValueError("one observed reward per trajectory required")
    n = len(trajectories)
    total = 0.0
    grads: dict = {}

    def term(key, reward):
        nonlocal total
        if with_grad:
            in_v, in_g = view.in_flow_grad(key)
            out_v, out_g = view.residual_out_grad(key)
        else:
            in_v, out_v = view.in_flow(key), view.residual_out(key)
            in_g = out_g = ()
        r = in_v - out_v - reward
        total += g_eval(g_spec, r)
        if with_grad:
            scale = g_prime(g_spec, r) / n
            if scale != 0.0:
                for ref, d in in_g.items():
                    grads[ref] = grads.get(ref, 0.0) + scale * d
                for ref, d in out_g.items():
                    grads[ref] = grads.get(ref, 0.0) - scale * d

    from .env import PURGATORY

    for obs_stream, reward in zip(trajectories, rewards):
        terminal_done = False
        for key in obs_stream:
            if key[0] == PURGATORY:
                if not terminal_done:
                    term(key, reward)
                    terminal_done = True
                # later purgatory visits are pass-through: residual is 0
            else:
                term(key, 0.0)
        if not terminal_done:
            raise ValueError("trajectory stream missing the purgatory observation")
    loss = total / n
    if with_grad:
        _check_finite(loss, grads)
        return loss, grads
    if not math.isfinite(loss):
        raise NonFinite(f"local loss is {loss}")
    return loss, None


def _check_finite(loss, grads):
    if not math.isfinite(loss):
        raise NonFinite(f"loss is {loss}")
    for ref, d in grads.items():
        if not math.isfinite(d):
            from .flow_table import NonFiniteGradient

            raise NonFiniteGradient(f"gradient for {ref} is {d}")
