"""Flat text run configuration (one ``key = value`` per line).

The format is dependency-free and diff-friendly. ``#`` starts a comment,
blank lines are skipped, unknown keys are errors. ``config.resolved.json``
written by the runner reparses to an equivalent configuration.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .hypergrid import PRESETS, HypergridSpec

ALGORITHMS = ("cfn", "ifn", "jfn", "cjfn", "mcmc")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    algorithm: str = ""
    preset: str = ""
    n_agents: int = 0
    dims: int = 0
    side: int = 0
    r0: float = 0.01
    r1: float = 0.5
    r2: float = 2.0
    horizon: int = 0  # 0: environment default
    train_steps: int = 20000
    trajectories_per_step: int = 16
    lr: float = 1e-4
    epsilon: float = 5e-4
    loss: str = "stable"
    g: str = "square"
    g_alpha: float = 1.0
    g_beta: float = 1.0
    n_omega: int = 4
    sampling: str = "is"
    async_start: bool = False
    replay_capacity: int = 512
    replay_reuse: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_interval: int = 100
    eval_rollouts: int = 20
    eval_greedy: bool = False
    checkpoint_interval: int = 0  # 0: final checkpoint only
    seed: int = 0
    output_dir: str = ""
    dp_cap: int = 100_000
    enum_cap: int = 2_000_000
    cfn_action_cap: int = 4096
    log_wall_time: bool = False
    mcmc_steps: int = 0  # 0: train_steps * trajectories_per_step
    mcmc_burn_in_frac: float = 0.1
    mcmc_thinning: int = 10

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}"
            )
        if self.preset:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}")
            geom = PRESETS[self.preset]
            if self.n_agents == 0:
                self.n_agents = geom["n_agents"]
            if self.dims == 0:
                self.dims = geom["dims"]
            if self.side == 0:
                self.side = geom["side"]
        if self.n_agents < 1 or self.dims < 1 or self.side < 2:
            raise ConfigError(
                "environment geometry missing: set preset or n_agents/dims/side"
            )
        positive = (
            "train_steps trajectories_per_step lr eval_interval eval_rollouts "
            "n_omega replay_capacity replay_reuse dp_cap enum_cap cfn_action_cap "
            "mcmc_thinning"
        )
        for name in positive.split():
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epsilon < 0 or self.epsilon > 1:
            raise ConfigError("epsilon must be in [0, 1]")
        if self.loss not in ("stable", "divergence"):
            raise ConfigError(f"loss must be stable or divergence, got {self.loss!r}")
        if self.g not in ("square", "logpoly"):
            raise ConfigError(f"g must be square or logpoly, got {self.g!r}")
        if self.sampling not in ("is", "cs"):
            raise ConfigError(f"sampling must be is or cs, got {self.sampling!r}")
        if not 0 <= self.mcmc_burn_in_frac < 1:
            raise ConfigError("mcmc_burn_in_frac must be in [0, 1)")
        if self.horizon < 0 or self.mcmc_steps < 0:
            raise ConfigError("horizon and mcmc_steps cannot be negative")
        return self

    # -- derived views -----------------------------------------------------

    def spec(self) -> HypergridSpec:
        return HypergridSpec(
            n_agents=self.n_agents,
            dims=self.dims,
            side=self.side,
            r0=self.r0,
            r1=self.r1,
            r2=self.r2,
        )

    def effective_horizon(self) -> int | None:
        return self.horizon if self.horizon > 0 else None

    def effective_mcmc_steps(self) -> int:
        if self.mcmc_steps > 0:
            return self.mcmc_steps
        return self.train_steps * self.trajectories_per_step

    def g_spec(self):
        from .fm_loss import GSpec

        return GSpec(self.g, self.g_alpha, self.g_beta)

    def run_name(self) -> str:
        geom = self.preset or f"n{self.n_agents}d{self.dims}h{self.side}"
        return f"{self.algorithm}-{geom}-s{self.seed}"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        field = _FIELDS.get(key)
        if field is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _coerce(field.type, value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return cfg.validate()


def _coerce(type_name: str, value: str):
    if type_name == "bool":
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    return value


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_from_json(text: str) -> RunConfig:
    data = json.loads(text)
    unknown = set(data) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown keys in resolved config: {sorted(unknown)}")
    return RunConfig(**data).validate()
