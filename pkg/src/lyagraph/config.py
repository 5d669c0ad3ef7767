"""Run configuration: TOML loading, built-in defaults and cross-validation."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import Box, GaussianTerm, Obstacle, SystemConfig
from .lyapunov import LyapunovConfig, RoaConfig
from .nodes import PlannerWorld, SamplingConfig, SynthesisConfigs
from .ppo import PpoConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    mode: str = "tpc"
    out_dir: str = "runs/out"
    start: list = field(default_factory=lambda: [-4.0, -4.0])
    starts: list = None                  # gpc: several start states
    goal: list = field(default_factory=lambda: [4.0, 4.0])
    system: SystemConfig = field(default_factory=SystemConfig)
    obstacles: list = field(default_factory=list)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    lyapunov: LyapunovConfig = field(default_factory=LyapunovConfig)
    roa: RoaConfig = field(default_factory=RoaConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    horizon: int = 300
    reward_coeffs: tuple = (0.01, 0.01)
    reward_frame: str = "raw"
    switch_tol: float = 0.01
    edge_weight: str = "distance"        # or "hops"
    grid_resolution: int = 101

    def validate(self):
        try:
            self.sampling.validate(self.roa, self.obstacles)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.mode not in ("tpc", "gpc"):
            raise ConfigError(f"mode must be 'tpc' or 'gpc', got {self.mode!r}")
        if self.lyapunov.sample_radius != self.roa.eta_ub:
            # keep the Lyapunov training ball tied to the certification bound
            self.lyapunov.sample_radius = self.roa.eta_ub
        if self.edge_weight not in ("distance", "hops"):
            raise ConfigError("edge_weight must be 'distance' or 'hops'")
        return self

    def world(self):
        return PlannerWorld(self.system, list(self.obstacles), self.sampling)

    def synthesis(self):
        return SynthesisConfigs(
            ppo=self.ppo,
            lyapunov=self.lyapunov,
            roa=self.roa,
            horizon=self.horizon,
            reward_coeffs=tuple(self.reward_coeffs),
            reward_frame=self.reward_frame,
        )

    def snapshot(self):
        """JSON-ready snapshot of every parameter, for the run manifest."""
        d = {
            "seed": self.seed,
            "mode": self.mode,
            "start": list(map(float, self.start)),
            "starts": [list(map(float, s)) for s in self.starts] if self.starts else None,
            "goal": list(map(float, self.goal)),
            "system": {
                "terms": [[t.alpha, list(t.mu), t.sigma] for t in self.system.terms],
                "bounds": [list(self.system.state_bounds.low),
                           list(self.system.state_bounds.high)],
                "u_max": self.system.u_max,
                "dt": self.system.dt,
                "integrator": self.system.integrator,
            },
            "obstacles": [[list(ob.center), ob.radius] for ob in self.obstacles],
            "ppo": asdict(self.ppo),
            "lyapunov": asdict(self.lyapunov),
            "roa": asdict(self.roa),
            "sampling": {k: v for k, v in asdict(self.sampling).items()},
            "horizon": self.horizon,
            "reward_coeffs": list(self.reward_coeffs),
            "reward_frame": self.reward_frame,
            "switch_tol": self.switch_tol,
            "edge_weight": self.edge_weight,
            "grid_resolution": self.grid_resolution,
        }
        return d


def _build_section(cls, data, name):
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [{name}] section: {e}") from e


def from_dict(data):
    """RunConfig from a plain dict (parsed TOML); unknown keys are errors."""
    data = dict(data)
    cfg_kw = {}
    sysd = data.pop("system", {})
    if "terms" in sysd:
        sysd["terms"] = tuple(
            GaussianTerm(t["alpha"], tuple(t["mu"]), t["sigma"]) for t in sysd["terms"]
        )
    if "state_bounds" in sysd:
        b = sysd["state_bounds"]
        sysd["state_bounds"] = Box(tuple(b["low"]), tuple(b["high"]))
    cfg_kw["system"] = _build_section(SystemConfig, sysd, "system")
    cfg_kw["obstacles"] = [
        Obstacle(tuple(ob["center"]), ob["radius"]) for ob in data.pop("obstacles", [])
    ]
    for key, cls in (
        ("ppo", PpoConfig),
        ("lyapunov", LyapunovConfig),
        ("roa", RoaConfig),
        ("sampling", SamplingConfig),
    ):
        section = data.pop(key, {})
        if key in ("lyapunov",):
            for tup_key in ("net_dims", "activations"):
                if tup_key in section:
                    section[tup_key] = tuple(section[tup_key])
        cfg_kw[key] = _build_section(cls, section, key)
    if "reward_coeffs" in data:
        data["reward_coeffs"] = tuple(data["reward_coeffs"])
    allowed = {
        "seed", "mode", "out_dir", "start", "starts", "goal", "horizon",
        "reward_coeffs", "reward_frame", "switch_tol", "edge_weight",
        "grid_resolution",
    }
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg_kw.update(data)
    try:
        cfg = RunConfig(**cfg_kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg.validate()


def from_toml(path):
    with open(path, "rb") as f:
        return from_dict(tomllib.load(f))


def scale_budget(cfg, total_timesteps):
    """Apply a per-node PPO step budget (the CLI --budget flag)."""
    cfg.ppo.total_timesteps = int(total_timesteps)
    return cfg
