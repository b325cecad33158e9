"""Run configuration: parsing, validation, canonical hashing.

Configs arrive as JSON dicts (CLI --config files). Validation errors name
the offending field so the CLI can surface it on one line and exit with the
dedicated status code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .buffer import ScoringPolicy
from .controller import CONTROLLER_KINDS
from .graph import PARTITION_STRATEGIES

__all__ = ["ConfigError", "RunConfig", "config_hash"]


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""

    def __init__(self, field_name: str, msg: str) -> None:
        super().__init__(f"field={field_name}: {msg}")
        self.field = field_name


@dataclass
class RunConfig:
    """Everything a run needs; defaults mirror the documented CLI defaults."""

    seed: int
    # graph: either a saved edge list or generation parameters
    graph_path: str | None = None
    num_nodes: int = 10000
    avg_degree: float = 10.0
    skew: float = 2.1
    # partitioning
    num_parts: int = 4
    partition_strategy: str = "greedy-edge-cut"
    # workload
    train_fraction: float = 0.1
    batch_size: int = 2000
    fanouts: tuple[int, ...] = (10, 25)
    epochs: int = 3
    # buffer
    buffer_pct: float = 25.0
    access_increment: float = 1.0
    decay_factor: float = 0.95
    stale_threshold: float = 0.95
    # pipeline
    mode: str = "async"
    controller: str = "never"
    selective_window: int = 5
    selective_stall_delta: float = 0.5
    classifier_model: str | None = None
    finetune_every: int = 0
    agent_endpoint: str | None = None
    agent_model: str = "default"
    agent_script: str | None = None
    agent_max_chars: int = 6000
    ctx_chars: int = 2000
    cot: bool = False
    decision_timeout: float | None = None  # simulated units; None disables
    http_timeout: float = 30.0  # wall seconds, live endpoint only
    # simulated clock
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    t_infer: float = 0.0
    t_sampling: float = 1.0
    # evaluation
    epsilon: float = 0.5
    feature_dim: int = 0  # >0 additionally reports comm volume in bytes

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown field")
        if "seed" not in d:
            raise ConfigError("seed", "required (runs must be seeded)")
        merged = {**{f.name: f.default for f in fields(cls) if f.name != "seed"}, **d}
        if isinstance(merged.get("fanouts"), list):
            merged["fanouts"] = tuple(merged["fanouts"])
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except ValueError as exc:
            raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("<file>", "config must be a JSON object")
        return cls.from_dict(d)

    def validate(self) -> None:
        def err(name: str, msg: str) -> None:
            raise ConfigError(name, msg)

        if not isinstance(self.seed, int):
            err("seed", "must be an integer")
        if self.graph_path is None:
            if self.num_nodes < 2:
                err("num_nodes", "must be >= 2")
            if self.avg_degree < 1:
                err("avg_degree", "must be >= 1")
            if self.skew <= 1.0:
                err("skew", "must be > 1")
        if self.num_parts < 1:
            err("num_parts", "must be >= 1")
        if self.partition_strategy not in PARTITION_STRATEGIES:
            err("partition_strategy", f"must be one of {PARTITION_STRATEGIES}")
        if not 0 < self.train_fraction <= 1:
            err("train_fraction", "must be in (0, 1]")
        if self.batch_size < 1:
            err("batch_size", "must be >= 1")
        if not self.fanouts or any(
            not isinstance(f, int) or f < 1 for f in self.fanouts
        ):
            err("fanouts", "must be a non-empty list of positive ints")
        if self.epochs < 1:
            err("epochs", "must be >= 1")
        if not 0 < self.buffer_pct <= 100:
            err("buffer_pct", "must be in (0, 100]")
        try:
            ScoringPolicy(
                self.access_increment, self.decay_factor, self.stale_threshold
            )
        except ValueError as exc:
            err("decay_factor", str(exc))
        if self.mode not in ("sync", "async"):
            err("mode", "must be 'sync' or 'async'")
        if self.controller not in CONTROLLER_KINDS:
            err("controller", f"must be one of {CONTROLLER_KINDS}")
        if self.controller == "classifier" and not self.classifier_model:
            err("classifier_model", "required for controller=classifier")
        if self.controller == "agent" and not (self.agent_endpoint or self.agent_script):
            err("agent_endpoint", "agent needs an endpoint URL or a script file")
        if self.finetune_every < 0:
            err("finetune_every", "must be >= 0")
        if self.selective_window < 2:
            err("selective_window", "must be >= 2")
        for name in ("alpha", "beta", "gamma", "t_infer", "t_sampling"):
            if getattr(self, name) < 0:
                err(name, "must be >= 0")
        if self.decision_timeout is not None and self.decision_timeout <= 0:
            err("decision_timeout", "must be > 0 or null")
        if self.epsilon < 0:
            err("epsilon", "must be >= 0")
        if self.feature_dim < 0:
            err("feature_dim", "must be >= 0")

    def scoring_policy(self) -> ScoringPolicy:
        return ScoringPolicy(
            self.access_increment, self.decay_factor, self.stale_threshold
        )

    def to_canonical_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d


def config_hash(cfg: RunConfig) -> str:
    """sha256 over the canonical JSON form; stable across field order."""
    blob = json.dumps(cfg.to_canonical_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
