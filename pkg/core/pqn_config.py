"""Single source of truth reader for pqn.toml.

Usage:
    from core.pqn_config import config
    train_cfg = config.training
    kind = config.experiments["tsp20"]

Training defaults, experiment sizes and seed bases come from here; CLI flags
only override them per run.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib  # type: ignore

from core.trainer import TrainConfig

_PROJECT_ROOT = Path(__file__).resolve().parent.parent
_CONFIG_PATH = _PROJECT_ROOT / "pqn.toml"

SEED_ENV = "PQN_SEED"
EXPERIMENT_KINDS = ("tsp20", "tsp50", "perturbed-tsp20", "custom")


@dataclass(frozen=True)
class ExperimentKind:
    name: str
    n: int
    instances: int
    epochs: int
    steps: int
    benchmark: str = "two_opt"
    perturb_window: Optional[Tuple[int, int]] = None
    perturb_bounds: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class SeedBases:
    train: int
    eval: int
    test: int
    span: int

    def split(self, split: str, count: int) -> Tuple[int, ...]:
        if count > self.span:
            raise ValueError(f"{count} instances exceed the seed span {self.span}")
        base = getattr(self, split)
        return tuple(base + i for i in range(count))


@dataclass(frozen=True)
class _Config:
    training: TrainConfig
    experiments: Dict[str, ExperimentKind]
    seeds: SeedBases
    out_dir: Path
    log_dir: str

    def experiment(self, name: str) -> ExperimentKind:
        try:
            return self.experiments[name]
        except KeyError:
            raise ValueError(f"unknown experiment kind {name!r}; configured: {sorted(self.experiments)}") from None


def _optional_positive(value) -> Optional[float]:
    """TOML has no null; 0 switches the bound off."""
    value = float(value)
    return value if value > 0 else None


def _training(raw: dict) -> TrainConfig:
    seed = os.environ.get(SEED_ENV, raw.get("seed", 0))
    try:
        seed = int(seed)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {seed!r}") from None
    return TrainConfig(
        hidden=int(raw.get("hidden", 128)),
        q_hidden=int(raw["q_hidden"]) if "q_hidden" in raw else None,
        batch_size=int(raw.get("batch", 64)),
        lr_ptr=float(raw.get("lr_ptr", 0.1)),
        lr_q=float(raw.get("lr_q", 0.01)),
        gamma=float(raw.get("gamma", 0.95)),
        epochs=int(raw.get("epochs", 30)),
        steps_per_epoch=int(raw.get("steps", 100)),
        sync_c=int(raw.get("sync_c", 100)),
        replay_capacity=int(raw.get("replay_capacity", 10_000)),
        sup_steps=int(raw.get("sup_steps", 20)),
        ptr_update_rms=_optional_positive(raw.get("ptr_update_rms", 1e-3)),
        td_scope=str(raw.get("td_scope", "q_only")),
        sup_policy=str(raw.get("sup_policy", "tempered")),
        init_scale=float(raw.get("init_scale", 0.08)),
        eval_workers=int(raw.get("eval_workers", 1)),
        seed=seed,
    ).validate()


def _experiment(name: str, raw: dict) -> ExperimentKind:
    window = bounds = None
    if "perturb_first" in raw:
        window = (int(raw["perturb_first"]), int(raw["perturb_last"]))
        bounds = (float(raw.get("perturb_alpha", 0.9)), float(raw.get("perturb_beta", 1.1)))
    return ExperimentKind(
        name=name,
        n=int(raw["n"]),
        instances=int(raw.get("instances", 5)),
        epochs=int(raw.get("epochs", 30)),
        steps=int(raw.get("steps", 100)),
        benchmark=str(raw.get("benchmark", "two_opt")),
        perturb_window=window,
        perturb_bounds=bounds,
    )


def load_config(path: Path = _CONFIG_PATH) -> _Config:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing config at {path}")
    raw = tomllib.loads(path.read_text())

    seeds = raw.get("seeds", {})
    paths = raw.get("paths", {})
    return _Config(
        training=_training(raw.get("training", {})),
        experiments={name: _experiment(name, body) for name, body in raw.get("experiments", {}).items()},
        seeds=SeedBases(
            train=int(seeds.get("train", 1000)),
            eval=int(seeds.get("eval", 2000)),
            test=int(seeds.get("test", 3000)),
            span=int(seeds.get("span", 1000)),
        ),
        out_dir=Path(paths.get("out_dir", "runs")),
        log_dir=str(paths.get("log_dir", "logs")),
    )


config = load_config()
