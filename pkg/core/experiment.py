"""Experiment artifacts: instance files, checkpoints, history CSVs and reports.

Every writer here is deterministic: JSON keys are emitted in a fixed order and
floats use Python's shortest round-trip repr, so the same run produces the
same bytes and a file read back reproduces the exact values written.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.baselines import BENCHMARK_METHODS, HELD_KARP_MAX_N
from core.pointer_model import ModelParams
from core.trainer import MethodResult, TrainConfig, TrainingHistory
from core.tsp import Tour, TspInstance, ensure_valid, tour_cost

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "J_mean", "entropy_mean", "Q_mean", "td_loss", "sup_loss", "sigma_B"]
POLICY_COLUMNS = ["epoch", "kl_mean", "q_sharpening", "td_updates", "episodes", "steps", "perturbed"]
REPORT_SERIES = ("J_mean", "sigma_B", "kl_mean", "q_sharpening")
STEP_COLUMNS = ["step", "epoch", "reward", "entropy", "q_mean", "q_sharpening", "td_loss"]
REPORT_TOLERANCE = 1e-9
SPLITS = ("train", "eval", "test")


class InstanceFileError(ValueError):
    """Raised when an instance file is malformed; the message names the field."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or incomplete."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    n: int
    seeds: Dict[str, Tuple[int, ...]]
    train: TrainConfig
    out_dir: Path
    benchmark: str = "two_opt"
    perturb_window: Optional[Tuple[int, int]] = None
    perturb_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.benchmark not in BENCHMARK_METHODS:
            raise ValueError(f"benchmark must be one of {BENCHMARK_METHODS}, got {self.benchmark!r}")
        if self.benchmark == "held_karp" and self.n > HELD_KARP_MAX_N:
            raise ValueError(f"held_karp benchmark needs n <= {HELD_KARP_MAX_N}, got n={self.n}")
        used: set = set()
        for split, seeds in self.seeds.items():
            overlap = used.intersection(seeds)
            if overlap:
                raise ValueError(f"{split} seeds overlap another split: {sorted(overlap)}")
            used.update(seeds)
        self.train.validate(self.n)

    def echo(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "seeds": {k: list(v) for k, v in self.seeds.items()},
            "benchmark": self.benchmark,
            "perturb_window": list(self.perturb_window) if self.perturb_window else None,
            "perturb_bounds": list(self.perturb_bounds) if self.perturb_bounds else None,
            "train": asdict(self.train),
        }


def seed_splits(bases: Dict[str, int], count: int, span: int) -> Dict[str, Tuple[int, ...]]:
    """Consecutive seeds from each base; bases closer than `span` would collide."""
    if count > span:
        raise ValueError(f"{count} instances per split exceed the seed span {span}")
    ordered = sorted(bases.values())
    for a, b in zip(ordered, ordered[1:]):
        if b - a < span:
            raise ValueError(f"seed bases {a} and {b} are closer than the span {span}")
    return {split: tuple(base + i for i in range(count)) for split, base in bases.items()}


@dataclass
class ExperimentReport:
    methods: Dict[str, MethodResult]
    histories: Dict[str, TrainingHistory] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def check(self, instances: Sequence[TspInstance]) -> None:
        """Every stored tour is valid and its J matches the recomputed cost."""
        for name, result in self.methods.items():
            for inst, tour, cost in zip(instances, result.tours, result.costs):
                ensure_valid(inst, tour)
                if abs(tour_cost(inst, tour) - cost) > REPORT_TOLERANCE:
                    raise ValueError(f"{name}: stored J {cost} disagrees with tour cost {tour_cost(inst, tour)}")

    def table(self) -> pd.DataFrame:
        """Rows J and sigma_B, one column per method."""
        cols = [m for m in ("pqn", "ptrnet", "benchmark") if m in self.methods]
        return pd.DataFrame(
            {m: [self.methods[m].J_mean, self.methods[m].sigma_mean] for m in cols},
            index=pd.Index(["J", "sigma_B"], name="metric"),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "methods": {name: r.to_dict() for name, r in self.methods.items()},
            "history": {name: {col: h.series(col) for col in REPORT_SERIES} for name, h in self.histories.items()},
        }


# ---------- instance files ----------

def _instance_payload(instance: TspInstance) -> dict:
    payload = {"n": instance.n}
    if instance.coords is not None:
        payload["coords"] = instance.coords.tolist()
    payload["costs"] = instance.costs.tolist()
    if instance.seed is not None:
        payload["seed"] = instance.seed
    return payload


def write_instance_file(path, instance: TspInstance) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_instance_payload(instance)))
    return path


def _instance_from_payload(raw, where: str) -> TspInstance:
    if not isinstance(raw, dict):
        raise InstanceFileError(f"{where}: expected a JSON object")
    for key in ("n", "costs"):
        if key not in raw:
            raise InstanceFileError(f"{where}: missing field '{key}'")
    try:
        costs = np.asarray(raw["costs"], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InstanceFileError(f"{where}: field 'costs' is not a numeric matrix ({e})") from None
    if costs.ndim != 2 or costs.shape[0] != raw["n"]:
        raise InstanceFileError(f"{where}: field 'costs' has shape {costs.shape}, expected n={raw['n']}")
    coords = None
    if raw.get("coords") is not None:
        try:
            coords = np.asarray(raw["coords"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise InstanceFileError(f"{where}: field 'coords' is not numeric ({e})") from None
    try:
        return TspInstance(costs=costs, coords=coords, seed=raw.get("seed"))
    except ValueError as e:
        raise InstanceFileError(f"{where}: invalid instance: {e}") from None


def read_instance_file(path) -> TspInstance:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InstanceFileError(f"{path}: not valid JSON ({e})") from None
    return _instance_from_payload(raw, str(path))


def instance_path(out_dir, split: str, seed: int) -> Path:
    return Path(out_dir) / "instances" / f"{split}_{seed}.json"


def read_split(out_dir, split: str) -> List[TspInstance]:
    """All instances of a split, ordered by seed."""
    folder = Path(out_dir) / "instances"
    files = sorted(folder.glob(f"{split}_*.json"), key=lambda p: int(p.stem.split("_")[-1]))
    if not files:
        raise FileNotFoundError(f"no {split} instances under {folder}")
    return [read_instance_file(p) for p in files]


# ---------- checkpoints ----------

def _encode_arrays(arrays: Dict[str, np.ndarray]) -> dict:
    return {name: {"shape": list(a.shape), "values": a.ravel().tolist()} for name, a in arrays.items()}


def _decode_arrays(raw: dict, where: str) -> Dict[str, np.ndarray]:
    out = {}
    for name, body in raw.items():
        try:
            shape = tuple(int(s) for s in body["shape"])
            values = np.asarray(body["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{where}: parameter '{name}' unreadable ({e})") from None
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{where}: parameter '{name}' has {values.size} values for shape {shape}")
        out[name] = values.reshape(shape)
    return out


def write_checkpoint(path, params: ModelParams, method: str, config: Optional[TrainConfig] = None) -> Path:
    """JSON map name -> shape + row-major values, plus the target Q copy when present."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "method": method,
        "hidden": params.hidden,
        "q_hidden": params.q_hidden,
        "params": _encode_arrays(params.snapshot()),
        "target": _encode_arrays(params.target_arrays) if params.target_arrays else None,
        "config": asdict(config) if config is not None else None,
    }
    path.write_text(json.dumps(payload))
    logger.info(f"checkpoint written: {path}")
    return path


@dataclass
class Checkpoint:
    params: ModelParams
    method: str
    config: Optional[TrainConfig] = None


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not valid JSON ({e})") from None
    if "params" not in raw:
        raise CheckpointError(f"{path}: missing field 'params'")
    try:
        params = ModelParams.from_arrays(_decode_arrays(raw["params"], str(path)))
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from None
    if raw.get("target"):
        params.target_arrays = _decode_arrays(raw["target"], str(path))
    config = None
    if raw.get("config"):
        try:
            config = TrainConfig(**raw["config"])
        except TypeError as e:
            raise CheckpointError(f"{path}: training config does not match this version ({e})") from None
    return Checkpoint(params=params, method=str(raw.get("method", "pqn")), config=config)


# ---------- series ----------

def emit_history_csv(history: TrainingHistory, path) -> Path:
    """One row per epoch with the fixed column set."""
    if not history.records:
        raise ValueError("cannot emit an empty history")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.epoch_frame()[HISTORY_COLUMNS].to_csv(path, index=False, float_format="%.17g")
    return path


def emit_step_csv(history: TrainingHistory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = history.step_frame()
    if frame.empty:
        frame = pd.DataFrame(columns=STEP_COLUMNS)
    frame[STEP_COLUMNS].to_csv(path, index=False, float_format="%.17g")
    return path


def emit_policy_csv(history: TrainingHistory, path) -> Path:
    """Per-epoch policy diagnostics: KL to the untempered pointer, Q sharpening, update counts."""
    if not history.records:
        raise ValueError("cannot emit an empty history")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.epoch_frame()[POLICY_COLUMNS].to_csv(path, index=False, float_format="%.17g")
    return path


def read_history_csv(path, columns: Sequence[str] = tuple(HISTORY_COLUMNS)) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing history columns {missing}")
    return frame


# ---------- reports ----------

def write_report(report: ExperimentReport, out_dir, json_name: str = "report.json",
                 table_name: str = "table.csv") -> Tuple[Path, Path]:
    """Report JSON plus the J / sigma_B table (one column per method)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / json_name
    json_path.write_text(json.dumps(report.to_dict(), indent=2))
    table_path = out / table_name
    report.table().to_csv(table_path, float_format="%.17g")
    logger.info(f"report written: {json_path}, {table_path}")
    return json_path, table_path


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def report_tours(raw: dict, method: str) -> List[Tour]:
    return [Tour(tuple(row["tour"])) for row in raw["methods"][method]["per_instance"]]
