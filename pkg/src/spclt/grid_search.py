"""Staged hyperparameter search that picks, per method, the config with the lowest validation L_CLT.

A plan is an ordered list of stages. Each stage names a method and marks every
searchable parameter as tuned (sweep its space), inherited (copy the winner of
an earlier stage) or default. Stages run in order because inheritance needs
earlier winners; candidates within a stage are independent and may run in
parallel processes.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset
from .encoder import EncoderConfig
from .errors import ConfigurationError, NumericError
from .trainer import METHODS, LossConfig, method_config, split_validation, train

log = logging.getLogger(__name__)

SPACE: dict[str, list] = {
    "batch_size": [8, 16, 32],
    "lr_eta": [0.01, 0.05],
    "h": [0.25, 1.0, 9.0, 25.0, 49.0],
    "tau_temp": [0.5, 1.0, 1.5, 2.0, 2.5],
    "m_mode": ["constant", "linear", "exponential"],
    "tau_inst": [1.0, 3.0, 5.0, 10.0, 20.0],
}
DEFAULTS: dict[str, object] = {
    "batch_size": 8,
    "lr_eta": 0.05,
    "h": 1.0,
    "tau_temp": 0.0,
    "m_mode": "constant",
    "tau_inst": 0.0,
}
MAX_RUNS = 63


@dataclass(frozen=True)
class Stage:
    name: str
    method: str
    tuned: tuple[str, ...] = ()
    inherit: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "method": self.method, "tuned": list(self.tuned), "inherit": dict(self.inherit)}


@dataclass
class Plan:
    stages: list[Stage]
    space: dict[str, list] = field(default_factory=lambda: {k: list(v) for k, v in SPACE.items()})
    defaults: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))
    iterations: int | None = None
    lr: float = 0.001
    seed: int = 0
    encoder: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen: set[str] = set()
        for st in self.stages:
            if st.method not in METHODS:
                raise ConfigurationError(f"stage {st.name!r}: unknown method {st.method!r}")
            if st.name in seen:
                raise ConfigurationError(f"duplicate stage name {st.name!r}")
            for p in st.tuned:
                if p not in self.defaults:
                    raise ConfigurationError(f"stage {st.name!r}: unknown parameter {p!r}")
                if not self.space.get(p):
                    raise ConfigurationError(f"stage {st.name!r}: empty search space for {p!r}")
            for p, src in st.inherit.items():
                if p not in self.defaults:
                    raise ConfigurationError(f"stage {st.name!r}: unknown parameter {p!r}")
                if p in st.tuned:
                    raise ConfigurationError(f"stage {st.name!r}: {p!r} is both tuned and inherited")
                if src not in seen:
                    raise ConfigurationError(f"stage {st.name!r}: inherits {p!r} from unknown or later stage {src!r}")
            seen.add(st.name)
        if self.iterations is not None and self.iterations < 1:
            raise ConfigurationError("iterations must be positive")

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "space": self.space,
            "defaults": self.defaults,
            "iterations": self.iterations,
            "lr": self.lr,
            "seed": self.seed,
            "encoder": self.encoder,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        for s in d.get("stages", []):
            extra = set(s) - {"name", "method", "tuned", "inherit"} if isinstance(s, dict) else set()
            if extra:
                raise ConfigurationError(f"unknown plan stage keys: {sorted(extra)}")
        try:
            stages = [Stage(s["name"], s["method"], tuple(s.get("tuned", ())), dict(s.get("inherit", {})))
                      for s in d["stages"]]
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed plan stage: {exc}") from None
        space = {k: list(v) for k, v in SPACE.items()}
        space.update({k: list(v) for k, v in d.get("space", {}).items()})
        defaults = dict(DEFAULTS)
        defaults.update(d.get("defaults", {}))
        return cls(stages, space, defaults, d.get("iterations"), float(d.get("lr", 0.001)),
                   int(d.get("seed", 0)), dict(d.get("encoder", {})))


def default_plan(**kwargs) -> Plan:
    """The seven-stage search strategy, in order."""
    ts_bs = {"batch_size": "TS2Vec"}
    soft = {p: "SoftCLT-2" for p in ("batch_size", "tau_temp", "m_mode", "tau_inst")}
    stages = [
        Stage("TS2Vec", "TS2Vec", ("batch_size",)),
        Stage("Topo-TS2Vec", "Topo-TS2Vec", ("lr_eta",), ts_bs),
        Stage("GGeo-TS2Vec", "GGeo-TS2Vec", ("lr_eta", "h"), ts_bs),
        Stage("SoftCLT-1", "SoftCLT", ("tau_temp", "m_mode")),
        Stage("SoftCLT-2", "SoftCLT", ("batch_size", "tau_inst"), {"tau_temp": "SoftCLT-1", "m_mode": "SoftCLT-1"}),
        Stage("Topo-SoftCLT", "Topo-SoftCLT", ("lr_eta",), soft),
        Stage("GGeo-SoftCLT", "GGeo-SoftCLT", ("lr_eta", "h"), soft),
    ]
    return Plan(stages, **kwargs)


def load_plan(path: str | Path) -> Plan:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"plan {path} is not valid JSON: {exc}") from None
    return Plan.from_dict(d)


def _values(plan: Plan, param: str, train_size: int | None) -> list:
    vals = plan.space[param]
    if param == "batch_size" and train_size is not None:
        capped = [min(int(v), train_size) for v in vals]
        vals = list(dict.fromkeys(capped))
    return vals


def expand_stage(plan: Plan, stage: Stage, winners: dict[str, dict], train_size: int | None = None) -> list[dict]:
    """Every parameter assignment the stage will try, in sweep order."""
    base = dict(plan.defaults)
    if train_size is not None:
        base["batch_size"] = min(int(base["batch_size"]), train_size)
    for p, src in stage.inherit.items():
        base[p] = winners[src][p] if src in winners else base[p]
    grids = [_values(plan, p, train_size) for p in stage.tuned]
    out = []
    for combo in itertools.product(*grids):
        params = dict(base)
        params.update(zip(stage.tuned, combo))
        out.append(params)
    return out


def count_runs(plan: Plan, train_size: int | None = None) -> dict[str, int]:
    """Runs per stage; inherited values do not change the count."""
    return {st.name: len(expand_stage(plan, st, {}, train_size)) for st in plan.stages}


def iteration_budget(n_train: int) -> int:
    return max(200, 2 * n_train)


def candidate_config(method: str, params: dict, plan: Plan, iterations: int) -> LossConfig:
    return method_config(
        method,
        batch_size=int(params["batch_size"]),
        lr_eta=float(params["lr_eta"]),
        h=float(params["h"]),
        tau_temp=float(params["tau_temp"]),
        m_mode=str(params["m_mode"]),
        tau_inst=float(params["tau_inst"]),
        lr=plan.lr,
        max_iters=iterations,
        max_epochs=iterations,
        schedule=False,
        seed=plan.seed,
    )


def _score(args) -> tuple[float, str]:
    tr, val, enc_cfg, cfg = args
    try:
        _, _, hist = train(tr, enc_cfg, cfg, val=val)
    except NumericError as exc:
        return math.inf, f"numeric: {exc}"
    return float(hist.val[-1]["val_l_clt"]), "ok"


@dataclass
class GridResult:
    runs: list[dict]
    winners: dict[str, dict]
    best: dict[str, LossConfig]
    scores: dict[str, float]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        keys = ["stage", "method", "index", *DEFAULTS, "val_l_clt", "status"]
        with open(out / "runs.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in self.runs:
                w.writerow({k: r.get(k) for k in keys})
        best = {m: cfg.to_dict() | {"val_l_clt": self.scores[m]} for m, cfg in self.best.items()}
        (out / "best_configs.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")


def grid_search(ds: Dataset, plan: Plan | None = None, jobs: int = 1,
                enc_cfg: EncoderConfig | None = None) -> GridResult:
    """Run the plan on ``ds``; the best config per method comes from its last stage.

    Every candidate trains for the same iteration budget at a constant
    learning rate and is scored by L_CLT on a fixed internal validation split.
    """
    plan = plan or default_plan()
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    tr, val = split_validation(ds, plan.seed)
    n_train = tr.shape[0]
    iters = plan.iterations or iteration_budget(n_train)
    if enc_cfg is None:
        enc_cfg = EncoderConfig(input_dim=ds.shape[2], **plan.encoder)
    total = sum(count_runs(plan, n_train).values())
    if total > MAX_RUNS:
        log.warning("plan expands to %d runs, above the %d-run budget", total, MAX_RUNS)

    winners: dict[str, dict] = {}
    best: dict[str, LossConfig] = {}
    scores: dict[str, float] = {}
    runs: list[dict] = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for st in plan.stages:
            cands = expand_stage(plan, st, winners, n_train)
            cfgs = [candidate_config(st.method, p, plan, iters) for p in cands]
            work = [(tr, val, enc_cfg, c) for c in cfgs]
            results = list(pool.map(_score, work)) if pool else [_score(w) for w in work]
            vals = np.array([s for s, _ in results])
            for i, (p, (s, status)) in enumerate(zip(cands, results)):
                runs.append({"stage": st.name, "method": st.method, "index": i, **p,
                             "val_l_clt": s, "status": status})
            if not np.isfinite(vals).any():
                raise NumericError(f"every candidate in stage {st.name!r} diverged")
            k = int(np.argmin(vals))  # first minimum wins ties
            winners[st.name] = cands[k]
            best[st.method] = cfgs[k]
            scores[st.method] = float(vals[k])
            log.info("stage %s: %d runs, best val L_CLT %.4f with %s", st.name, len(cands), vals[k], cands[k])
    finally:
        if pool:
            pool.shutdown()
    return GridResult(runs, winners, best, scores)
