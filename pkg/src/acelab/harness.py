"""Seed sweeps over the SAC / CausalSAC / SAC+reset / ACE lattice, with CSV
and JSONL persistence, multi-seed aggregation and SVG plots."""

from __future__ import annotations

import csv
import json
import os
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .agent import VARIANTS, AgentConfig, train
from .envs import make_env
from .errors import AceError, AlignmentError, ConfigError, InputError

OUT_ENV_VAR = "ACE_OUT_DIR"
METRIC_FIELDS = ["step", "seed", "return", "success", "alpha", "dormancy", "reset_eta"]
SUMMARY_STATS = ("mean", "std", "min", "max")
SUMMARY_METRICS = ("return", "success", "dormancy")


@dataclass
class RunConfig:
    name: str = "run"
    env: str = "ChainReach-4D"
    reward_mode: str = "dense"
    env_kwargs: Dict = field(default_factory=dict)
    variant: str = "ace"
    agent: Dict = field(default_factory=dict)
    total_steps: int = 10000
    eval_interval: int = 1000
    eval_episodes: int = 10
    seeds: List[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"
    stop_at_first_success: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if self.eval_interval < 1 or self.total_steps < self.eval_interval:
            raise ConfigError("need total_steps >= eval_interval >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be at least 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        allowed = AgentConfig.field_names() - {"use_causal_entropy", "use_reset"}
        unknown = set(self.agent) - allowed
        if unknown:
            raise ConfigError(f"unknown agent settings {sorted(unknown)} (ablation switches come from 'variant')")
        self.agent_config()  # validates values
        make_env(self.env, self.reward_mode, **self.env_kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def agent_config(self) -> AgentConfig:
        return AgentConfig.for_variant(self.variant, **self.agent)

    def run_dir(self) -> Path:
        return Path(os.environ.get(OUT_ENV_VAR) or self.out_dir) / self.name


@dataclass
class RunArtifacts:
    run_dir: Path
    metrics: Path
    events: Path
    weights: Path
    summary: Path
    checkpoints: List[Path]
    first_success: Dict[int, Optional[int]]
    crash_report: Optional[Path] = None

    def paths(self) -> List[Path]:
        return [self.metrics, self.events, self.weights, self.summary, *self.checkpoints]


class RunFailed(AceError):
    def __init__(self, message, artifacts: RunArtifacts):
        super().__init__(message)
        self.artifacts = artifacts


# ------------------------------------------------------------------ writing


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_jsonl(path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def metric_header(action_dim: int) -> List[str]:
    return METRIC_FIELDS + [f"w_{i}" for i in range(action_dim)]


def weight_header(action_dim: int) -> List[str]:
    return ["step", "seed", "majority_stage", "flagged"] + [f"w_{i}" for i in range(action_dim)]


def run_experiment(config: RunConfig) -> RunArtifacts:
    """Train every seed and write metrics, events, weight trace, checkpoints and summary.

    On failure the artifacts collected so far are written together with
    ``crash.json`` and :class:`RunFailed` is raised.
    """
    out = config.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    action_dim = make_env(config.env, config.reward_mode, **config.env_kwargs).spec.action_dim
    artifacts = RunArtifacts(out, out / "metrics.csv", out / "events.jsonl", out / "weights.csv",
                             out / "summary.csv", [], {})
    metrics, events, trace = [], [], []

    def flush():
        write_csv(artifacts.metrics, metric_header(action_dim), metrics)
        write_jsonl(artifacts.events, events)
        write_csv(artifacts.weights, weight_header(action_dim), trace)

    for seed in config.seeds:
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        env = make_env(config.env, config.reward_mode, **config.env_kwargs)
        eval_env = make_env(config.env, config.reward_mode, **config.env_kwargs)
        try:
            agent, log = train(config.agent_config(), env, config.total_steps, seed, eval_env,
                               config.eval_interval, config.eval_episodes, config.stop_at_first_success)
        except Exception as exc:
            flush()
            artifacts.crash_report = out / "crash.json"
            with open(artifacts.crash_report, "w") as fh:
                json.dump({"seed": seed, "error": type(exc).__name__, "message": str(exc),
                           "traceback": traceback.format_exc(), "config": config.to_dict()}, fh, indent=2)
            raise RunFailed(f"seed {seed} failed: {exc}", artifacts) from exc
        seed_events = [{"seed": seed, **e} for e in log.events]
        seed_trace = [{"seed": seed, **row} for row in log.weight_trace]
        write_csv(seed_dir / "metrics.csv", metric_header(action_dim), log.metrics)
        write_jsonl(seed_dir / "events.jsonl", seed_events)
        write_csv(seed_dir / "weights.csv", weight_header(action_dim), seed_trace)
        ckpt = seed_dir / "checkpoint.npz"
        agent.save(ckpt)
        artifacts.checkpoints.append(ckpt)
        artifacts.first_success[seed] = log.first_success_step
        metrics += log.metrics
        events += seed_events
        trace += seed_trace

    flush()
    if metrics:
        write_csv(artifacts.summary, summary_header(), aggregate(split_by_seed(metrics)))
    else:
        write_csv(artifacts.summary, summary_header(), [])
    write_csv(out / "first_success.csv", ["seed", "first_success_step"],
              [{"seed": s, "first_success_step": -1 if v is None else v}
               for s, v in artifacts.first_success.items()])
    return artifacts


# -------------------------------------------------------------- aggregation


def summary_header() -> List[str]:
    return ["step", "n_seeds"] + [f"{m}_{s}" for m in SUMMARY_METRICS for s in SUMMARY_STATS]


def split_by_seed(rows: Sequence[dict]) -> List[List[dict]]:
    by_seed: Dict[float, List[dict]] = {}
    for row in rows:
        by_seed.setdefault(row["seed"], []).append(row)
    return [by_seed[s] for s in sorted(by_seed)]


def aggregate(runs: Sequence[Union[Sequence[dict], str, Path]]) -> List[dict]:
    """Per-step mean, sample std (n-1), min and max across runs.

    Each run is a list of metric rows (or a metrics CSV path holding one or
    more seeds). Runs must share the exact evaluation grid.
    """
    tables: List[List[dict]] = []
    for run in runs:
        if isinstance(run, (str, Path)):
            tables += split_by_seed(read_csv(run))
        else:
            tables.append(list(run))
    if not tables:
        raise InputError("nothing to aggregate")
    grid = [row["step"] for row in tables[0]]
    for t in tables[1:]:
        if [row["step"] for row in t] != grid:
            raise AlignmentError("evaluation steps differ between runs; refusing to interpolate")
    summary = []
    for i, step in enumerate(grid):
        out = {"step": int(step), "n_seeds": len(tables)}
        for m in SUMMARY_METRICS:
            vals = np.array([float(t[i][m]) for t in tables])
            out[f"{m}_mean"] = float(vals.mean())
            out[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out[f"{m}_min"] = float(vals.min())
            out[f"{m}_max"] = float(vals.max())
        summary.append(out)
    return summary


# -------------------------------------------------------------------- plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "acelab"
    return plt


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def _band_plot(plt, steps, mean, std, ylabel, title, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(steps) == 1:
        ax.plot(steps, mean, "o", color="C0")
    else:
        ax.plot(steps, mean, color="C0")
        ax.fill_between(steps, mean - std, mean + std, color="C0", alpha=0.25, linewidth=0)
    ax.set_xlabel("environment step")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def emit_plots(summary: Sequence[dict], out_dir, weight_trace: Optional[Sequence[dict]] = None) -> List[Path]:
    """Learning curve, success curve and dormancy trace with +-1 std bands,
    plus one curve per action dimension for the causal-weight trace."""
    if not summary:
        raise InputError("empty summary")
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = np.array([float(r["step"]) for r in summary])
    written = []
    for metric, label in (("return", "evaluation return"), ("success", "success rate"),
                          ("dormancy", "gradient dormancy degree")):
        mean = np.array([float(r[f"{metric}_mean"]) for r in summary])
        std = np.array([float(r[f"{metric}_std"]) for r in summary])
        path = out / f"{metric}.svg"
        _band_plot(plt, steps, mean, std, label, f"{label} (mean +- 1 std)", path)
        written.append(path)
    if weight_trace:
        dims = sorted(k for k in weight_trace[0] if k.startswith("w_"))
        seeds = sorted({r.get("seed", 0) for r in weight_trace})
        fig, ax = plt.subplots(figsize=(6, 4))
        for j, d in enumerate(dims):
            for k, s in enumerate(seeds):
                rows = [r for r in weight_trace if r.get("seed", 0) == s]
                ax.plot([float(r["step"]) for r in rows], [float(r[d]) for r in rows], marker=".",
                        color=f"C{j}", alpha=1.0 if len(seeds) == 1 else 0.5, label=d if k == 0 else None)
        ax.set_xlabel("environment step (weight refresh)")
        ax.set_ylabel("normalised causal weight")
        ax.set_title("causal weight per action dimension")
        ax.legend()
        fig.tight_layout()
        path = out / "weights.svg"
        _save(fig, path)
        plt.close(fig)
        written.append(path)
    return written

