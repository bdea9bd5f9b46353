"""Experiment runner: configuration, per-seed training, evaluation and persistence.

Output layout under ``out``:

* ``seed_<N>.csv``   evaluation curve, header ``step,mean_return,stderr,status``
  (linear policy-evaluation runs use ``step,msve,msbe,mspbe,w_norm,status``)
* ``diag_seed_<N>.csv``  per-learning-step diagnostics when ``verbose`` is set
* ``summary.json``   cross-seed summary, written after all seeds finish
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .agents import DdpgAgent, DdpgConfig, NonFiniteError, Transition, act, train_step
from .envs import make_env, random_chain, star_counterexample
from .linear import LearnerConfig, run_policy_evaluation
from .metrics import EvalRecord, summarize, write_eval_csv
from .model_based import (
    LearnedModel, OracleModel, PlanningConfig, dyna_train_step, model_rmse, mve_train_step,
)
from .objectives import LinearObjectives, SingularMatrixError
from .mdp import induced_dynamics, stationary_distribution
from .seeding import streams

log = logging.getLogger(__name__)

KINDS = ("policy_eval", "model_free", "model_based")
LINEAR_ENVS = ("star", "random_chain")
DEFAULT_ETA = {"bi_res": 0.05}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    kind: str = "model_free"
    env: str = "pendulum"
    seeds: tuple = (0, 1, 2, 3, 4)
    steps: int = 30_000
    eval_interval: int = 1000
    eval_episodes: int = 10
    out: str = "results"
    time_limit: float = 0.0
    workers: int = 1
    verbose: bool = False
    # agent
    variant: str = "vanilla"
    eta: Optional[float] = None
    gamma: float = 0.99
    tau: float = 1e-3
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 64
    warmup: int = 1000
    buffer_capacity: int = 10**6
    hidden: tuple = (64, 64)
    noise: str = "gaussian"
    noise_sigma: float = 0.2
    # planning
    planner: str = "dyna"
    model: str = "learned"
    planning_steps: int = 1
    plan_sigma: float = 0.1
    plan_eta: float = 0.2
    update_kind: str = "residual"
    unroll_k: int = 3
    stabilized: bool = True
    huber: bool = True
    fit_steps: int = 1
    # linear policy evaluation
    learner: str = "semi_gradient"
    alpha: float = 0.01
    log_interval: int = 100
    chain_states: int = 5
    chain_seed: int = 0

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if self.kind not in KINDS:
            bad("kind", f"must be one of {KINDS}, got {self.kind!r}")
        if not self.seeds:
            bad("seeds", "at least one seed is required")
        for name in ("steps", "eval_interval", "eval_episodes", "log_interval", "workers", "batch_size"):
            if getattr(self, name) <= 0:
                bad(name, "must be positive")
        if self.kind == "policy_eval":
            if self.env not in LINEAR_ENVS:
                bad("env", f"policy evaluation needs one of {LINEAR_ENVS}, got {self.env!r}")
            try:
                LearnerConfig(self.alpha, self.resolved_eta(), self.learner)
            except ValueError as exc:
                bad("learner", str(exc))
            return
        try:
            make_env(self.env)
        except ValueError as exc:
            bad("env", str(exc))
        try:
            self.agent_config()
        except ValueError as exc:
            bad("variant", str(exc))
        if self.kind == "model_based":
            if self.model not in ("oracle", "learned"):
                bad("model", f"must be oracle or learned, got {self.model!r}")
            try:
                self.planning_config()
            except ValueError as exc:
                bad("planner", str(exc))

    def resolved_eta(self) -> float:
        if self.eta is not None:
            return float(self.eta)
        return DEFAULT_ETA.get(self.variant, 0.0)

    def agent_config(self) -> DdpgConfig:
        return DdpgConfig(
            variant=self.variant, eta=self.resolved_eta(), gamma=self.gamma, tau=self.tau,
            actor_lr=self.actor_lr, critic_lr=self.critic_lr, batch_size=self.batch_size,
            warmup=self.warmup, buffer_capacity=min(self.buffer_capacity, self.steps),
            critic_hidden=self.hidden, actor_hidden=self.hidden,
            noise=self.noise, noise_sigma=self.noise_sigma,
        )

    def planning_config(self) -> PlanningConfig:
        return PlanningConfig(
            planning_steps=self.planning_steps, noise_sigma=self.plan_sigma, eta=self.plan_eta,
            update_kind=self.update_kind, unroll_k=self.unroll_k, method=self.planner,
            stabilized=self.stabilized, use_huber=self.huber, fit_steps=self.fit_steps,
            fit_batch_size=self.batch_size,
        )


FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_value(name: str, text: str):
    """Convert a config-file or CLI string into the type of field ``name``."""
    if name not in FIELD_TYPES:
        raise ConfigError(f"{name}: unknown configuration key")
    default = FIELD_TYPES[name].default
    text = text.strip()
    try:
        if name in ("seeds", "hidden"):
            return tuple(int(t) for t in text.replace(" ", "").split(",") if t)
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if name == "eta":
            return None if text.lower() in ("", "none", "default") else float(text)
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines grouped under ``[section]`` headers."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, text in parser.items(section):
            values[key.replace("-", "_")] = parse_value(key.replace("-", "_"), text)
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values = dict(file_values or {})
    values.update(overrides or {})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from None


# -- model-free / model-based runs -----------------------------------------------

@dataclass
class SeedResult:
    seed: int
    status: str
    records: list = field(default_factory=list)

    @property
    def curve(self):
        return [(r.step, r.mean_return) for r in self.records]


def evaluate(agent: DdpgAgent, env, starts: np.ndarray) -> list:
    """Deterministic episodes from fixed start states, run as one batch.

    Uses only the environment's pure dynamics: no buffer writes, no random
    draws, no change to any training environment.
    """
    states = np.array(starts, dtype=np.float64)
    returns = np.zeros(states.shape[0])
    for _ in range(env.horizon):
        actions = np.clip(agent.policy(states), agent.action_low, agent.action_high)
        rewards, states = env.transition(states, actions)
        returns += rewards
    return returns.tolist()


def _make_model(cfg: ExperimentConfig, env, rngs):
    if cfg.model == "oracle":
        return OracleModel(env)
    return LearnedModel(env.state_dim, env.action_dim, rngs["model"], hidden=cfg.hidden)


class _Diagnostics:
    HEADER = ("step", "critic_delta", "critic_grad_norm", "actor_grad_norm",
              "plan_delta", "model_loss", "model_rmse")

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.out = csv.writer(self.fh, lineterminator="\n")
        self.out.writerow(self.HEADER)

    def write(self, step, info, rmse=None):
        def f(x):
            return "" if x is None else repr(float(x))

        critic_delta = grad_norm = actor_norm = None
        if info.critic is not None:
            critic_delta = np.mean(np.abs(info.critic.delta_backward))
            grad_norm = np.linalg.norm(info.critic.direction)
        if info.actor_grad is not None:
            actor_norm = np.linalg.norm(info.actor_grad)
        self.out.writerow([step, f(critic_delta), f(grad_norm), f(actor_norm),
                           f(info.extra.get("plan_delta")), f(info.extra.get("model_loss")), f(rmse)])

    def close(self):
        self.fh.close()


def run_control_seed(cfg: ExperimentConfig, seed: int, out_dir: Optional[Path] = None,
                     deadline: Optional[float] = None) -> SeedResult:
    rngs = streams(seed)
    env = make_env(cfg.env, rngs["env-train"])
    eval_env = make_env(cfg.env)
    starts = np.array([eval_env.initial_state(rngs["env-eval"]) for _ in range(cfg.eval_episodes)])
    agent = DdpgAgent(env.state_dim, env.action_dim, env.action_low, env.action_high,
                      cfg.agent_config(), rngs)
    model = plan_cfg = None
    if cfg.kind == "model_based":
        model, plan_cfg = _make_model(cfg, env, rngs), cfg.planning_config()
    diag = _Diagnostics(out_dir / f"diag_seed_{seed}.csv") if (cfg.verbose and out_dir) else None

    t0 = time.perf_counter()
    result = SeedResult(seed, "OK")
    result.records.append(EvalRecord(0, evaluate(agent, eval_env, starts), 0.0))
    s = env.reset()
    try:
        for step in range(1, cfg.steps + 1):
            a = act(agent, s, explore=True)
            s_next, r, terminal, truncated = env.step(a)
            transition = Transition(s, a, r, s_next, terminal)
            if model is None:
                info = train_step(agent, transition)
            elif plan_cfg.method == "dyna":
                info = dyna_train_step(agent, transition, model, plan_cfg, rngs["planning"])
            else:
                info = mve_train_step(agent, transition, model, plan_cfg)
            if terminal or truncated:
                s = env.reset()
                agent.noise.reset()
            else:
                s = s_next
            if diag is not None and info.learned:
                rmse = None
                if model is not None and model.kind == "learned" and step % cfg.eval_interval == 0:
                    rmse = model_rmse(model, agent.buffer.all())
                diag.write(step, info, rmse)
            if step % cfg.eval_interval == 0:
                result.records.append(
                    EvalRecord(step, evaluate(agent, eval_env, starts), time.perf_counter() - t0))
            if deadline is not None and time.time() > deadline:
                result.status = "TIMEOUT"
                log.warning("seed %d stopped at step %d: time limit reached", seed, step)
                break
    except NonFiniteError as exc:
        log.warning("seed %d diverged at step %d: %s", seed, step, exc)
        result.status = "DIVERGED"
        result.records.append(EvalRecord(step, [float("nan")], time.perf_counter() - t0, "DIVERGED"))
    finally:
        if diag is not None:
            diag.close()
    if result.records[-1].status == "OK":
        result.records[-1].status = result.status
    return result


# -- linear policy evaluation -------------------------------------------------------

def _diagnostic(cfg: ExperimentConfig):
    if cfg.env == "star":
        return star_counterexample()
    return random_chain(cfg.chain_states, cfg.chain_seed)


def run_linear_seed(cfg: ExperimentConfig, seed: int):
    diag = _diagnostic(cfg)
    lc = LearnerConfig(cfg.alpha, cfg.resolved_eta(), cfg.learner)
    return run_policy_evaluation(diag.mdp, diag.target, diag.behavior, diag.features, lc,
                                 cfg.steps, streams(seed)["linear"], w0=diag.initial_weights,
                                 log_interval=cfg.log_interval)


def linear_reference(cfg: ExperimentConfig) -> dict:
    """Closed-form reference values for the configured diagnostic problem."""
    diag = _diagnostic(cfg)
    p_mu, _ = induced_dynamics(diag.mdp, diag.behavior)
    obj = LinearObjectives(diag.mdp, diag.target, diag.features, stationary_distribution(p_mu))
    w_rg = obj.msbe_minimizer()
    ref = {"msbe_min": obj.msbe(w_rg.weights), "msbe_minimizer": w_rg.weights.tolist()}
    try:
        w_td = obj.td_fixed_point()
        ref["td_fixed_point"] = w_td.weights.tolist()
        ref["mspbe_at_td_fixed_point"] = obj.mspbe(w_td.weights)
    except SingularMatrixError:
        ref["td_fixed_point"] = None
    return ref


# -- orchestration -------------------------------------------------------------------

def _run_one(cfg: ExperimentConfig, seed: int, out_dir: Path, deadline):
    if cfg.kind == "policy_eval":
        res = run_linear_seed(cfg, seed)
        res.write_csv(out_dir / f"seed_{seed}.csv")
        return seed, res
    res = run_control_seed(cfg, seed, out_dir, deadline)
    write_eval_csv(out_dir / f"seed_{seed}.csv", res.records)
    return seed, res


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for volatile in ("out", "workers", "time_limit", "verbose"):
        d.pop(volatile)
    d["eta"] = cfg.resolved_eta()
    d["seeds"], d["hidden"] = list(cfg.seeds), list(cfg.hidden)
    return d


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every seed, write per-seed CSVs and ``summary.json``; return the summary."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    deadline = time.time() + cfg.time_limit if cfg.time_limit > 0 else None
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_one, cfg, s, out_dir, deadline) for s in cfg.seeds]
            results = dict(f.result() for f in futures)
    else:
        results = dict(_run_one(cfg, s, out_dir, deadline) for s in cfg.seeds)

    if cfg.kind == "policy_eval":
        summary = {
            "schema_version": 1,
            "seeds": list(cfg.seeds),
            "status": {str(s): r.status for s, r in results.items()},
            "diverged_at": {str(s): r.diverged_at for s, r in results.items()},
            "final": {str(s): {"msve": r.msve[-1], "msbe": r.msbe[-1], "mspbe": r.mspbe[-1]}
                      for s, r in results.items()},
            "reference": linear_reference(cfg),
        }
    else:
        summary = summarize({s: r.curve for s, r in results.items()},
                            {s: r.status for s, r in results.items()})
        summary["per_episode_returns"] = {
            str(s): [rec.returns for rec in r.records] for s, r in results.items()}
    summary["config"] = _config_dict(cfg)
    write_json(out_dir / "summary.json", summary)
    summary["results"] = results
    return summary


def _jsonable(x):
    if isinstance(x, float) and x != x:
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
