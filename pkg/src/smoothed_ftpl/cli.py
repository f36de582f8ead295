"""Experiment driver: strict-JSON configs, seeded runs, sweeps, validators.

Subcommands: run | verify | sweep.  Exit codes: 0 ok, 1 runtime failure,
2 config error.  The environment variable SMOOTHED_FTPL_OUT overrides the
--out flag.  CSV output uses '.' decimals and 17 significant digits so
reruns diff byte-identically (modulo the wall-clock column).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import functools
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import analysis, planning
from .analysis import (
    ConcentrationTrial,
    build_generalized_bracket,
    check_concentration,
    compute_regret,
    fit_regret_exponent,
    verify_bracket,
)
from .core import ParamPoint, ParamSpace
from .ftpl import (
    HyperParams,
    OnlineEnvironment,
    RunRecord,
    run_lazy_ftpl,
    tune_affine,
    tune_margin,
    tune_planning,
    tune_polynomial,
)
from .mcstats import mean_and_se
from .oracle import IncrementalGridSolver, erm_alternating, erm_exact_threshold
from .pwa_env import (
    ArgmaxBoundarySpec,
    PiecewiseLossSpec,
    TournamentBoundarySpec,
    TrackingModeLoss,
    affine_tournament_environment,
    metric_for,
    mode_flip_rate,
    random_unit_pair_blocks,
    threshold_environment,
    threshold_labeler,
)
from .smoothing import (
    AdversaryStrategy,
    SmoothnessClass,
    greedy_smoothed_strategy,
    mean_shift_strategy,
    uniform_box_strategy,
)

ENV_KINDS = ("threshold", "pwa_tournament", "pwa_margin", "polynomial", "planning")
OUT_ENV_VAR = "SMOOTHED_FTPL_OUT"

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["environment", "adversary", "learner", "run", "output"],
    "properties": {
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(ENV_KINDS)},
                "x_lo": {"type": "number"},
                "x_hi": {"type": "number"},
                "theta_star": {"type": "number"},
                "label_flip_prob": {"type": "number", "minimum": 0, "maximum": 0.5},
                "K": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 1},
                "c_dim": {"type": "integer", "minimum": 1},
                "degree_r": {"type": "integer", "minimum": 1},
                "loss_scale": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "margin_gamma": {"type": "number", "exclusiveMinimum": 0},
                "context_bound": {"type": "number", "exclusiveMinimum": 0},
                "sigma_poly": {"type": "number", "exclusiveMinimum": 0},
                "target_seed": {"type": "integer", "minimum": 0},
                "H": {"type": "integer", "minimum": 1},
                "mode_bias": {"type": "number"},
                "noise_width": {"type": "number", "exclusiveMinimum": 0},
                "plan_bound": {"type": "number", "exclusiveMinimum": 0},
                "x1_bound": {"type": "number", "minimum": 0},
                "state_clip": {"type": "number", "exclusiveMinimum": 0},
                "lipschitz_L": {"type": "number", "exclusiveMinimum": 0},
                "loss_weights": {"type": "array", "items": {"type": "number"}},
                "loss_target": {"type": "array", "items": {"type": "number"}},
                "iso_alpha_override": {"type": "number", "minimum": 0},
            },
        },
        "adversary": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["uniform", "mean_shift", "greedy", "noise"]},
                "noise_width": {"type": "number", "exclusiveMinimum": 0},
                "grid_per_dim": {"type": "integer", "minimum": 2},
            },
        },
        "learner": {
            "type": "object",
            "additionalProperties": False,
            "required": ["algorithm"],
            "properties": {
                "algorithm": {"enum": ["lazy_ftpl_expo", "lazy_ftpl_gp"]},
                "tuning": {
                    "enum": ["affine", "polynomial", "planning", "margin", "manual"]
                },
                "eta": {"type": "number", "minimum": 0},
                "n": {"type": "integer", "minimum": 1},
                "gp_anchors": {"type": "integer", "minimum": 1},
                "solver": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["exact_threshold", "grid", "alternating"]},
                        "mesh_per_dim": {"type": "integer", "minimum": 2},
                        "restarts": {"type": "integer", "minimum": 1},
                        "max_iters": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T"],
            "properties": {
                "T": {
                    "anyOf": [
                        {"type": "integer", "minimum": 1},
                        {
                            "type": "array",
                            "items": {"type": "integer", "minimum": 1},
                            "minItems": 1,
                        },
                    ]
                },
                "seeds": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 1,
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["directory"],
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "formats": {
                    "type": "array",
                    "items": {"enum": ["json", "csv", "traj_csv"]},
                },
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {
                    "anyOf": [
                        {"type": "number", "exclusiveMinimum": 0},
                        {
                            "type": "array",
                            "items": {"type": "number", "exclusiveMinimum": 0},
                            "minItems": 1,
                        },
                    ]
                },
                "n": {"type": "integer", "minimum": 0},
                "n_mc": {"type": "integer", "minimum": 1},
                "n_trials": {"type": "integer", "minimum": 1},
                "n_pairs": {"type": "integer", "minimum": 1},
                "pair_spread": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_cells": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON at line {e.lineno} col {e.colno}: {e.msg}")
        return ExperimentConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        if jsonschema is not None:
            try:
                jsonschema.validate(raw, CONFIG_SCHEMA)
            except jsonschema.ValidationError as e:
                path = ".".join(str(p) for p in e.absolute_path) or "<root>"
                raise ConfigError(f"config field {path!r}: {e.message}")
        return ExperimentConfig(raw)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    @property
    def env(self) -> dict:
        return self.raw["environment"]

    @property
    def adversary(self) -> dict:
        return self.raw["adversary"]

    @property
    def learner(self) -> dict:
        return self.raw["learner"]

    @property
    def horizons(self) -> List[int]:
        T = self.raw["run"]["T"]
        return [int(T)] if isinstance(T, int) else [int(t) for t in T]

    def seeds(self, master: Optional[int]) -> List[int]:
        if "seeds" in self.raw["run"]:
            return [int(s) for s in self.raw["run"]["seeds"]]
        if master is None:
            raise ConfigError("run.seeds missing and no --seed given")
        return [
            int(np.random.SeedSequence(entropy=master, spawn_key=(i,)).generate_state(1)[0])
            for i in range(1)
        ]

    @property
    def out_dir(self) -> str:
        return self.raw["output"]["directory"]

    @property
    def formats(self) -> List[str]:
        return self.raw["output"].get("formats", ["json", "csv"])


# ---------------------------------------------------------------------------
# environment construction
# ---------------------------------------------------------------------------


@dataclass
class BuiltEnvironment:
    env: OnlineEnvironment
    make_solver: Callable[[], Callable]  # fresh solver per run (some cache state)
    tuner: Callable[[int], HyperParams]
    battery: Callable[[], List[AdversaryStrategy]]
    bracket_recipe: Optional[str]
    bracket_K: int
    link_a: float
    link_A: float
    system: Optional[planning.HybridSystemSpec] = None
    pwa_spec: Optional[PiecewiseLossSpec] = None


def _threshold_probe(theta_star, flip_prob):
    def probe(theta: np.ndarray, x_grid: np.ndarray) -> np.ndarray:
        pred = np.where(x_grid[:, 0] >= theta[0], 1.0, -1.0)
        truth = np.where(x_grid[:, 0] >= theta_star, 1.0, -1.0)
        return np.where(pred == truth, flip_prob, 1.0 - flip_prob)

    return probe


def _battery_strategies(
    x_lo: np.ndarray,
    x_hi: np.ndarray,
    width: float,
    loss_probe,
    default_theta: np.ndarray,
    labeler=None,
    payload_dim: int = 0,
    grid_per_dim: int = 17,
) -> List[AdversaryStrategy]:
    return [
        uniform_box_strategy(x_lo, x_hi, labeler=labeler, payload_dim=payload_dim),
        mean_shift_strategy(
            x_lo, x_hi, width, labeler=labeler, payload_dim=payload_dim
        ),
        greedy_smoothed_strategy(
            x_lo,
            x_hi,
            width,
            loss_probe,
            default_theta,
            grid_per_dim=grid_per_dim,
            labeler=labeler,
            payload_dim=payload_dim,
        ),
    ]


def build_environment(cfg: ExperimentConfig) -> BuiltEnvironment:
    kind = cfg.env["kind"]
    adv_cfg = cfg.adversary
    learner = cfg.learner
    if kind == "threshold":
        return _build_threshold(cfg, adv_cfg, learner)
    if kind in ("pwa_tournament", "pwa_margin", "polynomial"):
        return _build_pwa(cfg, adv_cfg, learner, kind)
    if kind == "planning":
        return _build_planning(cfg, adv_cfg, learner)
    raise ConfigError(f"unknown environment kind {kind!r}")


def _solver_from_cfg(learner: dict, default_kind: str) -> Callable[[], Callable]:
    sol = learner.get("solver", {})
    kind = sol.get("kind", default_kind)
    if kind == "exact_threshold":
        return lambda: erm_exact_threshold
    if kind == "grid":
        mesh = sol.get("mesh_per_dim", 21)
        return lambda: IncrementalGridSolver(mesh)
    if kind == "alternating":
        fn = functools.partial(
            erm_alternating,
            restarts=sol.get("restarts", 4),
            max_iters=sol.get("max_iters", 20),
        )
        return lambda: fn
    raise ConfigError(f"unknown solver kind {kind!r}")


def _build_threshold(cfg, adv_cfg, learner) -> BuiltEnvironment:
    e = cfg.env
    lo, hi = e.get("x_lo", 0.0), e.get("x_hi", 1.0)
    if hi <= lo:
        raise ConfigError("environment.x_hi must exceed environment.x_lo")
    theta_star = e.get("theta_star", 0.3)
    flip = e.get("label_flip_prob", 0.1)
    labeler = threshold_labeler(theta_star, flip)
    width = adv_cfg.get("noise_width", 0.5 * (hi - lo))
    probe = _threshold_probe(theta_star, flip)
    default_theta = np.array([0.5 * (lo + hi)])

    def battery():
        return _battery_strategies(
            np.array([lo]),
            np.array([hi]),
            width,
            probe,
            default_theta,
            labeler=labeler,
            payload_dim=1,
            grid_per_dim=adv_cfg.get("grid_per_dim", 33),
        )

    strategies = battery()
    by_kind = {"uniform": 0, "mean_shift": 1, "greedy": 2}
    if adv_cfg["kind"] not in by_kind:
        raise ConfigError("threshold adversaries: uniform | mean_shift | greedy")
    adversary = strategies[by_kind[adv_cfg["kind"]]]
    sigma_dir = adversary.smoothness.sigma_dir
    loss = threshold_environment(lo, hi, sigma_dir=sigma_dir)
    if "iso_alpha_override" in e:
        loss.metric = dataclasses.replace(
            loss.metric, iso_alpha=float(e["iso_alpha_override"])
        )
    env = OnlineEnvironment(
        name="threshold",
        space=loss.space,
        loss=loss,
        adversary=adversary,
        metric=loss.metric,
        gp_base_sampler=lambda rng: np.concatenate(
            [lo + rng.random(1) * (hi - lo), labeler(np.array([0.0]), rng)]
        ),
    )
    B = adversary.smoothness.sup_bound_B
    D = hi - lo

    def tuner(T: int) -> HyperParams:
        if learner.get("tuning", "affine") == "manual":
            return HyperParams(eta=learner["eta"], n=learner["n"], rule_id="manual")
        return tune_affine(T, K=2, d=1, D=D, B=B, A=1.0, a=1.0, sigma_dir=sigma_dir)

    return BuiltEnvironment(
        env=env,
        make_solver=_solver_from_cfg(learner, "exact_threshold"),
        tuner=tuner,
        battery=battery,
        bracket_recipe="affine",
        bracket_K=2,
        link_a=1.0,
        link_A=1.0,
    )


def _build_pwa(cfg, adv_cfg, learner, kind) -> BuiltEnvironment:
    e = cfg.env
    K = e.get("K", 2)
    d = e.get("d", 2)
    c_dim = e.get("c_dim", 1)
    B = e.get("context_bound", 1.0)
    scale = e.get("loss_scale", 0.5)
    target_rng = np.random.default_rng(e.get("target_seed", 7))
    if kind == "polynomial":
        r = e.get("degree_r", 2)
        boundary = TournamentBoundarySpec(
            K=K, context_dim=d, boundary_kind="polynomial", degree_r=r
        )
    elif kind == "pwa_margin":
        boundary = ArgmaxBoundarySpec(
            K=K, context_dim=d, margin_gamma=e.get("margin_gamma", 0.5)
        )
    else:
        boundary = TournamentBoundarySpec(K=K, context_dim=d)
    dc = K * c_dim
    dd = boundary.theta_d_dim
    space = ParamSpace(
        np.concatenate([np.zeros(dc), -np.ones(dd)]),
        np.concatenate([np.ones(dc), np.ones(dd)]),
        dim_continuous=dc,
        dim_discrete=dd,
    )
    mats = [target_rng.uniform(-0.5, 0.5, size=(c_dim, d)) for _ in range(K)]
    offs = [target_rng.uniform(0.25, 0.75, size=c_dim) for _ in range(K)]
    spec = PiecewiseLossSpec(
        boundary=boundary,
        mode_losses=TrackingModeLoss(mats, offs, scale=scale),
        space=space,
        normalize_discrete=(kind != "polynomial"),
        name=kind,
    )
    width = adv_cfg.get("noise_width", B)
    x_lo, x_hi = np.full(d, -B), np.full(d, B)

    def probe(theta: np.ndarray, x_grid: np.ndarray) -> np.ndarray:
        return spec.eval_batch(theta[None, :], x_grid)[0]

    def battery():
        return _battery_strategies(
            x_lo,
            x_hi,
            width,
            probe,
            space.center().coords,
            grid_per_dim=adv_cfg.get("grid_per_dim", 9),
        )

    strategies = battery()
    by_kind = {"uniform": 0, "mean_shift": 1, "greedy": 2}
    if adv_cfg["kind"] not in by_kind:
        raise ConfigError("pwa adversaries: uniform | mean_shift | greedy")
    adversary = strategies[by_kind[adv_cfg["kind"]]]

    if kind == "polynomial":
        smoothness = SmoothnessClass(
            kind="polynomial",
            context_dim=d,
            sup_bound_B=B,
            sigma_poly=e.get("sigma_poly", 0.5),
            degree_r=boundary.degree_r,
        )
    else:
        smoothness = adversary.smoothness
    metric = metric_for(spec, smoothness)
    if "iso_alpha_override" in e:
        metric = dataclasses.replace(metric, iso_alpha=float(e["iso_alpha_override"]))
    spec.metric = metric
    env = OnlineEnvironment(
        name=kind,
        space=space,
        loss=spec,
        adversary=adversary,
        metric=metric,
        gp_base_sampler=lambda rng: x_lo + rng.random(d) * (x_hi - x_lo),
    )
    D = space.l1_diameter_D
    sigma_dir = adversary.smoothness.sigma_dir

    def tuner(T: int) -> HyperParams:
        rule = learner.get("tuning", "manual")
        if rule == "manual":
            return HyperParams(eta=learner["eta"], n=learner["n"], rule_id="manual")
        if rule == "affine":
            return tune_affine(T, K=K, d=d, D=D, B=B, A=1.0, a=1.0, sigma_dir=sigma_dir)
        if rule == "polynomial":
            return tune_polynomial(
                T, K=K, r=boundary.degree_r, d=d, D=D, B=B,
                sigma_poly=smoothness.sigma_poly,
            )
        if rule == "margin":
            return tune_margin(
                T, K=K, A=1.0, a=1.0, d=d, D=D, B=B,
                gamma=boundary.margin_gamma, sigma_dir=sigma_dir,
            )
        raise ConfigError(f"tuning rule {rule!r} does not fit environment {kind!r}")

    return BuiltEnvironment(
        env=env,
        make_solver=_solver_from_cfg(learner, "alternating"),
        tuner=tuner,
        battery=battery,
        bracket_recipe="polynomial" if kind == "polynomial" else "affine",
        bracket_K=K,
        link_a=1.0,
        link_A=1.0,
        pwa_spec=spec,
    )


def _build_planning(cfg, adv_cfg, learner) -> BuiltEnvironment:
    e = cfg.env
    system = planning.two_mode_1d_system(
        H=e.get("H", 2),
        mode_bias=e.get("mode_bias", 0.0),
        noise_width=adv_cfg.get("noise_width", e.get("noise_width", 0.5)),
        plan_bound=e.get("plan_bound", 1.0),
        x1_bound=e.get("x1_bound", 0.0),
        state_clip=e.get("state_clip", 10.0),
        loss_target=np.asarray(e["loss_target"]) if "loss_target" in e else None,
        loss_scale=e.get("loss_scale", 0.25),
        loss_weights=np.asarray(e["loss_weights"]) if "loss_weights" in e else None,
        lipschitz_L=e.get("lipschitz_L", 1.25),
    )
    if adv_cfg["kind"] != "noise":
        raise ConfigError("planning uses the 'noise' adversary kind")
    adversary = planning.planning_adversary(system)
    loss = planning.PlanningLossSpec(system)
    metric = planning.planning_environment_metric(system)
    if "iso_alpha_override" in e:
        metric = dataclasses.replace(metric, iso_alpha=float(e["iso_alpha_override"]))
    loss.metric = metric
    env = OnlineEnvironment(
        name="planning",
        space=system.plan_space(),
        loss=loss,
        adversary=adversary,
        metric=metric,
        gp_base_sampler=lambda rng: adversary.policy(None, rng),
    )

    def tuner(T: int) -> HyperParams:
        if learner.get("tuning", "planning") == "manual":
            return HyperParams(eta=learner["eta"], n=learner["n"], rule_id="manual")
        return tune_planning(
            T,
            d=system.input_dim,
            H=system.H,
            K=system.K,
            D=system.v_bound_D,
            L=system.lipschitz_L,
            gamma=system.margin_gamma,
            sigma_dir=system.sigma_dir,
        )

    return BuiltEnvironment(
        env=env,
        make_solver=_solver_from_cfg(learner, "grid"),
        tuner=tuner,
        battery=lambda: [planning.planning_adversary(system)],
        bracket_recipe=None,
        bracket_K=system.K,
        link_a=1.0,
        link_A=1.0,
        system=system,
    )


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass
class CellResult:
    T: int
    seed: int
    record: RunRecord
    regret: float
    avg_regret: float
    wall_ms: float
    sweep_param: str = ""
    sweep_value: str = ""


def _run_cell(built: BuiltEnvironment, learner: dict, T: int, seed: int) -> CellResult:
    t0 = time.perf_counter()
    hyper = built.tuner(T)
    kind = (
        "gaussian_process"
        if learner["algorithm"] == "lazy_ftpl_gp"
        else "exponential"
    )
    solver = built.make_solver()
    record = run_lazy_ftpl(
        built.env,
        solver,
        kind,
        hyper,
        T,
        seed,
        gp_anchors=learner.get("gp_anchors"),
    )
    reg = compute_regret(record, built.env, built.make_solver())
    wall = (time.perf_counter() - t0) * 1000.0
    return CellResult(T, seed, record, reg.regret, reg.avg_regret, wall)


CSV_COLUMNS = [
    "kind",
    "env",
    "T",
    "n",
    "eta",
    "seed",
    "regret",
    "avg_regret",
    "oracle_calls",
    "mean_stability",
    "wall_ms",
    "sweep_param",
    "sweep_value",
]


def _aggregate_csv(cells: List[CellResult], env_name: str) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for c in cells:
        row = [
            "run",
            env_name,
            str(c.T),
            str(c.record.n),
            _fmt(c.record.eta),
            str(c.seed),
            _fmt(c.regret),
            _fmt(c.avg_regret),
            str(c.record.oracle_call_count),
            _fmt(c.record.mean_stability()),
            _fmt(c.wall_ms),
            c.sweep_param,
            c.sweep_value,
        ]
        lines.append(",".join(row))
    distinct_T = sorted({c.T for c in cells})
    if len(distinct_T) >= 4:
        try:
            fit = fit_regret_exponent([(c.T, c.regret) for c in cells])
            lines.append(
                ",".join(
                    [
                        "slope_fit",
                        env_name,
                        "",
                        "",
                        "",
                        "",
                        _fmt(fit.slope),
                        _fmt(fit.stderr),
                        "",
                        "",
                        "",
                        "",
                        "",
                    ]
                )
            )
        except ValueError:
            pass
    return "\n".join(lines) + "\n"


def _write_outputs(cfg: ExperimentConfig, built, cells, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for c in cells:
        run_dir = os.path.join(out_dir, f"run_T{c.T}_seed{c.seed}")
        os.makedirs(run_dir, exist_ok=True)
        if "json" in cfg.formats:
            _atomic_write(
                os.path.join(run_dir, "record.json"),
                json.dumps(c.record.to_json_dict()),
            )
        if "traj_csv" in cfg.formats and built.system is not None:
            trajs = []
            for t in range(c.record.T):
                theta = c.record.epoch_thetas[c.record.step_epochs[t] - 1]
                x1, xis, etas = planning.unpack_planning_contexts(
                    built.system, c.record.contexts[t][None, :]
                )
                trajs.append(
                    planning.rollout(built.system, theta, x1[0], xis[0], etas[0])
                )
            planning.write_trajectory_csv(
                os.path.join(run_dir, "trajectories.csv"), trajs
            )
    if "csv" in cfg.formats:
        _atomic_write(
            os.path.join(out_dir, "aggregate.csv"),
            _aggregate_csv(cells, built.env.name),
        )


def _execute_cells(
    built: BuiltEnvironment, learner: dict, cells: Sequence[Tuple[int, int]], jobs: int
) -> List[CellResult]:
    if jobs <= 1:
        return [_run_cell(built, learner, T, s) for T, s in cells]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_cell, built, learner, T, s) for T, s in cells]
        return [f.result() for f in futures]


def cmd_run(
    config_path: str,
    out_dir: Optional[str] = None,
    jobs: Optional[int] = None,
    master_seed: Optional[int] = None,
) -> int:
    """Execute every (T, seed) cell of the config; write records and CSV."""
    try:
        cfg = ExperimentConfig.from_file(config_path)
        built = build_environment(cfg)
        seeds = cfg.seeds(master_seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        cells = [(T, s) for T in cfg.horizons for s in seeds]
        results = _execute_cells(
            built, cfg.learner, cells, jobs or os.cpu_count() or 1
        )
        target = out_dir or cfg.out_dir
        _write_outputs(cfg, built, results, target)
        if any(not c.record.valid for c in results):
            print("one or more runs flagged invalid", file=sys.stderr)
            return 1
    except Exception as e:  # runtime failure, not a config problem
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@dataclass
class CheckRow:
    check: str
    detail: str
    estimate: float
    bound: float
    ci_low: float
    ci_high: float
    passed: bool


def _verify_csv(rows: List[CheckRow]) -> str:
    lines = ["check,detail,estimate,bound,ci_low,ci_high,passed"]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.check,
                    r.detail,
                    _fmt(r.estimate),
                    _fmt(r.bound),
                    _fmt(r.ci_low),
                    _fmt(r.ci_high),
                    str(int(r.passed)),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _battery_smoothness(strategies: Sequence[AdversaryStrategy]) -> SmoothnessClass:
    sigma = min(s.smoothness.sigma_dir for s in strategies)
    B = max(s.smoothness.sup_bound_B for s in strategies)
    return SmoothnessClass(
        kind="directional",
        context_dim=strategies[0].smoothness.context_dim,
        sup_bound_B=B,
        sigma_dir=sigma,
    )


def _verify_bracket_rows(cfg, built, v, rng) -> List[CheckRow]:
    strategies = built.battery()
    if built.bracket_recipe is None:
        raise ConfigError("no bracket recipe for this environment kind")
    smooth = _battery_smoothness(strategies)
    if built.bracket_recipe == "polynomial":
        smooth = dataclasses.replace(
            smooth,
            kind="polynomial",
            sigma_poly=cfg.env.get("sigma_poly", 0.5),
            degree_r=cfg.env.get("degree_r", 2),
        )
    eps_field = v.get("epsilon", 0.2)
    eps_list = eps_field if isinstance(eps_field, list) else [eps_field]
    rows = []
    for eps in eps_list:
        bracket = build_generalized_bracket(
            built.env.space,
            built.env.metric,
            smooth,
            eps,
            built.bracket_recipe,
            K=built.bracket_K,
            A=built.link_A,
            a=built.link_a,
        )
        report = verify_bracket(
            bracket,
            strategies,
            n_mc=v.get("n_mc", 2000),
            rng=rng,
            max_cells=v.get("max_cells", 128),
        )
        worst = report.worst
        rows.append(
            CheckRow(
                "bracket",
                f"eps={eps};cells={report.cells_checked}/{report.total_cells}",
                worst.estimate if worst else 0.0,
                eps + 3.0 * (worst.std_error if worst else 0.0),
                0.0,
                0.0,
                report.passed,
            )
        )
    return rows


def _verify_concentration_rows(cfg, built, v, rng) -> List[CheckRow]:
    strategies = built.battery()
    space = built.env.space
    metric = built.env.metric
    n = v.get("n", 200)
    delta = v.get("delta", 0.05)
    n_trials = v.get("n_trials", 200)
    # probe pairs on an axis grid of the box
    P = v.get("n_pairs", 12)
    lo, hi = space.box_lower, space.box_upper
    qs = np.linspace(0.1, 0.9, max(2, int(math.isqrt(P))))
    pts = [lo + q * (hi - lo) for q in qs]
    pairs = [(a, b) for i, a in enumerate(pts) for b in pts[i + 1 :]]
    pairs_a = np.stack([p[0] for p in pairs])
    pairs_b = np.stack([p[1] for p in pairs])
    smooth = _battery_smoothness(strategies)
    bracket_n = 1
    if built.bracket_recipe is not None:
        bracket = build_generalized_bracket(
            space, metric, smooth, 1.0 / max(n, 1), built.bracket_recipe,
            K=built.bracket_K, A=built.link_A, a=built.link_a,
        )
        bracket_n = bracket.count
    rows = []
    for strat in strategies:
        trial = ConcentrationTrial(
            n=n,
            adversary_factory=lambda s=strat: s,
            metric=metric,
            space=space,
            epsilon=1.0 / max(n, 1),
            delta=delta,
            bracket_size=bracket_n,
            n_trials=n_trials,
            pairs_a=pairs_a,
            pairs_b=pairs_b,
        )
        report = check_concentration(trial, rng)
        bound = delta + 3.0 * report.std_error
        rows.append(
            CheckRow(
                "concentration",
                strat.name,
                report.violation_rate,
                bound,
                0.0,
                0.0,
                report.violation_rate <= bound,
            )
        )
    return rows


def _verify_isometry_rows(cfg, built, v, rng) -> List[CheckRow]:
    strategies = built.battery()
    space = built.env.space
    metric = built.env.metric
    n_pairs = v.get("n_pairs", 20)
    n_mc = v.get("n_mc", 4000)
    canon = getattr(built.env.loss, "canonical_coords", lambda c: c)
    rows = []
    for i in range(n_pairs):
        a = canon(space.sample_uniform(rng).coords)
        spread = v.get("pair_spread", 0.25)
        b = canon(
            np.clip(
                a + spread * rng.standard_normal(space.dim_total),
                space.box_lower,
                space.box_upper,
            )
        )
        gap = float(np.sum(np.abs(a - b)))
        bound_core = metric.iso_alpha * gap**metric.iso_beta
        worst_est, worst_se, worst_name = -math.inf, 0.0, ""
        for strat in strategies:
            from .smoothing import RunHistory, sample_context

            hist = RunHistory()
            zs = np.stack(
                [sample_context(strat, hist, rng).z for _ in range(n_mc)]
            )
            vals = metric.eval_batch_fn(a, b, zs)
            est, se = mean_and_se(vals)
            if est > worst_est:
                worst_est, worst_se, worst_name = est, se, strat.name
        bound = bound_core + 3.0 * worst_se
        rows.append(
            CheckRow(
                "isometry",
                f"pair{i}:{worst_name}",
                worst_est,
                bound,
                worst_est - 3 * worst_se,
                worst_est + 3 * worst_se,
                worst_est <= bound,
            )
        )
    return rows


def _verify_modeflip_rows(cfg, built, v, rng) -> List[CheckRow]:
    spec = built.pwa_spec
    if spec is None or not isinstance(spec.boundary, TournamentBoundarySpec):
        raise ConfigError("modeflip verification needs a tournament environment")
    if spec.boundary.boundary_kind != "affine":
        raise ConfigError("modeflip verification needs affine boundaries")
    strategies = built.battery()
    n_pairs = v.get("n_pairs", 20)
    n_mc = v.get("n_mc", 10000)
    rows = []
    for i in range(n_pairs):
        td, td2 = random_unit_pair_blocks(
            spec.boundary, rng, spread=v.get("pair_spread", 0.2)
        )
        gap = float(np.sum(np.abs(td - td2)))
        for strat in strategies:
            est = mode_flip_rate(spec, td, td2, strat, n_mc, rng)
            sigma = strat.smoothness.sigma_dir
            B = strat.smoothness.sup_bound_B
            bound_core = built.link_A * B / (built.link_a * sigma) * gap
            se = math.sqrt(max(est.estimate * (1 - est.estimate), 0.0) / n_mc)
            bound = bound_core + 3.0 * se
            rows.append(
                CheckRow(
                    "modeflip",
                    f"pair{i}:{strat.name}",
                    est.estimate,
                    bound,
                    est.ci_low,
                    est.ci_high,
                    est.estimate <= bound,
                )
            )
    return rows


def cmd_verify(
    config_path: str, which: str, out_dir: Optional[str] = None
) -> int:
    """Run one named validator battery; exit 0 iff every check passes."""
    try:
        cfg = ExperimentConfig.from_file(config_path)
        built = build_environment(cfg)
        if which not in ("bracket", "concentration", "isometry", "modeflip"):
            raise ConfigError(f"unknown validator {which!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        v = cfg.raw.get("verify", {})
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(v.get("seed", 0)))
        )
        fn = {
            "bracket": _verify_bracket_rows,
            "concentration": _verify_concentration_rows,
            "isometry": _verify_isometry_rows,
            "modeflip": _verify_modeflip_rows,
        }[which]
        rows = fn(cfg, built, v, rng)
        target = out_dir or cfg.out_dir
        os.makedirs(target, exist_ok=True)
        _atomic_write(os.path.join(target, f"verify_{which}.csv"), _verify_csv(rows))
        n_fail = sum(not r.passed for r in rows)
        print(f"{which}: {len(rows) - n_fail}/{len(rows)} checks passed")
        return 0 if n_fail == 0 else 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _apply_dotted(raw: dict, path: str, value) -> dict:
    parts = path.split(".")
    out = json.loads(json.dumps(raw))
    node = out
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node = node[p]
    leaf = parts[-1]
    if not isinstance(node, dict) or (
        leaf not in node and leaf not in ("eta", "n", "seeds")
    ):
        raise ConfigError(f"unknown config path {path!r}")
    node[leaf] = value
    return out


def cmd_sweep(
    config_path: str,
    param: str,
    values: Sequence,
    out_dir: Optional[str] = None,
    jobs: Optional[int] = None,
    master_seed: Optional[int] = None,
) -> int:
    """Cross-product runs over a dotted config path; one aggregate CSV."""
    try:
        base = ExperimentConfig.from_file(config_path)
        if not values:
            raise ConfigError("empty sweep value list")
        variants = []
        for val in values:
            raw = _apply_dotted(base.raw, param, val)
            variants.append((val, ExperimentConfig.from_dict(raw)))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        all_cells: List[CellResult] = []
        env_name = ""
        for val, cfg in variants:
            built = build_environment(cfg)
            env_name = built.env.name
            seeds = cfg.seeds(master_seed)
            cells = [(T, s) for T in cfg.horizons for s in seeds]
            results = _execute_cells(
                built, cfg.learner, cells, jobs or os.cpu_count() or 1
            )
            for r in results:
                r.sweep_param = param
                r.sweep_value = json.dumps(val)
            all_cells.extend(results)
        target = out_dir or base.out_dir
        os.makedirs(target, exist_ok=True)
        _atomic_write(
            os.path.join(target, "sweep.csv"), _aggregate_csv(all_cells, env_name)
        )
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="smoothed-ftpl", description="smoothed online learning experiment driver"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "verify", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        if name == "verify":
            p.add_argument(
                "--which",
                required=True,
                choices=["bracket", "concentration", "isometry", "modeflip"],
            )
        if name == "sweep":
            p.add_argument("--param", required=True)
            p.add_argument("--values", required=True, help="comma-separated JSON scalars")
    args = parser.parse_args(argv)
    out = os.environ.get(OUT_ENV_VAR) or args.out
    if args.command == "run":
        return cmd_run(args.config, out_dir=out, jobs=args.jobs, master_seed=args.seed)
    if args.command == "verify":
        return cmd_verify(args.config, args.which, out_dir=out)
    values = []
    for tok in args.values.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            values.append(json.loads(tok))
        except json.JSONDecodeError:
            values.append(tok)
    return cmd_sweep(
        args.config, args.param, values, out_dir=out, jobs=args.jobs,
        master_seed=args.seed,
    )


if __name__ == "__main__":
    sys.exit(main())
