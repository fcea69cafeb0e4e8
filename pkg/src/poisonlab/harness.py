"""Experiment orchestration: attack x defense grids, transferability sweeps,
timing tables, and deterministic JSON/CSV reports."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .alfa import run_alfa
from .data import Dataset, InputDomain, load_dataset, synth_gaussians, union
from .defenses import ALL_DEFENSES, DefenseKind, defend_and_train
from .feasible import build_feasible_set, collapse_with_duals, verify_collapse
from .influence import InfluenceConfig, run_influence
from .kkt import DecoyParams, decoy_loss_caps, gen_decoys, run_kkt
from .minmax import run_minmax, run_minmax_basic
from .models import (
    LossSpec,
    ModelParams,
    TrainConfig,
    test_error_01,
    train,
    train_sgd_single_pass,
)
from .results import AttackResult, evaluate_against_defenses


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {
        "kind": "synth", "seed": 0, "n": 2000, "d": 20,
        "mean_separation": 4.2, "class_balance": 0.5})
    epsilon: float = 0.03
    p: float = 0.05
    defenses: tuple = ALL_DEFENSES
    attack: str = "none"
    attack_params: dict = field(default_factory=dict)
    lam: float = 0.1
    loss: str = "hinge"
    loss_delta: float = 0.01
    objective: str = "mean"
    optimizer: str = "batch"           # "batch" | "sgd"
    eta0: float = 0.1                  # sgd defender
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 0.5 and self.attack != "none":
            raise ConfigError("epsilon must lie in (0, 0.5]")
        if not 0.0 < self.p < 1.0:
            raise ConfigError("p must lie in (0,1)")
        unknown = set(self.defenses) - set(ALL_DEFENSES)
        if unknown:
            raise ConfigError(f"unknown defenses: {sorted(unknown)}")

    def loss_spec(self) -> LossSpec:
        return LossSpec(self.loss, self.loss_delta)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lam=self.lam, objective=self.objective,
                           eta0=self.eta0, seed=self.seed)

    def defense_kinds(self) -> list[DefenseKind]:
        out = []
        for name in self.defenses:
            if name == "loss":
                out.append(DefenseKind.loss_defense(self.lam, self.loss_spec()))
            else:
                out.append(DefenseKind(name))
        return out

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        return ExperimentConfig(**json.loads(text))


def load_experiment_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds["kind"] == "synth":
        return synth_gaussians(ds["seed"], ds["n"], ds["d"],
                               ds["mean_separation"],
                               ds.get("class_balance", 0.5),
                               n_test=ds.get("n_test"))
    if ds["kind"] == "file":
        domain = InputDomain(ds.get("domain", "reals"))
        tr = load_dataset(ds["train"], ds.get("format", "sparse-text"), domain)
        te = load_dataset(ds["test"], ds.get("format", "sparse-text"), domain)
        return tr, te
    raise ConfigError(f"unknown dataset kind {ds['kind']!r}")


# -- serialization ------------------------------------------------------------

def dataset_to_obj(D: Dataset) -> dict:
    return {"d": D.d, "domain": D.domain.value,
            "points": [[list(map(float, D.X[i])), float(D.y[i]), float(D.w[i])]
                       for i in range(D.n)]}


def dataset_from_obj(obj: dict) -> Dataset:
    pts = obj["points"]
    if not pts:
        return Dataset.empty(obj["d"], InputDomain(obj["domain"]))
    X = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts])
    w = np.array([p[2] for p in pts])
    return Dataset(X, y, w, InputDomain(obj["domain"]))


def decoys_to_obj(decoys: list[DecoyParams]) -> list[dict]:
    return [{"theta": [float(v) for v in d.theta_decoy.theta],
             "gamma": d.gamma, "r": d.r,
             "train_loss_on_clean": d.train_loss_on_clean,
             "test_error": d.test_error,
             "flip_weight": d.flip_weight,
             "clean_model_loss_on_flip": d.clean_model_loss_on_flip}
            for d in decoys]


def decoys_from_obj(objs: list[dict]) -> list[DecoyParams]:
    return [DecoyParams(ModelParams(np.array(o["theta"])), o["gamma"], o["r"],
                        o["train_loss_on_clean"], o["test_error"],
                        o.get("flip_weight", 0.0),
                        o.get("clean_model_loss_on_flip", 0.0))
            for o in objs]


def result_to_obj(cfg: ExperimentConfig, res: AttackResult,
                  defense_reports: list | None = None) -> dict:
    return {
        "config": asdict(cfg) | {"defenses": list(cfg.defenses)},
        "attack": res.attack,
        "dp": dataset_to_obj(res.dp),
        "per_defense": {k: float(v) for k, v in res.per_defense.items()},
        "min_over_defense": res.min_over_defense,
        "defense_reports": defense_reports or [],
        "decoy_provenance": res.decoy_provenance,
        "seed": res.seed,
        "timing": {"seconds": res.seconds},
    }


def write_report(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def write_trace_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        wr.writerows(rows)


# -- commands -----------------------------------------------------------------

def get_or_gen_decoys(cfg: ExperimentConfig, D_c, D_test, params: dict):
    decoy_file = params.get("decoy_file")
    if decoy_file:
        return decoys_from_obj(json.loads(Path(decoy_file).read_text()))
    return gen_decoys(D_c, D_test, cfg.loss_spec(), cfg.lam,
                      r_grid=tuple(params.get("r_grid", (1, 2, 3, 5, 8, 12, 18, 25, 33))),
                      q_grid=tuple(params.get("q_grid", (0.05, 0.2, 0.35, 0.5))),
                      objective=cfg.objective)


def run_attack(cfg: ExperimentConfig, D_c: Dataset, D_test: Dataset) -> AttackResult:
    loss = cfg.loss_spec()
    tc = cfg.train_config()
    kinds = cfg.defense_kinds()
    pr = dict(cfg.attack_params)
    use_lp = D_c.domain is InputDomain.NONNEG_INT
    if cfg.attack == "none":
        started = time.perf_counter()
        dp = Dataset.empty(D_c.d, D_c.domain)
        errs = evaluate_against_defenses(D_c, dp, D_test, kinds, cfg.p, loss, tc)
        res = AttackResult(attack="none", dp=dp, per_defense=errs, seed=cfg.seed)
        res.finalize_min()
        res.seconds = time.perf_counter() - started
        return res
    if cfg.attack == "influence":
        F = build_feasible_set(D_c, cfg.p, use_lp_for_integer_domain=use_lp)
        icfg = InfluenceConfig(
            eta=pr.get("eta"), steps=pr.get("steps", 40),
            delta=pr.get("delta", 0.01),
            concentrated=pr.get("concentrated", True), seed=cfg.seed,
            cg_tol=pr.get("cg_tol", 1e-8),
            round_repeats=pr.get("round_repeats", 3))
        return run_influence(D_c, D_test, cfg.epsilon, F, icfg, kinds, cfg.p,
                             loss, tc)
    if cfg.attack == "kkt":
        decoys = get_or_gen_decoys(cfg, D_c, D_test, pr)

        def F_builder(decoy):
            caps = decoy_loss_caps(D_c, decoy.theta_decoy, loss, cfg.p)
            return build_feasible_set(D_c, cfg.p,
                                      decoy=(decoy.theta_decoy, loss, caps),
                                      use_lp_for_integer_domain=use_lp)

        return run_kkt(D_c, D_test, cfg.epsilon, decoys, F_builder,
                       T=pr.get("T", 6), defenses_for_eval=kinds, p=cfg.p,
                       loss=loss, config=tc,
                       round_repeats=pr.get("round_repeats", 3), seed=cfg.seed)
    if cfg.attack == "minmax":
        F = build_feasible_set(D_c, cfg.p, use_lp_for_integer_domain=use_lp)
        decoys = get_or_gen_decoys(cfg, D_c, D_test, pr)
        return run_minmax(D_c, D_test, cfg.epsilon, F, decoys,
                          tau_loss=pr.get("tau_loss", 0.25),
                          eta=pr.get("eta"), n_burn=pr.get("n_burn"),
                          lam=cfg.lam, loss=loss, defenses_for_eval=kinds,
                          p=cfg.p, config=tc,
                          round_repeats=pr.get("round_repeats", 3),
                          seed=cfg.seed)
    if cfg.attack == "minmax-basic":
        F = build_feasible_set(D_c, cfg.p, use_lp_for_integer_domain=use_lp)
        return run_minmax_basic(D_c, cfg.epsilon, F, eta=pr.get("eta"),
                                n_burn=pr.get("n_burn"), lam=cfg.lam,
                                loss=loss, D_test=D_test,
                                defenses_for_eval=kinds, p=cfg.p, config=tc,
                                round_repeats=pr.get("round_repeats", 3),
                                seed=cfg.seed)
    if cfg.attack == "alfa":
        F = build_feasible_set(D_c, cfg.p, use_lp_for_integer_domain=use_lp)
        return run_alfa(D_c, D_test, cfg.epsilon, F, loss, cfg.lam, kinds,
                        cfg.p, tc, refine=pr.get("refine", True),
                        seed=cfg.seed)
    raise ConfigError(f"unknown attack {cfg.attack!r}")


def cmd_attack(cfg: ExperimentConfig) -> dict:
    D_c, D_test = load_experiment_data(cfg)
    res = run_attack(cfg, D_c, D_test)
    reports = []
    if cfg.defenses:
        _, reports = evaluate_against_defenses(
            D_c, res.dp, D_test, cfg.defense_kinds(), cfg.p, cfg.loss_spec(),
            cfg.train_config(), return_reports=True)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.attack}_seed{cfg.seed}"
    doc = result_to_obj(cfg, res, defense_reports=reports)
    write_report(doc, out / f"{stem}.json")
    write_trace_csv(res.trace, out / f"{stem}_trace.csv")
    return doc


def defender_variant_error(D_c, D_p, D_test, kind, p, loss, tc,
                           optimizer: str) -> float:
    """Defender pipeline with a possibly non-exact optimizer."""
    if optimizer == "batch":
        _, err_fn, _ = defend_and_train(D_c, D_p, kind, p, loss, tc)
        return err_fn(D_test)
    from .defenses import fit_detector, fit_thresholds, sanitize
    D = union(D_c, D_p)
    beta = fit_detector(kind, D)
    tau = fit_thresholds(kind, beta, D, p)
    D_san = sanitize(D, kind, beta, tau)
    theta = train_sgd_single_pass(D_san, loss, tc)
    return test_error_01(theta, D_test)


def cmd_transfer(attack_doc: dict, lambdas=None, optimizers=("batch",),
                 losses=("hinge",), eta0: float = 0.1) -> list[dict]:
    """Replay a stored attack against defender variants; one row per
    (lambda, optimizer, loss, defense)."""
    cfg = ExperimentConfig(**{k: v for k, v in attack_doc["config"].items()})
    D_c, D_test = load_experiment_data(cfg)
    D_p = dataset_from_obj(attack_doc["dp"])
    lambdas = list(lambdas or [cfg.lam])
    rows = []
    for lam in lambdas:
        for opt in optimizers:
            for loss_name in losses:
                loss = LossSpec(loss_name, cfg.loss_delta)
                tc = TrainConfig(lam=lam, objective=cfg.objective, eta0=eta0,
                                 seed=cfg.seed)
                for name in cfg.defenses:
                    kind = (DefenseKind.loss_defense(lam, loss)
                            if name == "loss" else DefenseKind(name))
                    err = defender_variant_error(D_c, D_p, D_test, kind, cfg.p,
                                                 loss, tc, opt)
                    rows.append({"lambda": lam, "optimizer": opt,
                                 "loss": loss_name, "defense": name,
                                 "test_error": err})
    return rows


def cmd_collapse(attack_doc: dict, tol: float = 1e-4) -> dict:
    """Collapse a stored attack to two points and verify by retraining."""
    cfg = ExperimentConfig(**{k: v for k, v in attack_doc["config"].items()})
    D_c, _ = load_experiment_data(cfg)
    D_p = dataset_from_obj(attack_doc["dp"])
    loss = cfg.loss_spec()
    theta, collapsed = collapse_with_duals(D_c, D_p, loss, cfg.lam,
                                           objective="sum")
    ok = verify_collapse(D_c, D_p, collapsed, loss, cfg.lam, tol=tol)
    return {
        "collapsed": dataset_to_obj(collapsed.points),
        "fold_alphas": list(collapsed.fold_alphas),
        "distinct_points": collapsed.points.n,
        "total_weight": collapsed.points.total_weight,
        "source_weight": D_p.total_weight,
        "verified": bool(ok),
        "tol": tol,
    }


def cmd_timing(cfg: ExperimentConfig, attacks: list[str],
               target_error: float) -> list[dict]:
    """Wall-clock to reach a target min-over-defense error, per attack."""
    D_c, D_test = load_experiment_data(cfg)
    rows = []
    for name in sorted(attacks):
        sub = ExperimentConfig(**{**asdict(cfg), "attack": name,
                                  "defenses": tuple(cfg.defenses)})
        res = run_attack(sub, D_c, D_test)
        traj = res.trajectory or [(res.seconds, res.min_over_defense)]
        reached = [t for t, e in traj if e is not None and e >= target_error]
        rows.append({
            "attack": name,
            "seconds_total": res.seconds,
            "target_error": target_error,
            "seconds_to_target": min(reached) if reached else None,
            "reached": bool(reached),
            "final_error": res.min_over_defense,
            "trajectory": [[t, e] for t, e in traj],
        })
    return rows
