"""Transferability: does a fixed attack keep working when the defender's
regularization, optimizer, or loss differ from what the attacker assumed?

Also prints the time-to-target-error table for the attacks on this task.
"""

import json

from poisonlab.harness import ExperimentConfig, cmd_attack, cmd_timing, cmd_transfer

cfg = ExperimentConfig(
    dataset={"kind": "synth", "seed": 9, "n": 800, "d": 8,
             "mean_separation": 3.2, "class_balance": 0.5},
    epsilon=0.03, p=0.05, defenses=("l2", "slab", "loss"),
    attack="kkt",
    attack_params={"r_grid": (1, 3, 8), "q_grid": (0.2, 0.4), "T": 4},
    lam=0.1, output_dir="runs_demo")

doc = cmd_attack(cfg)
print(f"stored attack: min-over-defense error {doc['min_over_defense']:.4f}")

# the attacker assumed lam=0.1; sweep the defender's actual lambda
rows = cmd_transfer(doc, lambdas=[0.01, 0.03, 0.1, 0.3, 0.9])
print("\nlambda sweep (attacker fixed at 0.1):")
print(f"{'lambda':>8} | " + " | ".join(f"{d:>6}" for d in cfg.defenses))
for lam in [0.01, 0.03, 0.1, 0.3, 0.9]:
    errs = {r["defense"]: r["test_error"] for r in rows if r["lambda"] == lam}
    print(f"{lam:8.2f} | " + " | ".join(f"{errs[d]:6.3f}" for d in cfg.defenses))

rows = cmd_transfer(doc, optimizers=("batch", "sgd"), losses=("hinge", "logistic"))
print("\noptimizer / loss swaps:")
for r in rows:
    print(f"  {r['optimizer']:>5} + {r['loss']:>8} | {r['defense']:>5} | "
          f"{r['test_error']:.4f}")

timing = cmd_timing(cfg, ["alfa", "kkt"], target_error=doc["min_over_defense"])
print("\ntime to reach the stored attack's error level:")
for row in timing:
    reach = ("%.1fs" % row["seconds_to_target"]) if row["reached"] else "unreached"
    print(f"  {row['attack']:>5}: {reach}  (total {row['seconds_total']:.1f}s, "
          f"final error {row['final_error']:.4f})")
