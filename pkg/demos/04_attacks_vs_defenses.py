"""Run all four attacks against the full defense battery on one synthetic
task and compare the min-over-defense test errors.

An attack only counts for how much it raises error against the *best*
defense; each defense refits its detector on the poisoned training set.
"""

import time

import numpy as np

from poisonlab import Dataset, DefenseKind, InfluenceConfig, LossSpec, TrainConfig
from poisonlab import gen_decoys, run_alfa, run_influence, run_kkt, run_minmax, synth_gaussians
from poisonlab.feasible import build_feasible_set
from poisonlab.kkt import decoy_loss_caps
from poisonlab.results import evaluate_against_defenses

lam = 0.1
epsilon = 0.03
p = 0.05
loss = LossSpec.hinge()
cfg = TrainConfig(lam=lam)
train_set, test_set = synth_gaussians(seed=42, n=1200, d=10, mean_separation=3.6)

defenses = [DefenseKind.l2(), DefenseKind.slab(), DefenseKind.loss_defense(lam),
            DefenseKind.svd(), DefenseKind.knn()]

base = evaluate_against_defenses(train_set, Dataset.empty(10), test_set,
                                 defenses, p, loss, cfg)
base_min = min(base.values())
print(f"clean baseline, min over defenses: {base_min:.4f}")
print({k: round(v, 4) for k, v in base.items()})

F = build_feasible_set(train_set, p)
decoys = gen_decoys(train_set, test_set, loss, lam,
                    r_grid=(1, 2, 3, 5, 8), q_grid=(0.05, 0.2, 0.35, 0.5))
print(f"\n{len(decoys)} decoy candidates on the Pareto frontier")


def decoy_F(d):
    caps = decoy_loss_caps(train_set, d.theta_decoy, loss, p)
    return build_feasible_set(train_set, p, decoy=(d.theta_decoy, loss, caps))


runs = {}
t0 = time.time()
runs["influence"] = run_influence(train_set, test_set, epsilon, F,
                                  InfluenceConfig(steps=30), defenses, p,
                                  loss, cfg)
runs["kkt"] = run_kkt(train_set, test_set, epsilon, decoys, decoy_F, T=6,
                      defenses_for_eval=defenses, p=p, loss=loss, config=cfg)
runs["minmax"] = run_minmax(train_set, test_set, epsilon, F, decoys[:3],
                            lam=lam, loss=loss, defenses_for_eval=defenses,
                            p=p, config=cfg)
runs["alfa"] = run_alfa(train_set, test_set, epsilon, F, loss, lam, defenses,
                        p, cfg)

print(f"\nattack results at eps={epsilon:.0%} (total {time.time()-t0:.0f}s):")
print(f"{'attack':>10} | {'min-over-defense':>16} | {'gain (pts)':>10} | per-defense")
for name, res in runs.items():
    gain = 100 * (res.min_over_defense - base_min)
    per = {k: round(v, 3) for k, v in res.per_defense.items()}
    print(f"{name:>10} | {res.min_over_defense:16.4f} | {gain:+10.2f} | {per}")
