"""Attack results and the defender-side evaluation grid.

An attack is judged by the minimum test error it forces across all deployed
defenses, each of which refits its detector and thresholds on the combined
clean + poisoned data before training.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, union
from .defenses import DefenseKind, defend_and_train
from .models import LossSpec, TrainConfig


@dataclass
class AttackResult:
    attack: str
    dp: Dataset
    per_defense: dict = field(default_factory=dict)   # defense name -> test error
    min_over_defense: float | None = None
    seconds: float = 0.0
    decoy_provenance: dict | None = None
    seed: int | None = None
    trace: list = field(default_factory=list)         # per-iteration dict rows
    trajectory: list = field(default_factory=list)    # (seconds, error) pairs

    def finalize_min(self):
        if self.per_defense:
            self.min_over_defense = min(self.per_defense.values())
        return self


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("POISONLAB_WORKERS", "1")))
    except ValueError:
        return 1


def evaluate_against_defenses(
    D_c: Dataset,
    D_p: Dataset,
    D_test: Dataset,
    defenses: list[DefenseKind],
    p: float,
    loss: LossSpec,
    config: TrainConfig,
    return_reports: bool = False,
):
    """Test error per defense, each refit on D_c u D_p (the defender's view)."""

    def one(kind: DefenseKind):
        _, err_fn, report = defend_and_train(D_c, D_p, kind, p, loss, config)
        report = dict(report, test_error=err_fn(D_test))
        return kind.kind, report

    workers = worker_count()
    if workers > 1 and len(defenses) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            pairs = list(ex.map(one, defenses))
    else:
        pairs = [one(k) for k in defenses]
    errors = {name: rep["test_error"] for name, rep in pairs}
    if return_reports:
        return errors, [rep for _, rep in pairs]
    return errors


def evaluated_result(attack_name, dp, D_c, D_test, defenses, p, loss, config,
                     started: float, seed=None, decoy_provenance=None,
                     trace=None) -> AttackResult:
    res = AttackResult(attack=attack_name, dp=dp, seed=seed,
                       decoy_provenance=decoy_provenance, trace=trace or [])
    if defenses:
        res.per_defense = evaluate_against_defenses(
            D_c, dp, D_test, defenses, p, loss, config)
        res.finalize_min()
    res.seconds = time.perf_counter() - started
    return res
