"""Reference-free evaluation of replacement decisions plus cost accounting.

A decision passes when the hit-rate movement it predicted actually happened,
up to a dead-band around zero. Decisions that state no expectation (static
baselines, the classifier, invalid replies) are excluded from the rate but
still counted. Uncertainty is an exact binomial confidence interval reported
as signed deltas from the point rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from scipy.stats import beta as _beta

from .controller import (
    EXPECT_DOWN,
    EXPECT_FLAT,
    EXPECT_NONE,
    EXPECT_UP,
    REPLACE,
    DecisionRecord,
)

__all__ = [
    "EvalReport",
    "CostInputs",
    "CostEstimate",
    "observed_direction",
    "records_to_dicts",
    "pass_at_1",
    "confidence_interval",
    "decision_stats",
    "classifier_accuracy",
    "estimate_costs",
    "compare_runs",
]


def observed_direction(delta_pct_hits: float, epsilon: float) -> str:
    """Map a hit-rate delta to the three-way outcome vocabulary; moves inside
    the dead-band count as flat."""
    if delta_pct_hits > epsilon:
        return EXPECT_UP
    if delta_pct_hits < -epsilon:
        return EXPECT_DOWN
    return EXPECT_FLAT


def records_to_dicts(records: list[DecisionRecord]) -> list[dict]:
    """Serialize ledger records into the plain-dict form the evaluators eat."""
    out = []
    for r in records:
        if r.pre is None or r.post is None:
            raise ValueError("record missing pre/post snapshot")
        out.append(
            {
                "trainer": r.trainer,
                "applied_step": r.applied_step,
                "action": r.decision.action,
                "expected": r.decision.expected,
                "valid": r.decision.valid,
                "source_minibatch": r.decision.source_minibatch,
                "attempt_skipped": r.attempt_skipped,
                "pre_pct_hits": r.pre.pct_hits,
                "post_pct_hits": r.post.pct_hits,
                "pre_comm": r.pre.comm_volume,
                "post_comm": r.post.comm_volume,
                "effectiveness": r.effectiveness,
            }
        )
    return out


@dataclass
class EvalReport:
    """Decision-quality summary for one run's ledger."""

    n_records: int
    n_evaluated: int
    n_excluded: int
    passes: int
    pass_at_1: float | None  # percent; None when nothing was evaluable
    ci_low_delta: float | None  # signed offsets from pass_at_1, e.g. (-9, +11)
    ci_high_delta: float | None
    epsilon: float
    valid_pct: float
    invalid_pct: float
    positive_pct: float  # replace share among valid decisions
    negative_pct: float
    r_mean: float | None
    unevaluated: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def confidence_interval(
    successes: int, trials: int, confidence: float = 0.95
) -> tuple[float, float] | None:
    """Exact (Clopper-Pearson) binomial CI for a rate, in percent.

    Endpoints invert the binomial tail probabilities via the beta quantile.
    trials == 0 has no defined interval and returns None.
    """
    if trials == 0:
        return None
    if not 0 <= successes <= trials:
        raise ValueError("successes must be in [0, trials]")
    a = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(
        _beta.ppf(a / 2, successes, trials - successes + 1)
    )
    hi = 1.0 if successes == trials else float(
        _beta.ppf(1 - a / 2, successes + 1, trials - successes)
    )
    return 100.0 * lo, 100.0 * hi


def decision_stats(records: list[dict]) -> dict:
    """Volume, validity split, action split and replacement-interval mean."""
    n = len(records)
    valid = sum(1 for r in records if r["valid"])
    replace = sum(1 for r in records if r["valid"] and r["action"] == REPLACE)
    gaps: list[int] = []
    by_trainer: dict[int, list[int]] = {}
    for r in records:
        by_trainer.setdefault(r["trainer"], []).append(r["applied_step"])
    for steps in by_trainer.values():
        steps.sort()
        gaps.extend(b - a for a, b in zip(steps, steps[1:]))
    return {
        "n": n,
        "valid": valid,
        "invalid": n - valid,
        "valid_pct": 100.0 * valid / n if n else 0.0,
        "invalid_pct": 100.0 * (n - valid) / n if n else 0.0,
        "positive_pct": 100.0 * replace / valid if valid else 0.0,
        "negative_pct": 100.0 * (valid - replace) / valid if valid else 0.0,
        "r_mean": (sum(gaps) / len(gaps)) if gaps else None,
    }


def pass_at_1(
    records: list[dict], epsilon: float = 0.5, unevaluated: int = 0
) -> EvalReport:
    """Score every expectation-stating decision against what the hit rate
    actually did between its bracketing snapshots."""
    for r in records:
        if r.get("pre_pct_hits") is None or r.get("post_pct_hits") is None:
            raise ValueError("record missing pre/post snapshot")
    stats = decision_stats(records)
    evaluable = [r for r in records if r["expected"] != EXPECT_NONE]
    passes = sum(
        1
        for r in evaluable
        if observed_direction(r["post_pct_hits"] - r["pre_pct_hits"], epsilon)
        == r["expected"]
    )
    n_eval = len(evaluable)
    if n_eval:
        rate = 100.0 * passes / n_eval
        lo, hi = confidence_interval(passes, n_eval)
        ci_low_delta, ci_high_delta = lo - rate, hi - rate
    else:
        rate = None
        ci_low_delta = ci_high_delta = None
    return EvalReport(
        n_records=len(records),
        n_evaluated=n_eval,
        n_excluded=len(records) - n_eval,
        passes=passes,
        pass_at_1=rate,
        ci_low_delta=ci_low_delta,
        ci_high_delta=ci_high_delta,
        epsilon=epsilon,
        valid_pct=stats["valid_pct"],
        invalid_pct=stats["invalid_pct"],
        positive_pct=stats["positive_pct"],
        negative_pct=stats["negative_pct"],
        r_mean=stats["r_mean"],
        unevaluated=unevaluated,
    )


def classifier_accuracy(model, samples) -> float:
    """Percent agreement of model predictions with sample labels."""
    import numpy as np

    if not samples:
        raise ValueError("no samples to score")
    x = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return 100.0 * float((model.predict(x) == y).mean())


@dataclass(frozen=True)
class CostInputs:
    """Per-term costs for the supervised-vs-in-context bill comparison.

    s_offline: offline sampled subgraphs used to build the training set.
    m_minibatches/e_epochs: online workload size.
    The remaining terms are unit costs; overlapped pairs combine by max.
    """

    s_offline: int
    m_minibatches: int
    e_epochs: int
    t_sampling: float
    t_train_clf: float
    t_test_clf: float
    t_train_gnn: float
    t_prompt: float
    t_infer_llm: float


@dataclass(frozen=True)
class CostEstimate:
    t_supervised: float
    t_incontext: float
    delta: float
    supervised_exceeds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def estimate_costs(inputs: CostInputs) -> CostEstimate:
    """Total bills: the supervised route pays an offline sampling+fitting
    term the in-context route never incurs; both overlap their online term
    with GNN training."""
    if min(inputs.s_offline, inputs.m_minibatches, inputs.e_epochs) < 0:
        raise ValueError("counts must be >= 0")
    online = inputs.m_minibatches * inputs.e_epochs
    t_sl = inputs.s_offline * (inputs.t_sampling + inputs.t_train_clf) + online * max(
        inputs.t_train_gnn, inputs.t_test_clf
    )
    t_icl = online * max(inputs.t_train_gnn, inputs.t_prompt + inputs.t_infer_llm)
    delta = t_sl - t_icl
    return CostEstimate(
        t_supervised=t_sl,
        t_incontext=t_icl,
        delta=delta,
        supervised_exceeds=delta > 0,
    )


def compare_runs(
    runs: list[tuple[str, dict]], epsilon: float = 0.5
) -> str:
    """CSV across runs: label, controller, mode, mean epoch time, final-epoch
    hit rate, total comm, overall r_mean, and Pass@1 where evaluable."""
    lines = [
        "label,controller,mode,mean_epoch_time,final_pct_hits,total_comm,"
        "r_mean,pass_at_1"
    ]
    for label, report in runs:
        epochs = report["epochs"]
        mean_epoch_time = (
            sum(e["epoch_time"] for e in epochs) / len(epochs) if epochs else 0.0
        )
        final_hits = epochs[-1]["pct_hits"] if epochs else 0.0
        r_mean = report["decisions"].get("r_mean_overall")
        ev = pass_at_1(
            report["decisions"]["records"],
            epsilon,
            unevaluated=report["decisions"].get("unevaluated", 0),
        )
        lines.append(
            ",".join(
                [
                    label,
                    report["config"]["controller"],
                    report["config"]["mode"],
                    f"{mean_epoch_time:.6f}",
                    f"{final_hits:.4f}",
                    str(report["totals"]["total_comm"]),
                    "" if r_mean is None else f"{r_mean:.4f}",
                    "" if ev.pass_at_1 is None else f"{ev.pass_at_1:.4f}",
                ]
            )
        )
    return "\n".join(lines) + "\n"
