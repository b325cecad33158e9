"""Deterministic single-process simulation of the training pipeline.

Per trainer and minibatch: sample a layered neighborhood, serve remote nodes
from the persistent buffer, poll the (possibly in-flight) replacement
decision, apply it, fetch misses, push metrics to the inference side, and
advance a simulated clock. Inference latency is charged serially in sync
mode and fully overlapped in async mode, where it surfaces only as the gap
between consecutive decisions.

Everything is driven by explicit seeds; two runs of the same config produce
byte-identical reports and traces.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from .buffer import PrefetchBuffer
from .classifier import load_model
from .config import RunConfig, config_hash
from .controller import (
    REPLACE,
    SKIP,
    BaseController,
    Decision,
    DecisionRecord,
    EXPECT_NONE,
    RuntimeMetrics,
    evaluate_previous,
    make_controller,
)
from .graph import (
    Graph,
    PartitionMap,
    generate_graph,
    load_graph,
    make_minibatches,
    partition_graph,
    sample_neighbors,
    split_local_remote,
)
from .llmclient import HttpChatTransport, ScriptTransport
from .traceio import Trace, samples_from_trace

__all__ = [
    "ClockModel",
    "advance_clock",
    "TrainerState",
    "Engine",
    "RunReport",
    "run_training",
    "CollectResult",
    "collect_training_samples",
]


@dataclass(frozen=True)
class ClockModel:
    """Linear cost model of one simulated step, in abstract time units."""

    alpha: float = 1.0  # per sampled node of local compute
    beta: float = 1.0  # per remotely fetched node
    gamma: float = 0.0  # per-minibatch fetch overhead (charged when fetching)
    t_infer: float = 0.0  # one controller consultation

    def t_ddp(self, n_sampled: int) -> float:
        return self.alpha * n_sampled

    def t_comm(self, n_fetched: int) -> float:
        return self.beta * n_fetched + self.gamma if n_fetched > 0 else 0.0


def advance_clock(mode: str, t_ddp: float, t_comm: float, t_infer: float) -> float:
    """Elapsed simulated time of one minibatch.

    sync: the decision is waited for, then fetches run: max(t_ddp, t_infer + t_comm).
    async: compute, fetches and (amortized) inference all overlap: max of the three.
    """
    if mode == "sync":
        return max(t_ddp, t_infer + t_comm)
    if mode == "async":
        return max(t_ddp, t_comm, t_infer)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class TrainerState:
    """Mutable per-trainer simulation state."""

    tid: int
    part: int
    train_nodes: np.ndarray
    buffer: PrefetchBuffer
    controller: BaseController
    rng: np.random.Generator
    partition_nodes: int
    partition_edges: int
    sim_time: float = 0.0
    global_step: int = 0
    seen_remote: set[int] = field(default_factory=set)
    minibatches: list = field(default_factory=list)
    # inference side
    q_r: list[RuntimeMetrics] = field(default_factory=list)
    inflight: dict | None = None  # {decision, ready, basis_step}
    # decision ledger plumbing
    awaiting_pre: DecisionRecord | None = None
    awaiting_post: DecisionRecord | None = None
    records: list[DecisionRecord] = field(default_factory=list)
    last_consumed_step: int | None = None
    gaps: list[tuple[int, int]] = field(default_factory=list)  # (epoch, gap)
    # counters
    consumed: int = 0
    invalid: int = 0
    replace_applied: int = 0
    attempts_skipped: int = 0
    stale_dropped: int = 0
    cleared_on_replace: int = 0
    no_sample_steps: int = 0


@dataclass
class RunReport:
    """Serializable summary of one run; the CSV view carries the per-epoch
    table used for comparisons."""

    config: dict
    config_hash: str
    epochs: list[dict]
    totals: dict
    decisions: dict
    trainers: list[dict]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "epochs": self.epochs,
            "totals": self.totals,
            "decisions": self.decisions,
            "trainers": self.trainers,
        }

    def to_json(self) -> str:
        import json

        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def csv_lines(self) -> list[str]:
        lines = ["epoch,mean_time,pct_hits,comm_volume,replacements,r_mean"]
        for e in self.epochs:
            r_mean = "" if e["r_mean"] is None else f"{e['r_mean']:.4f}"
            lines.append(
                f"{e['epoch']},{e['mean_time']:.6f},{e['pct_hits']:.4f},"
                f"{e['comm_volume']},{e['replacements']},{r_mean}"
            )
        return lines

    def to_csv(self) -> str:
        return "\n".join(self.csv_lines()) + "\n"


def _build_controller(cfg: RunConfig, static_info: dict) -> BaseController:
    kind = cfg.controller
    if kind == "selective":
        return make_controller(
            kind, window=cfg.selective_window, stall_delta=cfg.selective_stall_delta
        )
    if kind == "classifier":
        model = load_model(cfg.classifier_model)
        return make_controller(kind, model=model, finetune_every=cfg.finetune_every)
    if kind == "agent":
        if cfg.agent_endpoint:
            transport = HttpChatTransport(
                cfg.agent_endpoint, model=cfg.agent_model, timeout_s=cfg.http_timeout
            )
        else:
            transport = ScriptTransport.from_file(cfg.agent_script)
        return make_controller(
            kind,
            transport=transport,
            static_info=static_info,
            max_chars=cfg.agent_max_chars,
            ctx_chars=cfg.ctx_chars,
            cot=cfg.cot,
        )
    return make_controller(kind)


class Engine:
    """One simulation run over a fixed graph, partition and controller set."""

    def __init__(
        self,
        cfg: RunConfig,
        graph: Graph | None = None,
        pm: PartitionMap | None = None,
        controllers: list[BaseController] | None = None,
    ) -> None:
        self.cfg = cfg
        if cfg.mode == "sync" and cfg.controller == "never":
            warnings.warn(
                "sync mode with the never controller pays inference latency "
                "on every minibatch without ever replacing; use async or a "
                "replacing controller",
                RuntimeWarning,
                stacklevel=2,
            )
        self.clock = ClockModel(cfg.alpha, cfg.beta, cfg.gamma, cfg.t_infer)
        self.graph = graph or (
            load_graph(cfg.graph_path)
            if cfg.graph_path
            else generate_graph(cfg.num_nodes, cfg.avg_degree, cfg.skew, cfg.seed)
        )
        self.pm = pm or partition_graph(
            self.graph, cfg.num_parts, cfg.partition_strategy
        )
        self.hash = config_hash(cfg)
        self.trace = Trace(config_hash=self.hash)

        n = self.graph.num_nodes
        train_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(3,))
        )
        k = max(1, round(cfg.train_fraction * n))
        global_train = np.sort(train_rng.permutation(n)[:k])

        degs = np.diff(self.graph.offsets)
        self.states: list[TrainerState] = []
        for tid in range(cfg.num_parts):
            owned = self.pm.nodes_of(tid)
            train_t = np.intersect1d(owned, global_train)
            capacity = round(cfg.buffer_pct / 100.0 * (n - len(owned)))
            static_info = {
                "num_nodes": n,
                "num_edges": self.graph.num_edges,
                "partition_nodes": int(len(owned)),
                "partition_edges": int(degs[owned].sum()),
            }
            controller = (
                controllers[tid]
                if controllers is not None
                else _build_controller(cfg, static_info)
            )
            self.states.append(
                TrainerState(
                    tid=tid,
                    part=tid,
                    train_nodes=train_t,
                    buffer=PrefetchBuffer(capacity, cfg.scoring_policy()),
                    controller=controller,
                    rng=np.random.default_rng(
                        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1, tid))
                    ),
                    partition_nodes=static_info["partition_nodes"],
                    partition_edges=static_info["partition_edges"],
                )
            )
        if all(len(t.train_nodes) == 0 for t in self.states):
            raise ValueError("no train nodes on any partition")
        self._epoch_rows: list[dict] = []

    # -- inference side -----------------------------------------------------

    def inference_step(self, t: TrainerState) -> None:
        """Start a consultation if idle and metrics are waiting: drain the
        request queue, decide on the newest snapshot, go busy for t_infer."""
        if t.inflight is not None or not t.q_r:
            return
        basis = t.q_r[-1]
        t.stale_dropped += len(t.q_r) - 1
        t.q_r.clear()
        decision = t.controller.decide(basis)
        latency = self.clock.t_infer
        timeout = self.cfg.decision_timeout
        if timeout is not None and latency > timeout:
            decision = Decision(
                SKIP, EXPECT_NONE, "<decision-timeout>", False, basis.minibatch_index
            )
            latency = timeout
        t.inflight = {
            "decision": decision,
            "ready": t.sim_time + latency,
            "basis_step": basis.minibatch_index,
        }

    def _poll_decision(self, t: TrainerState) -> Decision | None:
        """Non-blocking check of the decision queue; sync mode always waits
        the full latency (charged in the clock), so the decision is ready."""
        if t.inflight is None:
            return None
        if self.cfg.mode == "async" and t.inflight["ready"] > t.sim_time:
            return None
        decision = t.inflight["decision"]
        t.inflight = None  # consumption doubles as the resume notification
        return decision

    # -- trainer side -------------------------------------------------------

    def prefetcher_step(
        self, t: TrainerState, seeds: np.ndarray, epoch: int, step_in_epoch: int
    ) -> dict:
        """One minibatch on one trainer. Returns the per-step accounting row."""
        cfg, clock = self.cfg, self.clock
        step = t.global_step
        step_start = t.sim_time

        sb = sample_neighbors(self.graph, seeds, list(cfg.fanouts), t.rng)
        local, remote = split_local_remote(sb, self.pm, t.part)
        hits = remote & t.buffer.keys()
        pct_hits, no_sample = t.buffer.hit_rate(remote)
        if no_sample:
            t.no_sample_steps += 1
        t.buffer.record_access(hits)
        new_remote = remote - t.seen_remote
        t.seen_remote |= remote
        self.trace.record(
            "sample",
            t.tid,
            epoch,
            step,
            step_start,
            {
                "n_all": len(sb.all_nodes),
                "n_local": len(local),
                "n_remote": len(remote),
                "n_hits": len(hits),
                "n_new_remote": len(new_remote),
            },
        )

        decision = self._poll_decision(t)
        replaced_pct = 0.0
        replacement_fetch = 0
        inserted: set[int] = set()
        if decision is not None:
            t.consumed += 1
            if not decision.valid:
                t.invalid += 1
            if t.last_consumed_step is not None:
                t.gaps.append((epoch, step - t.last_consumed_step))
            t.last_consumed_step = step
            rec = DecisionRecord(trainer=t.tid, decision=decision, applied_step=step)
            t.awaiting_pre = rec
            self.trace.record(
                "decision",
                t.tid,
                epoch,
                step,
                step_start,
                {
                    "action": decision.action,
                    "valid": decision.valid,
                    "expected": decision.expected,
                    "source_minibatch": decision.source_minibatch,
                },
            )
            if decision.action == REPLACE:
                missed_now = remote - t.buffer.keys()
                arr = np.array(sorted(missed_now), dtype=np.int64)
                if len(arr):
                    mult = sb.multiplicity_of(arr)
                    arr = arr[np.lexsort((arr, -mult))]
                stale = t.buffer.stale_set()
                evicted_max = (
                    max(t.buffer.scores[v] for v in stale) if stale else None
                )
                outcome = t.buffer.apply_replacement(arr.tolist())
                if outcome.skipped:
                    t.attempts_skipped += 1
                    rec.attempt_skipped = True
                else:
                    t.replace_applied += 1
                    replaced_pct = outcome.replaced_pct
                    inserted = set(outcome.inserted)
                    replacement_fetch = len(outcome.inserted)
                t.cleared_on_replace += len(t.q_r)
                t.q_r.clear()
                self.trace.record(
                    "replacement",
                    t.tid,
                    epoch,
                    step,
                    step_start,
                    {
                        "skipped": outcome.skipped,
                        "n_evicted": len(outcome.evicted),
                        "n_inserted": len(outcome.inserted),
                        "replaced_pct": replaced_pct,
                        "evicted_max_score": evicted_max,
                        "fill_after": len(t.buffer),
                        "capacity": t.buffer.capacity,
                    },
                )

        if replacement_fetch:
            self.trace.record(
                "fetch",
                t.tid,
                epoch,
                step,
                step_start,
                {"count": replacement_fetch, "reason": "replacement"},
            )
        missed = remote - t.buffer.keys()
        if missed:
            self.trace.record(
                "fetch",
                t.tid,
                epoch,
                step,
                step_start,
                {"count": len(missed), "reason": "miss"},
            )
        comm = replacement_fetch + len(missed)

        t.buffer.decay_unaccessed(hits | inserted)

        m = RuntimeMetrics(
            pct_hits=pct_hits,
            comm_volume=comm,
            nodes_replaced_pct=replaced_pct,
            minibatch_index=step,
            minibatches_remaining=len(t.minibatches) - 1 - step_in_epoch,
            epochs_remaining=cfg.epochs - 1 - epoch,
            num_nodes=self.graph.num_nodes,
            num_edges=self.graph.num_edges,
            partition_nodes=t.partition_nodes,
            partition_edges=t.partition_edges,
        )
        self.trace.record("metrics", t.tid, epoch, step, step_start, m.to_dict())

        if t.awaiting_post is not None:
            evaluate_previous(t.awaiting_post, m)
            t.records.append(t.awaiting_post)
            t.controller.observe_completed(t.awaiting_post)
            t.awaiting_post = None
        if t.awaiting_pre is not None:
            t.awaiting_pre.pre = m
            t.awaiting_post = t.awaiting_pre
            t.awaiting_pre = None

        t.q_r.append(m)
        self.trace.record(
            "request", t.tid, epoch, step, step_start, {"queue_len": len(t.q_r)}
        )
        self.inference_step(t)

        t_ddp = clock.t_ddp(len(sb.all_nodes))
        t_comm = clock.t_comm(comm)
        if cfg.mode == "sync":
            waited = clock.t_infer if decision is not None else 0.0
            elapsed = advance_clock("sync", t_ddp, t_comm, waited)
        else:
            # Overlapped inference never blocks the trainer; its latency is
            # visible only through the decision cadence r.
            elapsed = advance_clock("async", t_ddp, t_comm, 0.0)
        t.sim_time = step_start + elapsed
        t.global_step += 1

        return {
            "pct_hits": pct_hits,
            "comm": comm,
            "n_remote": len(remote),
            "n_new_remote": len(new_remote),
            "elapsed": elapsed,
            "replaced": replacement_fetch > 0,
        }

    def barrier(self, active: list[TrainerState], epoch: int, step: int) -> float:
        """Align active trainers to the slowest one; emit a barrier event."""
        t_max = max(t.sim_time for t in active)
        for t in active:
            t.sim_time = t_max
        self.trace.record(
            "barrier", -1, epoch, step, t_max, {"n_active": len(active)}
        )
        return t_max

    # -- run loop -----------------------------------------------------------

    def run(self) -> RunReport:
        cfg = self.cfg
        for epoch in range(cfg.epochs):
            for t in self.states:
                seed = np.random.SeedSequence(
                    entropy=cfg.seed, spawn_key=(2, epoch, t.tid)
                ).generate_state(1)[0]
                t.minibatches = make_minibatches(
                    t.train_nodes, cfg.batch_size, int(seed)
                )
            n_steps = max(len(t.minibatches) for t in self.states)
            epoch_start = max(t.sim_time for t in self.states)
            rows: list[dict] = []
            consumed_before = {t.tid: t.consumed for t in self.states}
            replaced_before = {t.tid: t.replace_applied for t in self.states}
            for i in range(n_steps):
                active = [t for t in self.states if i < len(t.minibatches)]
                for t in active:
                    rows.append(self.prefetcher_step(t, t.minibatches[i], epoch, i))
                self.barrier(active, epoch, i)
            t_end = max(t.sim_time for t in self.states)
            for t in self.states:
                t.sim_time = t_end
            self.trace.record(
                "epoch-mark",
                -1,
                epoch,
                max(0, n_steps - 1),
                t_end,
                {"epoch": epoch, "epoch_time": t_end - epoch_start},
            )

            gaps = [g for t in self.states for (e, g) in t.gaps if e == epoch]
            remote_total = sum(r["n_remote"] for r in rows)
            self._epoch_rows.append(
                {
                    "epoch": epoch,
                    "epoch_time": t_end - epoch_start,
                    "mean_time": (t_end - epoch_start) / n_steps if n_steps else 0.0,
                    "pct_hits": (
                        sum(r["pct_hits"] for r in rows) / len(rows) if rows else 0.0
                    ),
                    "comm_volume": sum(r["comm"] for r in rows),
                    "replacements": sum(
                        t.replace_applied - replaced_before[t.tid]
                        for t in self.states
                    ),
                    "decisions": sum(
                        t.consumed - consumed_before[t.tid] for t in self.states
                    ),
                    "r_mean": (sum(gaps) / len(gaps)) if gaps else None,
                    "novelty_pct": (
                        100.0 * sum(r["n_new_remote"] for r in rows) / remote_total
                        if remote_total
                        else 0.0
                    ),
                    "steps": n_steps,
                }
            )
        return self._report()

    def _report(self) -> RunReport:
        cfg = self.cfg
        all_gaps = [g for t in self.states for (_, g) in t.gaps]
        records = []
        for t in self.states:
            for r in t.records:
                records.append(
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
        unevaluated = sum(
            (1 if t.awaiting_post is not None else 0)
            + (1 if t.awaiting_pre is not None else 0)
            for t in self.states
        )
        consumed = sum(t.consumed for t in self.states)
        valid = consumed - sum(t.invalid for t in self.states)
        replace_count = sum(
            1 for t in self.states for r in t.records if r.decision.action == REPLACE
        )
        total_comm = sum(e["comm_volume"] for e in self._epoch_rows)
        totals = {
            "total_time": max(t.sim_time for t in self.states),
            "total_comm": total_comm,
            "total_steps": sum(t.global_step for t in self.states),
            "replacements": sum(t.replace_applied for t in self.states),
            "attempts_skipped": sum(t.attempts_skipped for t in self.states),
            "no_sample_steps": sum(t.no_sample_steps for t in self.states),
        }
        if cfg.feature_dim > 0:
            totals["total_comm_bytes"] = total_comm * cfg.feature_dim * 4
        decisions = {
            "consumed": consumed,
            "valid": valid,
            "invalid": sum(t.invalid for t in self.states),
            "replace_applied": sum(t.replace_applied for t in self.states),
            "attempts_skipped": sum(t.attempts_skipped for t in self.states),
            "ledger_replace": replace_count,
            "unevaluated": unevaluated,
            "r_mean_overall": (sum(all_gaps) / len(all_gaps)) if all_gaps else None,
            "stale_dropped": sum(t.stale_dropped for t in self.states),
            "cleared_on_replace": sum(t.cleared_on_replace for t in self.states),
            "records": records,
        }
        trainers = [
            {
                "tid": t.tid,
                "partition_nodes": t.partition_nodes,
                "partition_edges": t.partition_edges,
                "train_nodes": int(len(t.train_nodes)),
                "buffer_capacity": t.buffer.capacity,
                "buffer_fill": len(t.buffer),
                "steps": t.global_step,
                "finetune_steps": getattr(t.controller, "finetune_steps", []),
            }
            for t in self.states
        ]
        return RunReport(
            config=cfg.to_canonical_dict(),
            config_hash=self.hash,
            epochs=self._epoch_rows,
            totals=totals,
            decisions=decisions,
            trainers=trainers,
        )


def run_training(
    cfg: RunConfig,
    graph: Graph | None = None,
    pm: PartitionMap | None = None,
    controllers: list[BaseController] | None = None,
) -> tuple[RunReport, Trace]:
    engine = Engine(cfg, graph=graph, pm=pm, controllers=controllers)
    report = engine.run()
    return report, engine.trace


@dataclass
class CollectResult:
    samples: list
    report: RunReport
    trace: Trace
    low_signal: bool
    offline_cost: float


def collect_training_samples(cfg: RunConfig, graph: Graph | None = None) -> CollectResult:
    """Trace-only labeled-sample collection: training cost zeroed, inference
    instant, fixed controller replacing at every opportunity.

    Yields (#minibatches - 1) samples per trainer; the offline cost is the
    sampling bill S x t_sampling that a supervised pipeline must pay."""
    run_cfg = dataclasses.replace(
        cfg, alpha=0.0, t_infer=0.0, controller="fixed", decision_timeout=None
    )
    report, trace = run_training(run_cfg, graph=graph)
    samples = samples_from_trace(trace)
    labels = {s.label for s in samples}
    low_signal = len(samples) == 0 or len(labels) < 2
    offline_cost = report.totals["total_steps"] * cfg.t_sampling
    return CollectResult(
        samples=samples,
        report=report,
        trace=trace,
        low_signal=low_signal,
        offline_cost=offline_cost,
    )
