"""Replacement controllers and their shared vocabulary.

A controller sees one trainer's runtime metrics and answers a single
question per consultation: refresh the buffer now, or skip. Agent-kind
controllers additionally state which way they expect the hit rate to move,
which is what the reference-free evaluation scores later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierModel, finetune_classifier

__all__ = [
    "REPLACE",
    "SKIP",
    "EXPECT_VOCAB",
    "RuntimeMetrics",
    "Decision",
    "DecisionRecord",
    "LabeledSample",
    "ContextWindow",
    "build_prompt",
    "parse_response",
    "comm_pct_change",
    "evaluate_previous",
    "label_sample",
    "make_controller",
    "decide",
    "CONTROLLER_KINDS",
]

REPLACE = "replace"
SKIP = "skip"

EXPECT_UP = "hits_up"
EXPECT_DOWN = "hits_down"
EXPECT_FLAT = "hits_flat"
EXPECT_NONE = "none"
EXPECT_VOCAB = (EXPECT_UP, EXPECT_DOWN, EXPECT_FLAT)

CONTROLLER_KINDS = ("never", "fixed", "once", "selective", "classifier", "agent")

MALFORMED_NOTE = (
    "Your previous reply was not a single valid JSON decision object and was "
    "treated as skip. Follow the required output format exactly."
)
NO_HISTORY_SENTINEL = "No prior decisions."


@dataclass(frozen=True)
class RuntimeMetrics:
    """Per-minibatch snapshot a controller decides from.

    minibatch_index counts globally per trainer across epochs;
    minibatches_remaining counts steps left in the current epoch after this
    one; epochs_remaining counts full epochs after the current one.
    """

    pct_hits: float
    comm_volume: int
    nodes_replaced_pct: float
    minibatch_index: int
    minibatches_remaining: int
    epochs_remaining: int
    num_nodes: int
    num_edges: int
    partition_nodes: int
    partition_edges: int

    def to_features(self) -> np.ndarray:
        """8-dim feature vector; whole-graph sizes are constant within a run
        and excluded."""
        return np.array(
            [
                self.pct_hits,
                float(self.comm_volume),
                self.nodes_replaced_pct,
                float(self.minibatch_index),
                float(self.minibatches_remaining),
                float(self.epochs_remaining),
                float(self.partition_nodes),
                float(self.partition_edges),
            ],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {
            "pct_hits": self.pct_hits,
            "comm_volume": self.comm_volume,
            "nodes_replaced_pct": self.nodes_replaced_pct,
            "minibatch_index": self.minibatch_index,
            "minibatches_remaining": self.minibatches_remaining,
            "epochs_remaining": self.epochs_remaining,
            "num_nodes": self.num_nodes,
            "num_edges": self.num_edges,
            "partition_nodes": self.partition_nodes,
            "partition_edges": self.partition_edges,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuntimeMetrics":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass
class Decision:
    """One controller verdict. Invalid decisions always resolve to skip."""

    action: str
    expected: str = EXPECT_NONE
    raw_response: str = ""
    valid: bool = True
    source_minibatch: int = -1

    def __post_init__(self) -> None:
        assert self.action in (REPLACE, SKIP)
        assert self.expected in EXPECT_VOCAB + (EXPECT_NONE,)
        if not self.valid:
            assert self.action == SKIP


@dataclass
class DecisionRecord:
    """A decision plus the metric snapshots bracketing its application."""

    trainer: int
    decision: Decision
    applied_step: int
    pre: RuntimeMetrics | None = None
    post: RuntimeMetrics | None = None
    effectiveness: float | None = None
    attempt_skipped: bool = False  # replace verdict but buffer had no stale entry


@dataclass(frozen=True)
class LabeledSample:
    """Supervised training sample: was replacing at this snapshot worth it?"""

    features: tuple[float, ...]
    label: int  # 1 good, 0 bad
    s_prime: float
    trainer: int = -1
    pre_index: int = -1

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "label": self.label,
            "s_prime": self.s_prime,
            "trainer": self.trainer,
            "pre_index": self.pre_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledSample":
        return cls(
            features=tuple(d["features"]),
            label=int(d["label"]),
            s_prime=float(d["s_prime"]),
            trainer=int(d.get("trainer", -1)),
            pre_index=int(d.get("pre_index", -1)),
        )


class ContextWindow:
    """Bounded char-budget history of completed decision records.

    Oldest records are dropped as soon as the serialized form would exceed
    ``max_chars``, so ``len(serialize()) <= max_chars`` holds at all times.
    """

    def __init__(self, max_chars: int = 2000) -> None:
        if max_chars < 1:
            raise ValueError("max_chars must be >= 1")
        self.max_chars = max_chars
        self.records: list[DecisionRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: DecisionRecord) -> None:
        if rec.post is None or rec.effectiveness is None:
            raise ValueError("only completed records enter the context window")
        self.records.append(rec)
        while self.records and len(self.serialize()) > self.max_chars:
            self.records.pop(0)

    def serialize(self) -> str:
        lines = []
        for r in self.records:
            verdict = r.decision.action
            if r.attempt_skipped:
                verdict += " (nothing stale, unchanged)"
            lines.append(
                f"step {r.applied_step}: {verdict} expect={r.decision.expected} "
                f"hits {r.pre.pct_hits:.2f}->{r.post.pct_hits:.2f} "
                f"fetched {r.pre.comm_volume}->{r.post.comm_volume} "
                f"effect {r.effectiveness:+.2f}"
            )
        return "\n".join(lines)


def build_prompt(
    m: RuntimeMetrics,
    ctx: ContextWindow | None,
    static_info: dict | None = None,
    *,
    note: str | None = None,
    cot: bool = False,
    max_chars: int = 6000,
) -> str:
    """Render the decision prompt. Deterministic for identical inputs: fixed
    float formatting, no timestamps. History is trimmed first when over the
    char budget; the output-format instruction always survives."""
    static_info = static_info or {
        "num_nodes": m.num_nodes,
        "num_edges": m.num_edges,
        "partition_nodes": m.partition_nodes,
        "partition_edges": m.partition_edges,
    }

    head = (
        "You manage a fixed-size buffer of remote graph nodes for one trainer "
        "in a distributed GNN training job. Sampled nodes found in the buffer "
        "skip network fetches; misses are fetched remotely. Decide whether to "
        "refresh the buffer now (evict stale entries, admit recently missed "
        "nodes) or keep it as is.\n"
        "Metric meanings:\n"
        "- pct_hits: share of this minibatch's remote samples served from the "
        "buffer (higher is better).\n"
        "- fetched_nodes: remote nodes pulled over the network this minibatch "
        "(lower is better).\n"
        "- replaced_pct: share of buffer slots refreshed by the last "
        "replacement.\n"
        "Refreshing too often wastes bandwidth on churn; too rarely lets the "
        "buffer go stale."
    )
    graph_line = (
        f"Graph: {static_info['num_nodes']} nodes, "
        f"{static_info['num_edges']} edges. This partition owns "
        f"{static_info['partition_nodes']} nodes, "
        f"{static_info['partition_edges']} edges."
    )
    now_line = (
        f"Now (minibatch {m.minibatch_index}): pct_hits={m.pct_hits:.2f}, "
        f"fetched_nodes={m.comm_volume}, replaced_pct={m.nodes_replaced_pct:.2f}."
    )
    remain_line = (
        f"Remaining: {m.minibatches_remaining} minibatches in this epoch, "
        f"{m.epochs_remaining} epochs after it. A refresh too close to the "
        "end cannot pay for itself."
    )
    history = ctx.serialize() if ctx is not None and len(ctx) else ""
    history_block = (
        "Recent decisions and outcomes:\n" + history
        if history
        else NO_HISTORY_SENTINEL
    )
    if cot:
        fmt = (
            "Think step by step about the trade-off, then end your reply with "
            'exactly one JSON object on its own line:\n'
            '{"replace": true|false, "expect": "hits_up"|"hits_down"|"hits_flat"}'
        )
    else:
        fmt = (
            "Reply with exactly one JSON object on one line and no other text:\n"
            '{"replace": true|false, "expect": "hits_up"|"hits_down"|"hits_flat"}'
        )

    parts = [head, graph_line, now_line, remain_line, history_block]
    if note:
        parts.append(note)
    parts.append(fmt)
    prompt = "\n\n".join(parts)

    # Trim history first, then hard-truncate from the front; the format
    # instruction lives at the tail and is never lost.
    while len(prompt) > max_chars and ctx is not None and len(ctx.records):
        ctx.records.pop(0)
        history = ctx.serialize()
        parts[4] = (
            "Recent decisions and outcomes:\n" + history
            if history
            else NO_HISTORY_SENTINEL
        )
        prompt = "\n\n".join(parts)
    if len(prompt) > max_chars:
        prompt = prompt[len(prompt) - max_chars :]
    return prompt


def parse_response(text: str, source_minibatch: int = -1) -> Decision:
    """Extract the first JSON object from a reply and validate it.

    Valid means: a dict with ``replace`` as a strict bool and ``expect`` in
    the three-way vocabulary. Anything else (prose, wrong types, missing
    keys, no JSON at all) yields an invalid decision that resolves to skip.
    """
    decoder = json.JSONDecoder()
    idx = text.find("{")
    obj = None
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
            break
        except ValueError:
            idx = text.find("{", idx + 1)
    if isinstance(obj, dict):
        replace = obj.get("replace")
        expect = obj.get("expect")
        if isinstance(replace, bool) and expect in EXPECT_VOCAB:
            return Decision(
                action=REPLACE if replace else SKIP,
                expected=expect,
                raw_response=text,
                valid=True,
                source_minibatch=source_minibatch,
            )
    return Decision(
        action=SKIP,
        expected=EXPECT_NONE,
        raw_response=text,
        valid=False,
        source_minibatch=source_minibatch,
    )


def comm_pct_change(pre: RuntimeMetrics, post: RuntimeMetrics) -> float:
    """Percent change in fetched-node count between two snapshots.

    Clock coefficients scale out of a ratio, so this doubles as the percent
    change of simulated fetch cost while staying a pure function of the two
    snapshots. A zero-fetch baseline maps to 0 (still zero) or +100 (any
    regression from nothing is fully new cost)."""
    if pre.comm_volume > 0:
        return 100.0 * (post.comm_volume - pre.comm_volume) / pre.comm_volume
    return 0.0 if post.comm_volume == 0 else 100.0


def evaluate_previous(rec: DecisionRecord, post: RuntimeMetrics) -> float:
    """Close out a decision record with its post snapshot; effectiveness is
    the hit-rate delta minus the communication percent change."""
    if rec.pre is None:
        raise ValueError("record has no pre snapshot yet")
    if rec.post is not None:
        raise ValueError("record already evaluated")
    rec.post = post
    rec.effectiveness = (post.pct_hits - rec.pre.pct_hits) - comm_pct_change(
        rec.pre, post
    )
    return rec.effectiveness


def label_sample(pre: RuntimeMetrics, post: RuntimeMetrics) -> LabeledSample:
    """Label the pre snapshot: replacing here is good iff the hit-rate gain
    outweighs the communication change (strict inequality)."""
    if not pre.minibatch_index < post.minibatch_index:
        raise ValueError("pre must precede post")
    s_prime = (post.pct_hits - pre.pct_hits) - comm_pct_change(pre, post)
    return LabeledSample(
        features=tuple(float(x) for x in pre.to_features()),
        label=1 if s_prime > 0 else 0,
        s_prime=s_prime,
        pre_index=pre.minibatch_index,
    )


class BaseController:
    kind = "base"

    def decide(self, m: RuntimeMetrics) -> Decision:
        raise NotImplementedError

    def observe_completed(self, rec: DecisionRecord) -> None:
        """Called when a past decision's post snapshot lands."""


class NeverController(BaseController):
    """Static baseline: the buffer is filled once implicitly never; skip always."""

    kind = "never"

    def decide(self, m: RuntimeMetrics) -> Decision:
        return Decision(SKIP, EXPECT_NONE, "", True, m.minibatch_index)


class FixedController(BaseController):
    """Static baseline: replace at every consultation."""

    kind = "fixed"

    def decide(self, m: RuntimeMetrics) -> Decision:
        return Decision(REPLACE, EXPECT_NONE, "", True, m.minibatch_index)


class OnceController(BaseController):
    """Static baseline: replace on the first consultation only."""

    kind = "once"

    def __init__(self) -> None:
        self._fired = False

    def decide(self, m: RuntimeMetrics) -> Decision:
        if self._fired:
            return Decision(SKIP, EXPECT_NONE, "", True, m.minibatch_index)
        self._fired = True
        return Decision(REPLACE, EXPECT_NONE, "", True, m.minibatch_index)


class SelectiveController(BaseController):
    """Scripted adaptive baseline: replace only when the observed hit rate
    has stalled over a trailing window of consultations."""

    kind = "selective"

    def __init__(self, window: int = 5, stall_delta: float = 0.5) -> None:
        if window < 2:
            raise ValueError("window must be >= 2")
        self.window = window
        self.stall_delta = stall_delta
        self._hits: list[float] = []

    def decide(self, m: RuntimeMetrics) -> Decision:
        self._hits.append(m.pct_hits)
        if len(self._hits) > self.window:
            self._hits.pop(0)
        # Sliding window: keep replacing while the hit rate is flat (or
        # falling), back off as soon as it climbs so fresh entries get a
        # chance to be re-accessed instead of being churned out.
        stalled = (
            len(self._hits) == self.window
            and self._hits[-1] - self._hits[0] < self.stall_delta
        )
        if stalled:
            return Decision(REPLACE, EXPECT_UP, "", True, m.minibatch_index)
        return Decision(SKIP, EXPECT_FLAT, "", True, m.minibatch_index)


class ClassifierController(BaseController):
    """Supervised controller: replace iff the model scores the current
    snapshot as a good replacement point (threshold 0.5). Optionally
    collects online labels and finetunes its head on a fixed cadence."""

    kind = "classifier"

    def __init__(self, model: ClassifierModel, finetune_every: int = 0) -> None:
        self.model = model
        self.finetune_every = finetune_every
        self.finetune_steps: list[int] = []
        self._pending: list[LabeledSample] = []
        self._prev: RuntimeMetrics | None = None

    def decide(self, m: RuntimeMetrics) -> Decision:
        if self._prev is not None and m.minibatch_index > self._prev.minibatch_index:
            self._pending.append(label_sample(self._prev, m))
        self._prev = m
        if (
            self.finetune_every > 0
            and m.minibatch_index > 0
            and m.minibatch_index % self.finetune_every == 0
            and self._pending
        ):
            finetune_classifier(self.model, self._pending)
            self.finetune_steps.append(m.minibatch_index)
            self._pending = []
        p = float(self.model.predict_proba(m.to_features()[None, :])[0])
        action = REPLACE if p >= 0.5 else SKIP
        return Decision(action, EXPECT_NONE, f"p_good={p:.6f}", True, m.minibatch_index)


class AgentController(BaseController):
    """LLM-backed controller: prompt, call the endpoint, parse the verdict.

    Transport failures and malformed replies become invalid skips; the next
    prompt carries a one-shot corrective note (most recent mishap only).
    """

    kind = "agent"

    def __init__(
        self,
        transport,
        static_info: dict | None = None,
        max_chars: int = 6000,
        ctx_chars: int = 2000,
        cot: bool = False,
    ) -> None:
        self.transport = transport
        self.static_info = static_info
        self.ctx = ContextWindow(max_chars=ctx_chars)
        self.max_chars = max_chars
        self.cot = cot
        self._note: str | None = None

    def decide(self, m: RuntimeMetrics) -> Decision:
        prompt = build_prompt(
            m,
            self.ctx,
            self.static_info,
            note=self._note,
            cot=self.cot,
            max_chars=self.max_chars,
        )
        self._note = None
        try:
            reply = self.transport(prompt)
        except Exception as exc:  # unreachable endpoint counts as a response
            d = Decision(
                SKIP, EXPECT_NONE, f"<transport-error: {exc}>", False, m.minibatch_index
            )
            self._note = MALFORMED_NOTE
            return d
        d = parse_response(reply, source_minibatch=m.minibatch_index)
        if not d.valid:
            self._note = MALFORMED_NOTE
        return d

    def observe_completed(self, rec: DecisionRecord) -> None:
        self.ctx.append(rec)


def make_controller(kind: str, **kwargs) -> BaseController:
    """Factory over the pluggable controller kinds."""
    if kind == "never":
        return NeverController()
    if kind == "fixed":
        return FixedController()
    if kind == "once":
        return OnceController()
    if kind == "selective":
        return SelectiveController(
            window=kwargs.get("window", 5),
            stall_delta=kwargs.get("stall_delta", 0.5),
        )
    if kind == "classifier":
        return ClassifierController(
            model=kwargs["model"], finetune_every=kwargs.get("finetune_every", 0)
        )
    if kind == "agent":
        return AgentController(
            transport=kwargs["transport"],
            static_info=kwargs.get("static_info"),
            max_chars=kwargs.get("max_chars", 6000),
            ctx_chars=kwargs.get("ctx_chars", 2000),
            cot=kwargs.get("cot", False),
        )
    raise ValueError(f"unknown controller kind {kind!r}")


def decide(kind: str, m: RuntimeMetrics, **kwargs) -> Decision:
    """One-shot convenience: build a controller of ``kind`` and consult it."""
    return make_controller(kind, **kwargs).decide(m)
