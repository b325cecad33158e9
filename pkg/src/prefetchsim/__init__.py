"""Desk-scale simulator of adaptive remote-node prefetching for
distributed GNN training: scored persistent buffers, an asynchronous
trainer/prefetcher/inference pipeline, pluggable replacement controllers,
and reference-free decision evaluation."""

__version__ = "0.1.0"

from .buffer import PrefetchBuffer, ReplacementOutcome, ScoringPolicy
from .classifier import (
    DegenerateDataError,
    LogisticModel,
    MlpModel,
    finetune_classifier,
    fit_classifier,
)
from .config import ConfigError, RunConfig, config_hash
from .controller import (
    ContextWindow,
    Decision,
    DecisionRecord,
    LabeledSample,
    RuntimeMetrics,
    build_prompt,
    comm_pct_change,
    evaluate_previous,
    label_sample,
    make_controller,
    parse_response,
)
from .evalmetrics import (
    CostEstimate,
    CostInputs,
    EvalReport,
    classifier_accuracy,
    compare_runs,
    confidence_interval,
    decision_stats,
    estimate_costs,
    pass_at_1,
)
from .graph import (
    Graph,
    PartitionMap,
    SampleBatch,
    generate_graph,
    load_graph,
    make_minibatches,
    partition_graph,
    sample_neighbors,
    save_graph,
    split_local_remote,
)
from .llmclient import HttpChatTransport, ScriptTransport, TransportError
from .pipeline import (
    ClockModel,
    CollectResult,
    Engine,
    RunReport,
    advance_clock,
    collect_training_samples,
    run_training,
)
from .traceio import (
    Trace,
    TraceEvent,
    check_metrics_derivation,
    export_trace,
    import_trace,
    samples_from_trace,
)
