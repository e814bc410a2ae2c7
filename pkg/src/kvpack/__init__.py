"""kvpack: multi-GPU KV-cache placement, migration planning and oracles."""

from .baselines import (
    GreedyScheduler,
    LbConfig,
    LoadBalancingScheduler,
    bf_allocate,
    lb_rebalance,
    wf_allocate,
)
from .config import (
    ClusterConfig,
    MigrationConfig,
    RunConfig,
    SchedulerConfig,
    SimConfig,
    WorkloadConfig,
    config_from_dict,
    load_config,
)
from .errors import (
    ConfigError,
    KvPackError,
    NoCategory,
    NotPlaced,
    ParseError,
    RequestTooLarge,
)
from .migration import (
    Boundaries,
    MigrationPlan,
    PendingMove,
    PlannedMove,
    Topology,
    check_budgets,
    consensus_order,
    load_boundaries,
    plan_hybrid,
)
from .model import (
    ClusterState,
    GpuState,
    MultiItemGroup,
    Request,
    SizeClass,
    active_gpu_count,
    classify_gpu,
    classify_request,
    kv_size_at,
    request_weight,
    total_weight,
)
from .oracle import (
    CompetitiveReport,
    OptResult,
    brute_force_bin_pack,
    competitive_check,
    exact_bin_pack,
    opt_lower_bound,
    weight_audit,
)
from .scheduler import (
    EpochResult,
    MellScheduler,
    Move,
    OperationLog,
    PriorityConfig,
    Violation,
    allocation_priority,
    batch_operations,
    migration_priority,
    verify_properties,
)
from .sim import (
    MetricsSeries,
    RunResult,
    compare,
    comparison_table,
    run,
    write_metrics_csv,
    write_summary_json,
)
from .workload import (
    ArrivalRecord,
    LengthDistribution,
    Trace,
    gen_poisson,
    load_trace,
    save_trace,
    scale_trace,
)

__all__ = [
    "ArrivalRecord",
    "Boundaries",
    "ClusterConfig",
    "ClusterState",
    "CompetitiveReport",
    "ConfigError",
    "EpochResult",
    "GpuState",
    "GreedyScheduler",
    "KvPackError",
    "LbConfig",
    "LengthDistribution",
    "LoadBalancingScheduler",
    "MellScheduler",
    "MetricsSeries",
    "MigrationConfig",
    "MigrationPlan",
    "Move",
    "MultiItemGroup",
    "NoCategory",
    "NotPlaced",
    "OperationLog",
    "OptResult",
    "ParseError",
    "PendingMove",
    "PlannedMove",
    "PriorityConfig",
    "Request",
    "RequestTooLarge",
    "RunConfig",
    "RunResult",
    "SchedulerConfig",
    "SimConfig",
    "SizeClass",
    "Topology",
    "Trace",
    "Violation",
    "WorkloadConfig",
    "active_gpu_count",
    "allocation_priority",
    "batch_operations",
    "bf_allocate",
    "brute_force_bin_pack",
    "check_budgets",
    "classify_gpu",
    "classify_request",
    "compare",
    "comparison_table",
    "competitive_check",
    "config_from_dict",
    "consensus_order",
    "exact_bin_pack",
    "gen_poisson",
    "kv_size_at",
    "lb_rebalance",
    "load_boundaries",
    "load_config",
    "load_trace",
    "migration_priority",
    "opt_lower_bound",
    "plan_hybrid",
    "request_weight",
    "run",
    "save_trace",
    "scale_trace",
    "total_weight",
    "verify_properties",
    "weight_audit",
    "wf_allocate",
    "write_metrics_csv",
    "write_summary_json",
]
