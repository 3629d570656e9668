"""Deterministic exercise range for a fleet-wide controller dead-man's-switch
extortion protocol: simulate it end to end, drive it from scripts or HTTP,
and practice detecting it.
"""

from .audit import AuditFinding, audit_clean, audit_trace
from .deployer import (
    CovertTopology,
    DeployError,
    DeploymentPlan,
    derive_covert_topology,
    dry_run,
    install_switch,
    validate_online,
)
from .detection import (
    Baseline,
    DetectionAlert,
    detect,
    diff_config,
    learn_baseline,
    load_baseline,
    save_baseline,
)
from .ew import ArmReport, DisarmOutcome, EwDevice, RansomTerms
from .fleet import Fleet, build_fleet
from .kernel import RunLimits, ScheduleError, SimKernel, StopReason
from .netfabric import (
    DeliveryOutcome,
    DeliveryResult,
    FlowRecord,
    NetFabric,
    NetMessage,
    ProtocolFunction,
)
from .plc import DeadmanConfig, PlcConfig, PlcDevice, PollAssignment
from .project import ProjectError, ProjectModel, load_project, parse_project, save_project
from .scenario import (
    ScenarioError,
    ScenarioResult,
    ScenarioScript,
    apply_action,
    load_scenario,
    run_scenario,
)
from .trace import TraceLog, TraceRecord, load_trace, parse_trace

__version__ = "0.1.0"

__all__ = [
    "ArmReport", "AuditFinding", "Baseline", "CovertTopology", "DeadmanConfig",
    "DeliveryOutcome", "DeliveryResult", "DeployError", "DeploymentPlan",
    "DetectionAlert", "DisarmOutcome", "EwDevice", "Fleet", "FlowRecord",
    "NetFabric", "NetMessage", "PlcConfig", "PlcDevice", "PollAssignment",
    "ProjectError", "ProjectModel", "ProtocolFunction", "RansomTerms",
    "RunLimits", "ScenarioError", "ScenarioResult", "ScenarioScript",
    "ScheduleError", "SimKernel", "StopReason", "TraceLog", "TraceRecord",
    "apply_action", "audit_clean", "audit_trace", "build_fleet",
    "derive_covert_topology", "detect", "diff_config", "dry_run",
    "install_switch", "learn_baseline", "load_baseline", "load_project",
    "load_scenario", "load_trace", "parse_project", "parse_trace",
    "run_scenario", "save_baseline", "save_project", "validate_online",
]
