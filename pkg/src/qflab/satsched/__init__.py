"""Access-aware scheduling over satellite visibility traces."""
from .graph import IDLE, PRIMARY, SECONDARY, RoleAssignment, TraceError, VisibilityGraph, Window, roles_at
from .schedule import (
    MODES,
    ExecutionResult,
    SecureLinks,
    TransferEvent,
    TransferSchedule,
    execute_schedule,
    plan_transfers,
    run_sat_round,
)
from .security import (
    AuthenticationError,
    EavesdropDetected,
    Envelope,
    KeyMaterial,
    open_envelope,
    qkd_establish,
    seal,
)

__all__ = [
    "IDLE", "PRIMARY", "SECONDARY", "RoleAssignment", "TraceError", "VisibilityGraph", "Window",
    "roles_at", "MODES", "ExecutionResult", "SecureLinks", "TransferEvent", "TransferSchedule",
    "execute_schedule", "plan_transfers", "run_sat_round", "AuthenticationError",
    "EavesdropDetected", "Envelope", "KeyMaterial", "open_envelope", "qkd_establish", "seal",
]
