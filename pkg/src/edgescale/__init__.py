"""Agent-based multi-dimensional autoscaling on a simulated edge device."""

from .domain import (
    DeviceSpec,
    ServiceConfig,
    ServiceKind,
    Slo,
    free_cores,
    global_fulfillment,
    service_fulfillment,
    slo_fulfillment,
)

__version__ = "0.1.0"

__all__ = [
    "DeviceSpec",
    "ServiceConfig",
    "ServiceKind",
    "Slo",
    "free_cores",
    "global_fulfillment",
    "service_fulfillment",
    "slo_fulfillment",
]
