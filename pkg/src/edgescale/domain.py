"""Device, service and SLO definitions plus the fulfillment arithmetic.

Everything here is immutable and side-effect free.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union


class DomainError(ValueError):
    """Raised when a value falls outside the domain of an operation."""


class ServiceKind(str, enum.Enum):
    CV = "CV"
    QR = "QR"


STEP_CONTINUOUS = "continuous"
STEP_NOT_ACTIONABLE = "not-actionable"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    value_type: str
    min: float
    max: float
    step: Union[float, str]
    slo_target: Optional[float] = None

    def __post_init__(self):
        if self.value_type not in ("integer", "real"):
            raise DomainError(f"unknown value type {self.value_type!r}")
        if self.min > self.max:
            raise DomainError(f"{self.name}: min {self.min} > max {self.max}")
        if not isinstance(self.step, str):
            if self.step <= 0:
                raise DomainError(f"{self.name}: step must be positive")
            n = (self.max - self.min) / self.step
            if abs(n - round(n)) > 1e-9:
                raise DomainError(f"{self.name}: range is not a multiple of step {self.step}")

    @property
    def actionable(self) -> bool:
        return self.step != STEP_NOT_ACTIONABLE

    @property
    def discrete(self) -> bool:
        return not isinstance(self.step, str)

    def levels(self) -> tuple:
        """Lattice values of a stepped variable, ascending."""
        if not self.discrete:
            raise DomainError(f"{self.name} has no lattice")
        n = int(round((self.max - self.min) / self.step))
        return tuple(int(self.min + i * self.step) for i in range(n + 1))

    def contains(self, value: float) -> bool:
        if self.name == "cores":
            # open at zero; the upper end is policed by the core budget
            return self.min < value <= self.max + 1e-9
        if not (self.min <= value <= self.max):
            return False
        if self.discrete:
            k = (value - self.min) / self.step
            return abs(k - round(k)) < 1e-9
        return True


@dataclass(frozen=True)
class Slo:
    variable: str
    target: float

    def __post_init__(self):
        if not self.target > 0:
            raise DomainError(f"SLO target must be positive, got {self.target}")


@dataclass(frozen=True)
class ServiceSpec:
    kind: ServiceKind
    variables: tuple
    slos: tuple

    def __post_init__(self):
        names = {v.name for v in self.variables}
        for q in self.slos:
            if q.variable not in names:
                raise DomainError(f"SLO references undeclared variable {q.variable!r}")

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise DomainError(f"{self.kind.value} has no variable {name!r}")

    @property
    def has_model(self) -> bool:
        return any(v.name == "model_size" for v in self.variables)


def cv_spec(c_phy: float = 8.0) -> ServiceSpec:
    variables = (
        VariableSpec("quality", "integer", 128, 320, 32, slo_target=288),
        VariableSpec("model_size", "integer", 1, 5, 1, slo_target=3),
        VariableSpec("cores", "real", 0.0, c_phy, STEP_CONTINUOUS),
        VariableSpec("throughput", "integer", 0, 100, STEP_NOT_ACTIONABLE, slo_target=5),
    )
    return ServiceSpec(ServiceKind.CV, variables, _slos(variables))


def qr_spec(c_phy: float = 8.0) -> ServiceSpec:
    variables = (
        VariableSpec("quality", "integer", 300, 1000, 100, slo_target=900),
        VariableSpec("cores", "real", 0.0, c_phy, STEP_CONTINUOUS),
        VariableSpec("throughput", "integer", 0, 100, STEP_NOT_ACTIONABLE, slo_target=60),
    )
    return ServiceSpec(ServiceKind.QR, variables, _slos(variables))


def _slos(variables) -> tuple:
    return tuple(Slo(v.name, v.slo_target) for v in variables if v.slo_target is not None)


def default_specs(c_phy: float = 8.0) -> dict:
    return {ServiceKind.CV: cv_spec(c_phy), ServiceKind.QR: qr_spec(c_phy)}


@dataclass(frozen=True)
class DeviceSpec:
    c_phy: float = 8.0
    ram_mb: float = 8192.0
    service_ids: tuple = (ServiceKind.CV, ServiceKind.QR)

    def __post_init__(self):
        if not self.c_phy > 0:
            raise DomainError("c_phy must be positive")
        if not self.service_ids or len(set(self.service_ids)) != len(self.service_ids):
            raise DomainError("service_ids must be non-empty and unique")


@dataclass(frozen=True)
class ServiceConfig:
    quality: int
    cores: float
    model_size: Optional[int] = None

    def with_(self, **changes) -> "ServiceConfig":
        return replace(self, **changes)

    def values(self) -> dict:
        out = {"quality": self.quality, "cores": self.cores}
        if self.model_size is not None:
            out["model_size"] = self.model_size
        return out


def validate_config(config: ServiceConfig, spec: ServiceSpec) -> None:
    """Raise DomainError when ``config`` leaves the bounds or lattice of ``spec``."""
    if spec.has_model and config.model_size is None:
        raise DomainError(f"{spec.kind.value} requires model_size")
    if not spec.has_model and config.model_size is not None:
        raise DomainError(f"{spec.kind.value} has no model_size")
    for name, value in config.values().items():
        var = spec.variable(name)
        if not var.contains(value):
            raise DomainError(f"{spec.kind.value} {name}={value} outside {var.min}..{var.max} step {var.step}")


def slo_fulfillment(m: float, q: Slo) -> float:
    """Continuous fulfillment of a lower-bound SLO: ``m / target`` capped at 1."""
    if m < 0:
        raise DomainError(f"metric value must be non-negative, got {m}")
    if m <= q.target:
        return m / q.target
    return 1.0


def service_fulfillment(values: Mapping[str, float], spec: ServiceSpec) -> float:
    """Mean fulfillment over the SLOs of one service.

    ``values`` maps variable names to observed values and must hold every
    SLO variable (e.g. ``quality``, ``model_size`` and ``throughput`` for CV).
    """
    total = 0.0
    for q in spec.slos:
        if q.variable not in values or values[q.variable] is None:
            raise DomainError(f"{spec.kind.value}: missing value for SLO variable {q.variable!r}")
        total += slo_fulfillment(values[q.variable], q)
    return total / len(spec.slos)


def global_fulfillment(per_service: Sequence[float]) -> float:
    if len(per_service) == 0:
        raise DomainError("global fulfillment needs at least one service")
    return math.fsum(per_service) / len(per_service)


def free_cores(device: DeviceSpec, allocations: Sequence[float]) -> float:
    return device.c_phy - math.fsum(allocations)
