"""In-process time-series store with sliding-window queries and CSV persistence."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .domain import DomainError, ServiceKind, default_specs

CSV_HEADER = ("timestamp", "service", "quality", "model_size", "cores", "throughput")


class NoDataError(LookupError):
    """The store holds no sample for the requested service and window.

    ``cold`` is True when the service has never been recorded at all, which
    separates a cold start from a query over the wrong time range.
    """

    def __init__(self, message: str, cold: bool):
        super().__init__(message)
        self.cold = cold


@dataclass(frozen=True)
class MetricSample:
    timestamp: float
    service: ServiceKind
    quality: int
    cores: float
    throughput: float
    model_size: Optional[int] = None

    def values(self) -> dict:
        out = {"quality": self.quality, "cores": self.cores, "throughput": self.throughput}
        if self.model_size is not None:
            out["model_size"] = self.model_size
        return out


# window_mean returns the same record shape, with throughput averaged
ServiceSnapshot = MetricSample


def _check_sample(sample: MetricSample) -> None:
    spec = default_specs()[sample.service]
    if not 0.0 <= sample.throughput <= 100.0 or math.isnan(sample.throughput):
        raise DomainError(f"{sample.service.value} throughput {sample.throughput} outside [0, 100]")
    q = spec.variable("quality")
    if not q.min <= sample.quality <= q.max:
        raise DomainError(f"{sample.service.value} quality {sample.quality} outside [{q.min}, {q.max}]")
    if spec.has_model:
        m = spec.variable("model_size")
        if sample.model_size is None or not m.min <= sample.model_size <= m.max:
            raise DomainError(f"{sample.service.value} model_size {sample.model_size} outside [{m.min}, {m.max}]")
    elif sample.model_size is not None:
        raise DomainError(f"{sample.service.value} carries no model_size")
    if not sample.cores > 0:
        raise DomainError(f"{sample.service.value} cores {sample.cores} must be positive")


class TimeSeriesStore:
    """Bounded append-only buffer of samples, one ring per service."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._series: dict = {}

    def __len__(self) -> int:
        return sum(len(s) for s in self._series.values())

    def samples(self, service: Optional[ServiceKind] = None) -> list:
        if service is not None:
            return list(self._series.get(service, ()))
        out = []
        for s in self._series.values():
            out.extend(s)
        return sorted(out, key=lambda x: x.timestamp)

    def record(self, sample: MetricSample) -> None:
        _check_sample(sample)
        series = self._series.setdefault(sample.service, deque(maxlen=self.capacity))
        series.append(sample)

    def extend(self, samples: Iterable[MetricSample]) -> None:
        for s in samples:
            self.record(s)

    def window_mean(self, service: ServiceKind, now: float, window_seconds: float = 5) -> ServiceSnapshot:
        """Average throughput over ``(now - window_seconds, now]``.

        Configuration fields are setpoints, so the latest value in the
        window is reported instead of a mean.
        """
        series = self._series.get(service)
        if not series:
            raise NoDataError(f"no data recorded for {service.value}", cold=True)
        lo = now - window_seconds
        picked = []
        for s in reversed(series):
            if s.timestamp > now:
                continue
            if s.timestamp <= lo:
                break
            picked.append(s)
        if not picked:
            raise NoDataError(f"no {service.value} samples in window ({lo}, {now}]", cold=False)
        latest = picked[0]
        tp = math.fsum(s.throughput for s in picked) / len(picked)
        return MetricSample(
            timestamp=latest.timestamp,
            service=service,
            quality=latest.quality,
            cores=latest.cores,
            throughput=tp,
            model_size=latest.model_size,
        )

    def export_csv(self, path) -> int:
        path = Path(path)
        rows = self.samples()
        try:
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_HEADER)
                for s in rows:
                    w.writerow((
                        repr(float(s.timestamp)),
                        s.service.value,
                        s.quality,
                        "" if s.model_size is None else s.model_size,
                        repr(float(s.cores)),
                        repr(float(s.throughput)),
                    ))
        except OSError as exc:
            raise OSError(f"cannot write samples to {path}: {exc}") from exc
        return len(rows)

    @classmethod
    def import_csv(cls, path, capacity: int = 10_000) -> "TimeSeriesStore":
        path = Path(path)
        store = cls(capacity)
        try:
            with path.open(newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                for row in reader:
                    store.record(MetricSample(
                        timestamp=float(row["timestamp"]),
                        service=ServiceKind(row["service"]),
                        quality=int(row["quality"]),
                        model_size=int(row["model_size"]) if row["model_size"] else None,
                        cores=float(row["cores"]),
                        throughput=float(row["throughput"]),
                    ))
        except OSError as exc:
            raise OSError(f"cannot read samples from {path}: {exc}") from exc
        return store
