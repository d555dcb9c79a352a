"""
In-memory MetricsSink for testing.
"""

from src.domain.metrics import MetricsSink


class InMemoryMetricsSink(MetricsSink):

    def __init__(self):
        self.records: list[dict] = []
        self.closed = False

    def write(self, record: dict) -> None:
        if self.closed:
            raise RuntimeError("metrics sink is closed")
        self.records.append(dict(record))

    def close(self) -> None:
        self.closed = True
