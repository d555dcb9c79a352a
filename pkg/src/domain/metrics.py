"""
MetricsSink port: where per-step training records go as they are produced.
"""

from abc import ABC, abstractmethod


class MetricsSink(ABC):
    """
    Port: receive flat JSON-compatible records, one per call.

    The trainer writes a provenance record first and then one record per step;
    the sink must preserve order.
    """

    @abstractmethod
    def write(self, record: dict) -> None:
        ...

    @abstractmethod
    def close(self) -> None:
        """Flush anything buffered.  Further writes are an error."""
        ...
