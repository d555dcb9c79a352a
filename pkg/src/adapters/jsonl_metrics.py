"""
JSONL MetricsSink: one sorted-key JSON object per line, appended through an ArtifactStore.
"""

import json

from src.domain.metrics import MetricsSink
from src.domain.store import ArtifactStore


class JsonlMetricsSink(MetricsSink):

    def __init__(self, store: ArtifactStore, name: str, include_timing: bool = True):
        self._store = store
        self._name = name
        self._include_timing = include_timing
        self._closed = False
        store.write_text(name, "")   # a rerun starts a fresh file

    @property
    def location(self) -> str:
        return self._store.location(self._name)

    def write(self, record: dict) -> None:
        if self._closed:
            raise RuntimeError(f"metrics sink {self._name} is closed")
        if not self._include_timing:
            record = {k: v for k, v in record.items() if k != "wall_time_s"}
        self._store.append_text(self._name, json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        self._closed = True


def read_jsonl(store: ArtifactStore, name: str) -> list[dict]:
    return [json.loads(line) for line in store.read_text(name).splitlines() if line.strip()]
