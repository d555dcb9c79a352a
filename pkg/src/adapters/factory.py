import os

from src.domain.metrics import MetricsSink
from src.domain.source import GroundTruthSource
from src.domain.store import ArtifactStore
from src.numcore.rng import Rng


def create_metrics_sink(store: ArtifactStore, name: str, kind: str | None = None,
                        include_timing: bool = True) -> MetricsSink:
    """
    Factory: pick the metrics adapter.

    The kind can be passed explicitly or read from the SALT_METRICS_SINK env
    var. Defaults to "jsonl".
    """
    kind = kind or os.environ.get("SALT_METRICS_SINK", "jsonl")

    if kind == "jsonl":
        from .jsonl_metrics import JsonlMetricsSink

        return JsonlMetricsSink(store, name, include_timing=include_timing)

    if kind == "memory":
        from .memory_metrics import InMemoryMetricsSink

        return InMemoryMetricsSink()

    raise ValueError(f"Unknown metrics sink: {kind!r}")


def create_artifact_store(run_name: str, root: str | None = None, kind: str = "file") -> ArtifactStore:
    """
    Factory: the store for one run, at <root>/<run_name>.

    root defaults to the SALT_OUTPUT_ROOT env var, then "runs".
    """
    if kind == "file":
        from .file_store import FileArtifactStore

        return FileArtifactStore(os.path.join(root or os.environ.get("SALT_OUTPUT_ROOT", "runs"), run_name))

    if kind == "memory":
        from .memory_store import InMemoryArtifactStore

        return InMemoryArtifactStore()

    raise ValueError(f"Unknown artifact store: {kind!r}")


def create_source(kind: str, vocab_size: int, order: int = 1, concentration: float = 1.0,
                  seed: Rng | int = 0) -> GroundTruthSource:
    """Factory: build a synthetic ground-truth source by kind ("markov" or "cycle")."""
    if kind == "markov":
        from .markov_source import make_markov_source

        return make_markov_source(order, vocab_size, concentration, seed)

    if kind == "cycle":
        from .markov_source import cycle_source

        return cycle_source(vocab_size)

    raise ValueError(f"Unknown source kind: {kind!r}")
