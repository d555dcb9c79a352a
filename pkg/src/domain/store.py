"""
ArtifactStore port: where a run's corpora, checkpoints, metrics and reports live.

Artifacts are addressed by slash-separated names relative to the run root
("corpus/train.saltcorp", "checkpoints/slm.saltckpt").  The pipeline never
touches the filesystem directly, which keeps it testable with the in-memory store.
"""

from abc import ABC, abstractmethod


class ArtifactStore(ABC):

    @abstractmethod
    def write_bytes(self, name: str, data: bytes) -> str:
        """Create or replace an artifact.  Returns its location for logging."""
        ...

    @abstractmethod
    def read_bytes(self, name: str) -> bytes:
        """Raise MissingArtifactError (carrying location()) if absent."""
        ...

    @abstractmethod
    def append_text(self, name: str, text: str) -> None:
        """Append UTF-8 text, creating the artifact if needed."""
        ...

    @abstractmethod
    def exists(self, name: str) -> bool:
        ...

    @abstractmethod
    def location(self, name: str) -> str:
        """Human-readable location of `name` (a path, or a pseudo-URL for memory stores)."""
        ...

    def write_text(self, name: str, text: str) -> str:
        return self.write_bytes(name, text.encode("utf-8"))

    def read_text(self, name: str) -> str:
        return self.read_bytes(name).decode("utf-8")
