"""
In-memory ArtifactStore for testing: nothing touches the disk.
"""

from src.domain.errors import MissingArtifactError
from src.domain.store import ArtifactStore


class InMemoryArtifactStore(ArtifactStore):

    def __init__(self):
        self._blobs: dict[str, bytes] = {}

    def write_bytes(self, name: str, data: bytes) -> str:
        self._blobs[name] = bytes(data)
        return self.location(name)

    def read_bytes(self, name: str) -> bytes:
        if name not in self._blobs:
            raise MissingArtifactError(self.location(name))
        return self._blobs[name]

    def append_text(self, name: str, text: str) -> None:
        self._blobs[name] = self._blobs.get(name, b"") + text.encode("utf-8")

    def exists(self, name: str) -> bool:
        return name in self._blobs

    def location(self, name: str) -> str:
        return f"memory://{name}"

    def names(self) -> list[str]:
        return sorted(self._blobs)
