"""
Filesystem ArtifactStore rooted at one run directory.
"""

import logging
import os
from pathlib import Path

from src.domain.errors import MissingArtifactError
from src.domain.store import ArtifactStore

log = logging.getLogger(__name__)


class FileArtifactStore(ArtifactStore):

    def __init__(self, root: str | Path):
        self._root = Path(root)

    @property
    def root(self) -> Path:
        return self._root

    def _path(self, name: str) -> Path:
        if not name or name.startswith("/") or ".." in Path(name).parts:
            raise ValueError(f"artifact names must be relative and stay inside the run root, got {name!r}")
        return self._root / name

    def write_bytes(self, name: str, data: bytes) -> str:
        path = self._path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        log.debug("wrote %s bytes=%d", path, len(data))
        return str(path)

    def read_bytes(self, name: str) -> bytes:
        path = self._path(name)
        if not path.is_file():
            raise MissingArtifactError(str(path))
        return path.read_bytes()

    def append_text(self, name: str, text: str) -> None:
        path = self._path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(text)

    def exists(self, name: str) -> bool:
        return self._path(name).is_file()

    def location(self, name: str) -> str:
        return str(self._path(name))
