"""Contract tests for any ArtifactStore implementation."""

from abc import ABC, abstractmethod

import pytest

from src.domain.errors import MissingArtifactError
from src.domain.store import ArtifactStore


class ArtifactStoreContract(ABC):

    @abstractmethod
    def create_store(self) -> ArtifactStore:
        ...

    def test_missing_artifact_does_not_exist(self):
        store = self.create_store()
        assert store.exists("corpus/train.saltcorp") is False

    def test_write_then_read(self):
        store = self.create_store()
        store.write_bytes("checkpoints/slm.saltckpt", b"\x00\x01abc")
        assert store.exists("checkpoints/slm.saltckpt")
        assert store.read_bytes("checkpoints/slm.saltckpt") == b"\x00\x01abc"

    def test_write_replaces(self):
        store = self.create_store()
        store.write_text("report/metrics.json", "{}")
        store.write_text("report/metrics.json", "[]")
        assert store.read_text("report/metrics.json") == "[]"

    def test_append_creates_then_extends(self):
        store = self.create_store()
        store.append_text("metrics/slm.jsonl", "a\n")
        store.append_text("metrics/slm.jsonl", "b\n")
        assert store.read_text("metrics/slm.jsonl") == "a\nb\n"

    def test_read_missing_raises_with_location(self):
        store = self.create_store()
        with pytest.raises(MissingArtifactError) as info:
            store.read_bytes("selection/scores.csv")
        assert info.value.path == store.location("selection/scores.csv")
        assert isinstance(info.value, FileNotFoundError)

    def test_write_returns_location(self):
        store = self.create_store()
        assert store.write_text("a/b.txt", "x") == store.location("a/b.txt")

    def test_text_is_utf8(self):
        store = self.create_store()
        store.write_text("notes.txt", "ρ=0.25 ω=0.667")
        assert store.read_bytes("notes.txt") == "ρ=0.25 ω=0.667".encode("utf-8")
