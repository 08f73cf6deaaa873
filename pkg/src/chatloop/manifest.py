"""Resumable run state: one manifest JSON file per curriculum run.

The manifest records, per completed iteration, every artifact path plus the
endpoint that generated it and the endpoint the trainer produced.  Run
directories are append-only: resumption re-reads completed iteration
artifacts and never rewrites them.  Manifests contain no wall-clock data, so
two identical stub runs produce byte-identical files.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ManifestError
from .models import SCHEMA_VERSION, dump_json

STATUS_RUNNING = "running"
STATUS_HALTED = "halted"
STATUS_CONVERGED = "converged"
STATUS_COMPLETED = "completed"

MANIFEST_NAME = "run.json"


@dataclass
class IterationRecord:
    iteration: int
    corpus_path: str
    scores_path: str
    chatbot_endpoint: dict[str, Any]
    critic_calls: int = 0
    difficulty_path: str | None = None
    train_path: str | None = None
    easy_rate: float | None = None
    n_easy: int | None = None
    n_difficult: int | None = None
    n_unclassified: int | None = None
    trained_endpoint: dict[str, Any] | None = None
    trainer_detail: str | None = None
    validation: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "corpus_path": self.corpus_path,
            "scores_path": self.scores_path,
            "chatbot_endpoint": self.chatbot_endpoint,
            "critic_calls": self.critic_calls,
            "difficulty_path": self.difficulty_path,
            "train_path": self.train_path,
            "easy_rate": self.easy_rate,
            "n_easy": self.n_easy,
            "n_difficult": self.n_difficult,
            "n_unclassified": self.n_unclassified,
            "trained_endpoint": self.trained_endpoint,
            "trainer_detail": self.trainer_detail,
            "validation": self.validation,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "IterationRecord":
        return cls(
            iteration=int(d["iteration"]),
            corpus_path=str(d["corpus_path"]),
            scores_path=str(d["scores_path"]),
            chatbot_endpoint=dict(d["chatbot_endpoint"]),
            critic_calls=int(d.get("critic_calls", 0)),
            difficulty_path=d.get("difficulty_path"),
            train_path=d.get("train_path"),
            easy_rate=d.get("easy_rate"),
            n_easy=d.get("n_easy"),
            n_difficult=d.get("n_difficult"),
            n_unclassified=d.get("n_unclassified"),
            trained_endpoint=d.get("trained_endpoint"),
            trainer_detail=d.get("trainer_detail"),
            validation=d.get("validation"),
        )


@dataclass
class RunManifest:
    run_id: str
    mode: str
    status: str
    config_snapshot: dict[str, Any]
    initial_endpoint: dict[str, Any]
    dataset_manifest: str | None = None
    iterations: list[IterationRecord] = field(default_factory=list)
    final_train_path: str | None = None
    final_trained_endpoint: dict[str, Any] | None = None
    halt_reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "run_manifest",
            "run_id": self.run_id,
            "mode": self.mode,
            "status": self.status,
            "config_snapshot": self.config_snapshot,
            "initial_endpoint": self.initial_endpoint,
            "dataset_manifest": self.dataset_manifest,
            "iterations": [r.to_dict() for r in self.iterations],
            "final_train_path": self.final_train_path,
            "final_trained_endpoint": self.final_trained_endpoint,
            "halt_reason": self.halt_reason,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "run_manifest":
            raise ManifestError("not a run manifest or unsupported schema version")
        return cls(
            run_id=str(d["run_id"]),
            mode=str(d["mode"]),
            status=str(d["status"]),
            config_snapshot=dict(d["config_snapshot"]),
            initial_endpoint=dict(d["initial_endpoint"]),
            dataset_manifest=d.get("dataset_manifest"),
            iterations=[IterationRecord.from_dict(r) for r in d.get("iterations", [])],
            final_train_path=d.get("final_train_path"),
            final_trained_endpoint=d.get("final_trained_endpoint"),
            halt_reason=d.get("halt_reason"),
        )

    def completed_iterations(self) -> int:
        return len(self.iterations)

    def current_endpoint_dict(self) -> dict[str, Any]:
        """Endpoint that should generate the next iteration's corpus."""
        for record in reversed(self.iterations):
            if record.trained_endpoint is not None:
                return record.trained_endpoint
        return self.initial_endpoint

    def check_contiguous(self) -> None:
        for i, record in enumerate(self.iterations, start=1):
            if record.iteration != i:
                raise ManifestError(f"iteration records not contiguous: found {record.iteration} at position {i}")


def save_manifest(run_dir: str | Path, manifest: RunManifest) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / MANIFEST_NAME
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_json(manifest.to_dict()) + "\n")
    return path


def load_manifest(run_dir: str | Path) -> RunManifest:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"no manifest at {path}")
    with io.open(path, "r", encoding="utf-8") as fh:
        manifest = RunManifest.from_dict(json.load(fh))
    manifest.check_contiguous()
    return manifest


def verify_artifacts(run_dir: str | Path, manifest: RunManifest) -> list[str]:
    """Return a list of manifest paths that are missing on disk."""
    run_dir = Path(run_dir)
    missing = []
    for record in manifest.iterations:
        for rel in (record.corpus_path, record.scores_path, record.difficulty_path, record.train_path):
            if rel and not (run_dir / rel).is_file():
                missing.append(rel)
    if manifest.final_train_path and not (run_dir / manifest.final_train_path).is_file():
        missing.append(manifest.final_train_path)
    return missing
