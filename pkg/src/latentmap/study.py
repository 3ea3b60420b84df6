"""Forced-choice study sessions: scheduling, choice recording, export.

A study is a set of image pairs (two enhanced versions of the same content,
each from a different model).  Every observer sees every pair exactly once,
training pairs first, in a seeded per-observer order with seeded left/right
side assignment balanced within each unordered model pair.  Choices append
to a CSV trial log (the single source of truth); the export tallies the log
into a pairwise choice matrix, excluding training trials.
"""

from __future__ import annotations

import csv
import hashlib
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .comparison import (
    CHOICE_LOG_FIELDS,
    TRAINING_PAIR_PREFIX,
    ChoiceMatrix,
    ChoiceRecord,
)
from .errors import ContractViolation

__all__ = [
    "PairSpec",
    "StudyConfig",
    "ScheduledTrial",
    "StudySession",
    "StudyStore",
    "NotFoundError",
    "ConflictError",
    "EmptyExportError",
]


class NotFoundError(KeyError):
    """Unknown study or session id."""


class ConflictError(RuntimeError):
    """The request races against the session state (stale trial, bad status)."""


class EmptyExportError(ValueError):
    """No scored trials have been recorded yet."""


@dataclass(frozen=True)
class PairSpec:
    """One comparison item: two images of the same content from two models."""

    pair_id: str
    model_a: str
    model_b: str
    image_a: str
    image_b: str

    @property
    def is_training(self) -> bool:
        return self.pair_id.startswith(TRAINING_PAIR_PREFIX)


@dataclass
class StudyConfig:
    study_id: str
    pairs: list[PairSpec]
    training_pairs: list[PairSpec] = field(default_factory=list)
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.training_pairs = [
            p if p.is_training else PairSpec(
                TRAINING_PAIR_PREFIX + p.pair_id, p.model_a, p.model_b, p.image_a, p.image_b
            )
            for p in self.training_pairs
        ]
        ids = [p.pair_id for p in self.pairs + self.training_pairs]
        if len(set(ids)) != len(ids):
            raise ContractViolation("pair ids must be unique within a study")


@dataclass(frozen=True)
class ScheduledTrial:
    index: int
    pair: PairSpec
    left_is_a: bool
    training: bool

    @property
    def left_model(self) -> str:
        return self.pair.model_a if self.left_is_a else self.pair.model_b

    @property
    def right_model(self) -> str:
        return self.pair.model_b if self.left_is_a else self.pair.model_a

    @property
    def left_image(self) -> str:
        return self.pair.image_a if self.left_is_a else self.pair.image_b

    @property
    def right_image(self) -> str:
        return self.pair.image_b if self.left_is_a else self.pair.image_a


@dataclass
class StudySession:
    session_id: str
    study_id: str
    observer_id: str
    schedule: list[ScheduledTrial]
    cursor: int = 0
    status: str = "training"  # training | active | paused | done

    def current(self) -> ScheduledTrial | None:
        if self.cursor >= len(self.schedule):
            return None
        return self.schedule[self.cursor]

    def refresh_status(self) -> None:
        if self.cursor >= len(self.schedule):
            self.status = "done"
        elif self.status != "paused":
            self.status = "training" if self.schedule[self.cursor].training else "active"


def _observer_seed(study_seed: int, observer_id: str) -> int:
    digest = hashlib.sha256(f"{study_seed}:{observer_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def build_schedule(config: StudyConfig, observer_id: str) -> list[ScheduledTrial]:
    """Seeded per-observer schedule: training first, balanced side assignment.

    For each unordered model pair, the left/right assignment across its
    images is balanced to within one trial for this observer.
    """
    rng = np.random.default_rng(_observer_seed(config.seed, observer_id))

    def assign_sides(pairs: list[PairSpec]) -> dict[str, bool]:
        by_models: dict[frozenset, list[PairSpec]] = {}
        for p in pairs:
            by_models.setdefault(frozenset((p.model_a, p.model_b)), []).append(p)
        sides: dict[str, bool] = {}
        for group in by_models.values():
            n = len(group)
            flags = [True] * ((n + 1) // 2) + [False] * (n // 2)
            flags = list(rng.permutation(flags))
            for p, left_is_a in zip(sorted(group, key=lambda q: q.pair_id), flags):
                sides[p.pair_id] = bool(left_is_a)
        return sides

    schedule: list[ScheduledTrial] = []
    for training, block in ((True, config.training_pairs), (False, config.pairs)):
        sides = assign_sides(block)
        order = list(rng.permutation(len(block)))
        for pos in order:
            pair = block[pos]
            schedule.append(
                ScheduledTrial(
                    index=len(schedule),
                    pair=pair,
                    left_is_a=sides[pair.pair_id],
                    training=training,
                )
            )
    return schedule


class StudyStore:
    """In-memory registry of studies and sessions over an append-only CSV log."""

    LOG_FIELDS = CHOICE_LOG_FIELDS + ["response_time_ms"]

    def __init__(self, log_dir: str):
        self.log_dir = log_dir
        os.makedirs(log_dir, exist_ok=True)
        self.studies: dict[str, StudyConfig] = {}
        self.sessions: dict[str, StudySession] = {}
        self._session_counter = 0

    # -- studies ------------------------------------------------------------

    def create_study(self, config: StudyConfig) -> StudyConfig:
        if config.study_id in self.studies:
            raise ConflictError(f"study {config.study_id!r} already exists")
        self.studies[config.study_id] = config
        path = self.log_path(config.study_id)
        if not os.path.exists(path):
            with open(path, "w", newline="") as fh:
                csv.DictWriter(fh, fieldnames=self.LOG_FIELDS).writeheader()
        return config

    def get_study(self, study_id: str) -> StudyConfig:
        try:
            return self.studies[study_id]
        except KeyError:
            raise NotFoundError(f"unknown study {study_id!r}") from None

    def log_path(self, study_id: str) -> str:
        return os.path.join(self.log_dir, f"{study_id}.choices.csv")

    # -- sessions -----------------------------------------------------------

    def create_session(self, observer_id: str, study_id: str) -> StudySession:
        config = self.get_study(study_id)
        self._session_counter += 1
        session = StudySession(
            session_id=f"s{self._session_counter:04d}-{observer_id}",
            study_id=study_id,
            observer_id=observer_id,
            schedule=build_schedule(config, observer_id),
        )
        session.refresh_status()
        self.sessions[session.session_id] = session
        return session

    def get_session(self, session_id: str) -> StudySession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise NotFoundError(f"unknown session {session_id!r}") from None

    def next_trial(self, session_id: str) -> ScheduledTrial | None:
        """The pending trial, or None when the session is finished.  Idempotent."""
        return self.get_session(session_id).current()

    def record_choice(self, session_id: str, trial_index: int, side: str,
                      response_time_ms: float = 0.0) -> ScheduledTrial | None:
        """Append the choice for the current trial and advance the cursor."""
        session = self.get_session(session_id)
        if side not in ("left", "right"):
            raise ContractViolation(f"side must be left or right, got {side!r}")
        if session.status == "paused":
            raise ConflictError("session is paused")
        trial = session.current()
        if trial is None:
            raise ConflictError("session is already finished")
        if trial_index != session.cursor:
            raise ConflictError(
                f"stale trial index {trial_index}; the current trial is {session.cursor}"
            )
        record = ChoiceRecord(
            trial_id=f"{session.session_id}:{trial.index}",
            pair_id=trial.pair.pair_id,
            left_model=trial.left_model,
            right_model=trial.right_model,
            chosen_side=side,
            observer_id=session.observer_id,
            timestamp=time.time(),
        )
        self._append(session.study_id, record, response_time_ms)
        session.cursor += 1
        session.refresh_status()
        return session.current()

    def set_status(self, session_id: str, status: str) -> StudySession:
        session = self.get_session(session_id)
        if status not in ("paused", "active"):
            raise ContractViolation(f"status must be paused or active, got {status!r}")
        if session.status == "done":
            raise ConflictError("a finished session cannot change status")
        if status == "paused":
            session.status = "paused"
        else:
            session.status = "active"
            session.refresh_status()
        return session

    # -- log and export -----------------------------------------------------

    def _append(self, study_id: str, record: ChoiceRecord, response_time_ms: float) -> None:
        with open(self.log_path(study_id), "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.LOG_FIELDS)
            row = {f: getattr(record, f) for f in CHOICE_LOG_FIELDS}
            row["response_time_ms"] = response_time_ms
            writer.writerow(row)

    def read_log(self, study_id: str) -> list[ChoiceRecord]:
        self.get_study(study_id)
        records = []
        with open(self.log_path(study_id), newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    ChoiceRecord(
                        trial_id=row["trial_id"],
                        pair_id=row["pair_id"],
                        left_model=row["left_model"],
                        right_model=row["right_model"],
                        chosen_side=row["chosen_side"],
                        observer_id=row["observer_id"],
                        timestamp=float(row["timestamp"]),
                    )
                )
        return records

    def export_choice_matrix(self, study_id: str) -> ChoiceMatrix:
        """Tally the trial log into a choice matrix; training trials excluded."""
        records = [r for r in self.read_log(study_id) if not r.is_training]
        if not records:
            raise EmptyExportError(f"study {study_id!r} has no scored trials")
        config = self.get_study(study_id)
        models = sorted({p.model_a for p in config.pairs} | {p.model_b for p in config.pairs})
        return ChoiceMatrix.from_records(records, models=models)
