"""Low-confidence review queue backed by an append-only event log.

The event log (events.jsonl) is the source of truth; the snapshot file is a
derived convenience that must always equal a replay of the log. Crash-safety
falls out of append-only writes, and auditability falls out of events never
being rewritten. One writer at a time: the HTTP service takes a lock file
while running, and batch enqueueing refuses to touch a locked store.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from .corpus import CorpusManifest
from .fusion import CONFIDENCE_LOW, PredictionRecord

REJECTED_ALL = "rejected_all"

STATUS_PENDING = "pending"
STATUS_RESOLVED = "resolved"

SNAPSHOT_FORMAT = "queue-snapshot/1"


class QueueError(Exception):
    pass


class QueueLockedError(QueueError):
    pass


class AlreadyResolvedError(QueueError):
    pass


class UnknownItemError(QueueError):
    pass


class QueueCorruptError(QueueError):
    pass


@dataclass
class Resolution:
    choice: int | str  # class_id or REJECTED_ALL
    reviewer: str
    timestamp: str

    def to_json(self) -> dict:
        return {"choice": self.choice, "reviewer": self.reviewer, "timestamp": self.timestamp}

    @classmethod
    def from_json(cls, obj: dict) -> "Resolution":
        choice = obj["choice"]
        return cls(choice=choice if choice == REJECTED_ALL else int(choice),
                   reviewer=str(obj["reviewer"]), timestamp=str(obj["timestamp"]))


@dataclass
class ReviewItem:
    item_id: str
    image_id: str
    image_path: str
    top3: list[tuple[int, str, float]]  # (class_id, class_name, probability)
    document: str
    argmax_image: int
    argmax_text: int
    status: str = STATUS_PENDING
    resolution: Resolution | None = None

    def to_json(self) -> dict:
        obj = {
            "item_id": self.item_id,
            "image_id": self.image_id,
            "image_path": self.image_path,
            "top3": [[c, n, p] for c, n, p in self.top3],
            "document": self.document,
            "argmax_image": self.argmax_image,
            "argmax_text": self.argmax_text,
            "status": self.status,
        }
        if self.resolution is not None:
            obj["resolution"] = self.resolution.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ReviewItem":
        return cls(
            item_id=str(obj["item_id"]),
            image_id=str(obj["image_id"]),
            image_path=str(obj["image_path"]),
            top3=[(int(c), str(n), float(p)) for c, n, p in obj["top3"]],
            document=str(obj["document"]),
            argmax_image=int(obj["argmax_image"]),
            argmax_text=int(obj["argmax_text"]),
            status=str(obj.get("status", STATUS_PENDING)),
            resolution=Resolution.from_json(obj["resolution"]) if obj.get("resolution") else None,
        )


@dataclass
class QueueState:
    """In-memory projection of the event log. Items keep enqueue order."""
    items: dict[str, ReviewItem] = field(default_factory=dict)
    n_events: int = 0

    def pending(self) -> list[ReviewItem]:
        return [i for i in self.items.values() if i.status == STATUS_PENDING]

    def resolved(self) -> list[ReviewItem]:
        return [i for i in self.items.values() if i.status == STATUS_RESOLVED]

    def apply(self, event: dict) -> None:
        kind = event.get("event")
        if kind == "enqueue":
            item = ReviewItem.from_json(event["item"])
            if item.item_id not in self.items:
                self.items[item.item_id] = item
        elif kind == "resolve":
            item = self.items.get(str(event["item_id"]))
            if item is None:
                raise QueueCorruptError(f"resolve event for unknown item {event.get('item_id')!r}")
            item.status = STATUS_RESOLVED
            item.resolution = Resolution.from_json(event["resolution"])
        else:
            raise QueueCorruptError(f"unknown event type {kind!r}")

    def to_snapshot(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "n_events": self.n_events,
            "items": [item.to_json() for item in self.items.values()],
        }


def replay_events(events: Iterable[dict]) -> QueueState:
    """Reconstruct queue state purely from an event sequence."""
    state = QueueState()
    for event in events:
        state.apply(event)
        state.n_events += 1
    return state


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class ReviewQueueStore:
    """Directory store: events.jsonl (append-only truth), snapshot.json
    (derived), lock (single-writer guard)."""

    def __init__(self, root: str | Path, take_lock: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.events_path = self.root / "events.jsonl"
        self.snapshot_path = self.root / "snapshot.json"
        self.lock_path = self.root / "lock"
        self._locked_by_me = False
        if take_lock:
            self.acquire_lock()
        self.state = self._load()

    # -- locking -----------------------------------------------------------
    def acquire_lock(self) -> None:
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise QueueLockedError(
                f"queue store {self.root} is locked by another writer "
                f"(pid file {self.lock_path}); stop the running service, or remove "
                f"the lock file if no service is running"
            )
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._locked_by_me = True

    def release_lock(self) -> None:
        if self._locked_by_me:
            self.lock_path.unlink(missing_ok=True)
            self._locked_by_me = False

    def check_writable(self) -> None:
        if self.lock_path.exists() and not self._locked_by_me:
            raise QueueLockedError(
                f"queue store {self.root} is locked by another writer "
                f"(pid file {self.lock_path})"
            )

    # -- persistence -------------------------------------------------------
    def read_events(self) -> list[dict]:
        events = []
        if self.events_path.exists():
            with self.events_path.open("r", encoding="utf-8") as fh:
                for lineno, raw in enumerate(fh, start=1):
                    raw = raw.strip()
                    if not raw:
                        continue
                    try:
                        events.append(json.loads(raw))
                    except json.JSONDecodeError as exc:
                        raise QueueCorruptError(
                            f"{self.events_path}:{lineno}: corrupt event line ({exc.msg}); "
                            f"truncate the file to the last valid line to recover"
                        ) from exc
        return events

    def _load(self) -> QueueState:
        state = replay_events(self.read_events())
        if self.snapshot_path.exists():
            try:
                snap = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise QueueCorruptError(
                    f"snapshot {self.snapshot_path} is corrupt ({exc.msg}); the event log "
                    f"is the source of truth; delete the snapshot and it will be "
                    f"rebuilt by replaying {self.events_path}"
                ) from exc
            if snap != state.to_snapshot():
                raise QueueCorruptError(
                    f"snapshot {self.snapshot_path} does not match a replay of "
                    f"{self.events_path}; refusing to write. Delete the snapshot to "
                    f"rebuild it from the append-only log"
                )
        return state

    def rebuild_snapshot(self) -> None:
        """Recovery path: discard the snapshot and rederive it from the log."""
        self.snapshot_path.unlink(missing_ok=True)
        self.state = replay_events(self.read_events())
        self._write_snapshot()

    def _write_snapshot(self) -> None:
        tmp = self.snapshot_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.state.to_snapshot(), indent=2) + "\n", encoding="utf-8")
        tmp.replace(self.snapshot_path)

    def _append_event(self, event: dict) -> None:
        with self.events_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
        self.state.apply(event)
        self.state.n_events += 1
        self._write_snapshot()

    # -- queue operations --------------------------------------------------
    def enqueue(self, item: ReviewItem) -> bool:
        """Idempotent by item_id; returns True when newly enqueued."""
        if item.item_id in self.state.items:
            return False
        self._append_event({"event": "enqueue", "item": item.to_json()})
        return True

    def resolve(self, item_id: str, choice: int | str, reviewer: str,
                timestamp: str | None = None) -> ReviewItem:
        item = self.state.items.get(item_id)
        if item is None:
            raise UnknownItemError(f"no review item {item_id!r}")
        if item.status == STATUS_RESOLVED:
            raise AlreadyResolvedError(f"item {item_id!r} is already resolved")
        if choice != REJECTED_ALL:
            choice = int(choice)
        resolution = Resolution(choice=choice, reviewer=reviewer,
                                timestamp=timestamp or utc_now_iso())
        self._append_event({"event": "resolve", "item_id": item_id,
                            "resolution": resolution.to_json()})
        return self.state.items[item_id]

    def get(self, item_id: str) -> ReviewItem | None:
        return self.state.items.get(item_id)

    def stats(self) -> dict:
        resolved = self.state.resolved()
        agreed = sum(1 for i in resolved
                     if i.resolution is not None and i.top3
                     and i.resolution.choice == i.top3[0][0])
        return {
            "pending": len(self.state.pending()),
            "resolved": len(resolved),
            "agreement_rate": agreed / len(resolved) if resolved else None,
        }


def queue_low_confidence(
    preds: Iterable[PredictionRecord],
    manifest: CorpusManifest,
    documents: dict[str, str],
    store: ReviewQueueStore,
) -> int:
    """Enqueue one pending ReviewItem per low-confidence prediction.

    Idempotent across reruns (items are keyed by image_id). Requires a
    Top-3-or-wider ranking on every low-confidence record, since the reviewer
    chooses among three candidates.
    """
    store.check_writable()
    paths = {r.image_id: r.path for r in manifest.records}
    enqueued = 0
    for rec in preds:
        if rec.confidence != CONFIDENCE_LOW:
            continue
        if len(rec.top_k) < 3:
            raise QueueError(
                f"prediction for {rec.image_id!r} has top_k of length {len(rec.top_k)}; "
                f"review items need at least 3 candidates"
            )
        if rec.image_id not in paths:
            raise QueueError(f"prediction for unknown image {rec.image_id!r}")
        top3 = [(c, manifest.classes[c] if 0 <= c < len(manifest.classes) else str(c), p)
                for c, p in rec.top_k[:3]]
        item = ReviewItem(
            item_id=rec.image_id,
            image_id=rec.image_id,
            image_path=paths[rec.image_id],
            top3=top3,
            document=documents.get(rec.image_id, ""),
            argmax_image=rec.argmax_image,
            argmax_text=rec.argmax_text,
        )
        enqueued += store.enqueue(item)
    return enqueued
